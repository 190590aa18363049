#pragma once

#include "embridge/common.hpp"

namespace embridge {

inline constexpr double kEpsNorm = 1e-8;   // below this a vector is degenerate
inline constexpr double kEpsProj = 1e-8;   // projection denominator guard
inline constexpr double kEpsDir = 1e-6;    // anchor-direction degeneracy cut

/// x / ||x||. Throws DegenerateVector when ||x|| < eps_norm.
Vec normalize(const Vec& x, double eps_norm = kEpsNorm);

/// Normalizes each row of a batch.
Mat normalize_rows(const Mat& x, double eps_norm = kEpsNorm);

/// Cosine similarity of two vectors; normalizes internally.
double cosine_sim(const Vec& a, const Vec& b, double eps_norm = kEpsNorm);

/// (I - v v^T / (||v||^2 + eps)) x. The component of the result along v has
/// magnitude at most eps * ||x|| / ||v||.
Vec project_orthogonal(const Vec& x, const Vec& v, double eps = kEpsProj);

}  // namespace embridge
