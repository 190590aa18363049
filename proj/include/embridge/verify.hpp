#pragma once

#include "embridge/encoder.hpp"
#include "embridge/losses.hpp"

namespace embridge {

/// One gradient-geometry probe of the combined objective at a parameter
/// snapshot. inner(lambda) = ||g_align||^2 + lambda * (g_osr . g_align),
/// with g_align the positive-pair alignment gradient w.r.t. the encoder
/// parameters and g_osr the transported-loss gradient. Bounds follow the
/// per-sample rule ||c_bar_i|| / ||g_T_i|| minimized over the batch; both
/// the full transported-loss gradient and its positive-pair part are
/// reported.
struct TheoremProbe {
  double lambda = 0.0;
  double bound = 0.0;
  double bound_positive_pair = 0.0;
  double align_grad_sq = 0.0;       // ||g_align||^2
  double cross_term = 0.0;          // g_osr . g_align (full)
  double cross_term_positive = 0.0; // positive-pair-only variant
  double inner_product = 0.0;
  double inner_product_positive = 0.0;
  bool lambda_le_bound = false;
  bool satisfied = false;           // inner_product >= -tol
  double fd_max_rel_err = 0.0;      // finite-difference spot check, 0 if off
  int skipped = 0;
};

struct TheoremProbeOptions {
  double tau = 0.07;
  double tol = 1e-8;
  bool fd_check = false;
  int fd_coords = 32;
  double fd_h = 1e-5;
  uint64_t fd_seed = 17;
};

/// Probe at a given lambda; pass lambda < 0 to evaluate at the measured
/// (full-gradient) bound.
TheoremProbe theorem_probe(const Encoder& enc_b, const Mat& obs_b,
                           const Mat& anchors, const Mat& proxies,
                           double lambda, const TheoremProbeOptions& opt);

struct TheoremReport {
  std::vector<TheoremProbe> probes;
  int violations = 0;  // satisfied false while lambda_le_bound
  double min_inner = 0.0;
  double max_fd_rel_err = 0.0;
};

TheoremReport verify_theorem1(const Encoder& enc_b, const Mat& obs_b,
                              const Mat& anchors, const Mat& proxies,
                              const std::vector<double>& lambdas,
                              const TheoremProbeOptions& opt);

/// Random-snapshot harness: fresh random encoders and batches, each probed
/// at its own measured bound.
TheoremReport theorem_random_snapshots(int count, uint64_t seed,
                                       const TheoremProbeOptions& opt);

// ------------------------------------------------------------------ lemma

struct LemmaProbe {
  int dim = 0;
  double lhs = 0.0;    // x . (A^T A y)
  double rhs = 0.0;    // -sqrt(kappa - 1) ||Ay||^2 ||x|| / ||y||
  double margin = 0.0; // lhs - rhs
  double kappa = 0.0;  // condition number of A^T A
};

struct LemmaReport {
  std::vector<LemmaProbe> probes;
  double worst_margin = 0.0;
  bool all_satisfied = false;      // margin >= -1e-10 everywhere
  bool contraction_ok = false;     // ||Px|| <= ||x|| for every projector draw
  double max_contraction_excess = 0.0;
};

/// Orthogonal-gradient inequality trials over random maps plus projector
/// contraction checks (spectral radius of I - vv^T/||v||^2 at most 1).
LemmaReport verify_lemma1(const std::vector<int>& dims, int trials_per_dim,
                          uint64_t seed, double margin_tol = 1e-10);

/// Max over batch rows of |c_bar . grad| / (||c_bar|| ||grad||) where grad
/// is the transported-loss gradient w.r.t. the raw embedding row. Random
/// instance per seed.
double osr_orthogonality_probe(uint64_t seed, double tau);

}  // namespace embridge
