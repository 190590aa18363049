#pragma once

// Reference implementations for the tests, written independently of the
// library internals: plain loops over Eigen types, no shared helpers.
// Frozen expected values in the test files were produced by these.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline double info_nce_ref(const Mat& q, const Mat& k, double tau) {
  const long n = q.rows();
  double total = 0.0;
  for (long i = 0; i < n; ++i) {
    std::vector<double> s(static_cast<size_t>(n));
    double mx = -1e300;
    for (long j = 0; j < n; ++j) {
      s[size_t(j)] = q.row(i).dot(k.row(j)) / tau;
      mx = std::max(mx, s[size_t(j)]);
    }
    double z = 0.0;
    for (long j = 0; j < n; ++j) z += std::exp(s[size_t(j)] - mx);
    total += -(s[size_t(i)] - mx) + std::log(z);
  }
  return total / double(n);
}

inline double sym_info_nce_ref(const Mat& q, const Mat& k, double tau) {
  return 0.5 * (info_nce_ref(q, k, tau) + info_nce_ref(k, q, tau));
}

inline Vec cbar_ref(const Vec& x, const Vec& c, double tau) {
  Vec xu = x / x.norm();
  Vec cu = c / c.norm();
  return (cu - xu * xu.dot(cu)) / (x.norm() * tau);
}

// Frozen transport data computed once at a base point; the loss below
// treats the directions as constants, matching the stop-gradient in the
// library graph.
struct OsrRefSpec {
  Mat dirs;                // one direction per row (rows with keep==0 unused)
  std::vector<char> keep;  // rows that enter the loss
  std::vector<int> kept;   // original indices of kept rows, in order
};

inline OsrRefSpec osr_ref_prepare(const Mat& xb, const Mat& anchors,
                                  double tau, double eps_dir = 1e-6,
                                  double eps_norm = 1e-8) {
  const long n = xb.rows();
  OsrRefSpec s;
  s.dirs = Mat::Zero(n, xb.cols());
  s.keep.assign(size_t(n), 0);
  for (long i = 0; i < n; ++i) {
    Vec d = cbar_ref(xb.row(i).transpose(), anchors.row(i).transpose(), tau);
    if (d.norm() < eps_dir) continue;
    s.dirs.row(i) = d.transpose();
    Vec x = xb.row(i).transpose();
    Vec proj = x - d * (d.dot(x) / d.squaredNorm());
    if (proj.norm() < eps_norm) continue;
    s.keep[size_t(i)] = 1;
    s.kept.push_back(int(i));
  }
  return s;
}

// Transported kept rows at the frozen directions of the spec.
inline Mat osr_ref_transported(const Mat& xb, const OsrRefSpec& spec) {
  const long m = long(spec.kept.size());
  Mat t(m, xb.cols());
  for (long r = 0; r < m; ++r) {
    const long i = spec.kept[size_t(r)];
    Vec x = xb.row(i).transpose();
    Vec d = spec.dirs.row(i).transpose();
    Vec proj = x - d * (d.dot(x) / d.squaredNorm());
    t.row(r) = (proj / proj.norm()).transpose();
  }
  return t;
}

// Forward half: transported kept rows against every proxy, positives at the
// original row index; mean over kept rows.
inline double osr_ref_forward(const Mat& xb, const Mat& proxies,
                              const OsrRefSpec& spec, double tau) {
  const long n = xb.rows();
  const long m = long(spec.kept.size());
  if (m == 0) return 0.0;
  Mat t = osr_ref_transported(xb, spec);
  double fwd = 0.0;
  for (long r = 0; r < m; ++r) {
    const long i = spec.kept[size_t(r)];
    std::vector<double> s(static_cast<size_t>(n));
    double mx = -1e300;
    for (long j = 0; j < n; ++j) {
      s[size_t(j)] = t.row(r).dot(proxies.row(j)) / tau;
      mx = std::max(mx, s[size_t(j)]);
    }
    double z = 0.0;
    for (long j = 0; j < n; ++j) z += std::exp(s[size_t(j)] - mx);
    fwd += -(s[size_t(i)] - mx) + std::log(z);
  }
  return fwd / double(m);
}

// Reverse half: kept proxies against the transported kept rows.
inline double osr_ref_reverse(const Mat& xb, const Mat& proxies,
                              const OsrRefSpec& spec, double tau) {
  const long m = long(spec.kept.size());
  if (m == 0) return 0.0;
  Mat t = osr_ref_transported(xb, spec);
  double rev = 0.0;
  for (long r = 0; r < m; ++r) {
    std::vector<double> s(static_cast<size_t>(m));
    double mx = -1e300;
    for (long j = 0; j < m; ++j) {
      s[size_t(j)] =
          proxies.row(spec.kept[size_t(r)]).dot(t.row(j)) / tau;
      mx = std::max(mx, s[size_t(j)]);
    }
    double z = 0.0;
    for (long j = 0; j < m; ++j) z += std::exp(s[size_t(j)] - mx);
    rev += -(s[size_t(r)] - mx) + std::log(z);
  }
  return rev / double(m);
}

inline double osr_ref_value(const Mat& xb, const Mat& proxies,
                            const OsrRefSpec& spec, double tau) {
  if (spec.kept.empty()) return 0.0;
  return 0.5 * (osr_ref_forward(xb, proxies, spec, tau) +
                osr_ref_reverse(xb, proxies, spec, tau));
}

inline double combined_ref(const Mat& xb, const Mat& anchors,
                           const Mat& proxies, double lambda, double tau) {
  double total = sym_info_nce_ref(xb, anchors, tau);
  if (lambda > 0.0) {
    OsrRefSpec spec = osr_ref_prepare(xb, anchors, tau);
    total += lambda * osr_ref_value(xb, proxies, spec, tau);
  }
  return total;
}

// Central finite differences over every entry of x.
inline Mat fd_grad(const std::function<double(const Mat&)>& f, const Mat& x,
                   double h = 1e-5) {
  Mat g(x.rows(), x.cols());
  Mat xp = x;
  for (long i = 0; i < x.rows(); ++i)
    for (long j = 0; j < x.cols(); ++j) {
      const double keep = xp(i, j);
      xp(i, j) = keep + h;
      const double fp = f(xp);
      xp(i, j) = keep - h;
      const double fm = f(xp);
      xp(i, j) = keep;
      g(i, j) = (fp - fm) / (2.0 * h);
    }
  return g;
}

// 0-based retrieval rank with ties resolved toward lower gallery index.
inline int rank_ref(const std::vector<double>& sims, int truth) {
  int rank = 0;
  for (size_t j = 0; j < sims.size(); ++j) {
    if (int(j) == truth) continue;
    if (sims[j] > sims[size_t(truth)]) ++rank;
    if (sims[j] == sims[size_t(truth)] && int(j) < truth) ++rank;
  }
  return rank;
}

inline double rel_err(const Mat& a, const Mat& b) {
  const double denom = std::max(1.0, std::max(a.norm(), b.norm()));
  return (a - b).norm() / denom;
}

}  // namespace oracle
