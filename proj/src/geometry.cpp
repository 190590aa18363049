#include "embridge/geometry.hpp"

#include <cstdio>

namespace embridge {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Vec normalize(const Vec& x, double eps_norm) {
  double n = x.norm();
  if (n < eps_norm)
    throw DegenerateVector("normalize: input norm " + std::to_string(n) +
                           " below " + std::to_string(eps_norm));
  return x / n;
}

Mat normalize_rows(const Mat& x, double eps_norm) {
  Mat out(x.rows(), x.cols());
  for (long i = 0; i < x.rows(); ++i)
    out.row(i) = normalize(Vec(x.row(i)), eps_norm).transpose();
  return out;
}

double cosine_sim(const Vec& a, const Vec& b, double eps_norm) {
  return normalize(a, eps_norm).dot(normalize(b, eps_norm));
}

Vec project_orthogonal(const Vec& x, const Vec& v, double eps) {
  require_shape(x.size() == v.size(),
                "project_orthogonal: dimension mismatch");
  double denom = v.squaredNorm() + eps;
  if (denom <= 0.0)
    throw DegenerateVector("project_orthogonal: zero direction");
  return x - v * (v.dot(x) / denom);
}

}  // namespace embridge
