#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace embridge {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// ------------------------------------------------------------------ errors

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DegenerateVector : Error { using Error::Error; };
struct NonFiniteGradient : Error { using Error::Error; };
struct NonFiniteLoss : Error { using Error::Error; };
struct ShapeMismatch : Error { using Error::Error; };
struct InvalidSpec : Error { using Error::Error; };
struct ForbiddenPair : Error { using Error::Error; };
struct AllSamplesDegenerate : Error { using Error::Error; };
struct EmptyInput : Error { using Error::Error; };
struct EmptyGallery : Error { using Error::Error; };
struct ClassCountMismatch : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

inline void require_shape(bool ok, const std::string& msg) {
  if (!ok) throw ShapeMismatch(msg);
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

// ------------------------------------------------------------------ rng
//
// splitmix64 core with Box-Muller normals. Self-contained so that runs are
// byte-identical across standard libraries; std::normal_distribution is
// implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int uniform_int(int n) {
    return int(next_u64() % uint64_t(n));
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  Mat normal_mat(int rows, int cols, double stddev = 1.0) {
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = stddev * normal();
    return m;
  }

  Mat uniform_mat(int rows, int cols, double lo, double hi) {
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = uniform(lo, hi);
    return m;
  }

  // Fisher-Yates; avoids std::shuffle for cross-platform determinism.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int i = int(v.size()) - 1; i > 0; --i) {
      int j = uniform_int(i + 1);
      std::swap(v[size_t(i)], v[size_t(j)]);
    }
  }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Derive a stream seed from a master seed and a fixed salt.
inline uint64_t derive_seed(uint64_t master, uint64_t salt) {
  Rng r(master ^ (0x6a09e667f3bcc909ULL * (salt + 1)));
  return r.next_u64();
}

// Fixed-format double rendering shared by every serialized artifact.
std::string fmt_double(double v);

}  // namespace embridge
