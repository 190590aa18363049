#pragma once

#include "embridge/common.hpp"

namespace embridge {

/// AdamW with decoupled weight decay and a cosine learning-rate schedule.
struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
  long total_steps = 0;  // 0 disables the schedule (constant lr)
};

class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  /// Learning rate for a 0-based step index; reaches 0 at the final step.
  double lr_at(long step) const;

  /// One update over a parameter list. Gradients pair up with params.
  void step(const std::vector<Mat*>& params,
            const std::vector<const Mat*>& grads);

  long steps_taken() const { return t_; }

 private:
  AdamWConfig cfg_;
  std::vector<Mat> m_, v_;
  long t_ = 0;
};

}  // namespace embridge
