#include "embridge/optimizer.hpp"

#include <cmath>

namespace embridge {

double AdamW::lr_at(long step) const {
  if (cfg_.total_steps <= 1) return cfg_.lr;
  double p = double(step) / double(cfg_.total_steps - 1);
  if (p > 1.0) p = 1.0;
  return cfg_.lr * 0.5 * (1.0 + std::cos(M_PI * p));
}

void AdamW::step(const std::vector<Mat*>& params,
                 const std::vector<const Mat*>& grads) {
  require_shape(params.size() == grads.size(),
                "optimizer: gradient count does not match parameter count");
  if (m_.empty()) {
    for (const Mat* p : params) {
      m_.push_back(Mat::Zero(p->rows(), p->cols()));
      v_.push_back(Mat::Zero(p->rows(), p->cols()));
    }
  }
  require_shape(m_.size() == params.size(),
                "optimizer: parameter set changed between steps");

  double lr = lr_at(t_);
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));

  for (size_t i = 0; i < params.size(); ++i) {
    Mat& p = *params[i];
    const Mat& g = *grads[i];
    require_shape(p.rows() == g.rows() && p.cols() == g.cols(),
                  "optimizer: gradient shape mismatch");
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    Mat mhat = m_[i] / bc1;
    Mat vhat = v_[i] / bc2;
    p -= lr * cfg_.weight_decay * p;
    p.array() -= lr * mhat.array() / (vhat.array().sqrt() + cfg_.eps);
  }
}

}  // namespace embridge
