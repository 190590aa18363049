#include "embridge/encoder.hpp"

#include <cmath>
#include <cstring>

namespace embridge {

Encoder Encoder::init(int in_dim, const std::vector<int>& hidden, int out_dim,
                      Rng& rng) {
  if (in_dim <= 0 || out_dim < 2)
    throw InvalidSpec("encoder dims must be positive (output at least 2)");
  Encoder e;
  e.in_dim = in_dim;
  e.out_dim = out_dim;
  e.hidden = hidden;
  std::vector<int> dims = e.layer_dims();
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    double a = 1.0 / std::sqrt(double(dims[l]));
    e.W.push_back(rng.uniform_mat(dims[l], dims[l + 1], -a, a));
    e.b.push_back(Mat::Zero(1, dims[l + 1]));
  }
  return e;
}

std::vector<int> Encoder::layer_dims() const {
  std::vector<int> dims;
  dims.push_back(in_dim);
  for (int h : hidden) dims.push_back(h);
  dims.push_back(out_dim);
  return dims;
}

size_t Encoder::param_count() const {
  size_t n = 0;
  for (const Mat& w : W) n += size_t(w.size());
  for (const Mat& bb : b) n += size_t(bb.size());
  return n;
}

bool Encoder::same_params(const Encoder& other) const {
  if (W.size() != other.W.size()) return false;
  for (size_t l = 0; l < W.size(); ++l) {
    if (W[l].rows() != other.W[l].rows() || W[l].cols() != other.W[l].cols())
      return false;
    if (std::memcmp(W[l].data(), other.W[l].data(),
                    sizeof(double) * size_t(W[l].size())) != 0)
      return false;
    if (std::memcmp(b[l].data(), other.b[l].data(),
                    sizeof(double) * size_t(b[l].size())) != 0)
      return false;
  }
  return true;
}

EncoderGraph encoder_forward_graph(Tape& t, const Encoder& enc,
                                   const Mat& inputs, bool trainable) {
  require_shape(inputs.cols() == enc.in_dim,
                "encoder input width does not match in_dim");
  bool rg = trainable && !enc.frozen;
  EncoderGraph g;
  Tape::NodeId h = t.leaf(inputs, false);
  for (size_t l = 0; l < enc.W.size(); ++l) {
    Tape::NodeId w = t.leaf(enc.W[l], rg);
    Tape::NodeId bb = t.leaf(enc.b[l], rg);
    g.params.push_back(w);
    g.params.push_back(bb);
    h = t.add_rowvec(t.matmul(h, w), bb);
    if (l + 1 < enc.W.size()) h = t.tanh(h);
  }
  g.out = t.row_normalize(h);
  return g;
}

Mat encoder_forward(const Encoder& enc, const Mat& inputs) {
  Tape t;
  EncoderGraph g = encoder_forward_graph(t, enc, inputs, false);
  return t.value(g.out);
}

}  // namespace embridge
