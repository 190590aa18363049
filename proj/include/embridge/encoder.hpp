#pragma once

#include "embridge/tape.hpp"

namespace embridge {

/// MLP encoder onto the unit sphere: affine+tanh hidden layers, a final
/// affine layer, then row normalization. Zero hidden layers gives a linear
/// map followed by normalization.
struct Encoder {
  int in_dim = 0;
  int out_dim = 0;
  std::vector<int> hidden;
  std::vector<Mat> W;  // W[l] is (fan_in x fan_out)
  std::vector<Mat> b;  // b[l] is (1 x fan_out)
  bool frozen = false;

  /// Symmetric uniform init scaled by fan-in: U(-1/sqrt(fan_in), ...).
  static Encoder init(int in_dim, const std::vector<int>& hidden, int out_dim,
                      Rng& rng);

  std::vector<int> layer_dims() const;
  size_t param_count() const;

  bool same_params(const Encoder& other) const;  // bitwise comparison
};

struct EncoderGraph {
  Tape::NodeId out = -1;
  std::vector<Tape::NodeId> params;  // leaves, W0,b0,W1,b1,...
};

/// Records the encoder forward pass on the tape. Parameters become leaves
/// with requires_grad = trainable && !frozen.
EncoderGraph encoder_forward_graph(Tape& t, const Encoder& enc,
                                   const Mat& inputs, bool trainable);

/// Plain forward evaluation (no gradients). Identical arithmetic to the
/// tape path.
Mat encoder_forward(const Encoder& enc, const Mat& inputs);

}  // namespace embridge
