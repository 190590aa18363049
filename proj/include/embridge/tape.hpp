#pragma once

#include "embridge/common.hpp"

namespace embridge {

/// Reverse-mode tape over whole-batch matrix operations. Forward values are
/// computed eagerly when an op is recorded; backward() runs the recorded VJPs
/// in reverse and accumulates cotangents for every node that needs them.
///
/// Batches are row-major: one sample per row.
class Tape {
 public:
  using NodeId = int;

  enum class Op {
    Leaf,
    MatMul,          // op(a) * op(b) with optional transposes
    Add,             // a + b, same shape
    AddRowVec,       // (N x d) + (1 x d) broadcast over rows
    Scale,           // alpha * a
    Tanh,
    RowNormalize,    // each row divided by its l2 norm
    ProjectRows,     // row i projected orthogonal to constant direction i
    StopGrad,        // identity forward, blocks gradient
    SelectRows,      // gather a subset of rows
    RowwiseDot,      // (N x d, N x d) -> N x 1 of per-row dots
    Sum,             // sum of all entries -> 1x1
    Mean,            // mean of all entries -> 1x1
    SumSq,           // sum of squared entries -> 1x1
    MseConst,        // mean over rows of squared distance to constant -> 1x1
    SoftmaxXentRows, // mean over rows of -log softmax(row)[target] -> 1x1
    Lincomb,         // scalar linear combination of 1x1 nodes
  };

  struct Node {
    Op op;
    Mat value;
    int a = -1, b = -1;
    bool requires_grad = false;  // leaves only
    bool needs_grad = false;     // any differentiable leaf upstream
    bool trans_a = false, trans_b = false;
    double alpha = 0.0;
    double eps = 0.0;
    Mat aux;                 // ProjectRows directions, MseConst target,
                             // SoftmaxXentRows cached probabilities
    std::vector<int> idx;    // SelectRows indices / SoftmaxXentRows targets
    std::vector<int> srcs;   // Lincomb operands
    std::vector<double> coeffs;
  };

  NodeId leaf(Mat v, bool requires_grad = false);
  NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false);
  NodeId add(NodeId a, NodeId b);
  NodeId add_rowvec(NodeId a, NodeId rowvec);
  NodeId scale(NodeId a, double alpha);
  NodeId tanh(NodeId a);
  /// Throws DegenerateVector if any row norm is below eps_norm.
  NodeId row_normalize(NodeId a, double eps_norm = 1e-8);
  /// dirs is captured by value and acts as a stop-gradient constant; row i of
  /// the output is (I - v v^T / (||v||^2 + eps)) applied to row i of a.
  NodeId project_rows(NodeId a, const Mat& dirs, double eps = 0.0);
  NodeId stop_gradient(NodeId a);
  NodeId select_rows(NodeId a, std::vector<int> rows);
  NodeId rowwise_dot(NodeId a, NodeId b);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  NodeId sumsq(NodeId a);
  NodeId mse_const(NodeId a, const Mat& target);
  NodeId softmax_xent_rows(NodeId logits, std::vector<int> targets);
  NodeId lincomb(const std::vector<NodeId>& srcs,
                 const std::vector<double>& coeffs);

  const Mat& value(NodeId n) const { return nodes_[size_t(n)].value; }
  double scalar(NodeId n) const;
  size_t size() const { return nodes_.size(); }

  /// Runs reverse accumulation from a scalar (1x1) node. Resets previous
  /// cotangents, so it may be called repeatedly on the same graph. Throws
  /// NonFiniteLoss if the seed value is not finite and NonFiniteGradient if
  /// any produced cotangent is not finite.
  void backward(NodeId loss);

  /// Cotangent of any node after backward(); zero matrix when untouched.
  const Mat& grad(NodeId n) const;

 private:
  NodeId push(Node n);
  std::vector<Node> nodes_;
  std::vector<Mat> bar_;
  bool ran_backward_ = false;
};

}  // namespace embridge
