#include "embridge/tape.hpp"

#include <cmath>

namespace embridge {

namespace {

Mat apply_trans(const Mat& m, bool t) { return t ? Mat(m.transpose()) : m; }

// stable per-row log-sum-exp and softmax
void row_softmax(const Mat& logits, Mat& probs, Vec& lse) {
  const int r = int(logits.rows()), c = int(logits.cols());
  probs.resize(r, c);
  lse.resize(r);
  for (int i = 0; i < r; ++i) {
    double m = logits.row(i).maxCoeff();
    double s = 0.0;
    for (int j = 0; j < c; ++j) {
      double e = std::exp(logits(i, j) - m);
      probs(i, j) = e;
      s += e;
    }
    probs.row(i) /= s;
    lse(i) = m + std::log(s);
  }
}

}  // namespace

Tape::NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return NodeId(nodes_.size() - 1);
}

Tape::NodeId Tape::leaf(Mat v, bool requires_grad) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(v);
  n.requires_grad = requires_grad;
  n.needs_grad = requires_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b, bool trans_a, bool trans_b) {
  const Mat& A = value(a);
  const Mat& B = value(b);
  long ak = trans_a ? A.rows() : A.cols();
  long bk = trans_b ? B.cols() : B.rows();
  require_shape(ak == bk, "matmul inner dimensions differ");
  Node n;
  n.op = Op::MatMul;
  n.a = a;
  n.b = b;
  n.trans_a = trans_a;
  n.trans_b = trans_b;
  n.value = apply_trans(A, trans_a) * apply_trans(B, trans_b);
  n.needs_grad = nodes_[size_t(a)].needs_grad || nodes_[size_t(b)].needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  require_shape(value(a).rows() == value(b).rows() &&
                    value(a).cols() == value(b).cols(),
                "add operands differ in shape");
  Node n;
  n.op = Op::Add;
  n.a = a;
  n.b = b;
  n.value = value(a) + value(b);
  n.needs_grad = nodes_[size_t(a)].needs_grad || nodes_[size_t(b)].needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::add_rowvec(NodeId a, NodeId rowvec) {
  require_shape(value(rowvec).rows() == 1 &&
                    value(rowvec).cols() == value(a).cols(),
                "add_rowvec expects a 1 x cols bias row");
  Node n;
  n.op = Op::AddRowVec;
  n.a = a;
  n.b = rowvec;
  n.value = value(a).rowwise() + value(rowvec).row(0);
  n.needs_grad =
      nodes_[size_t(a)].needs_grad || nodes_[size_t(rowvec)].needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::scale(NodeId a, double alpha) {
  Node n;
  n.op = Op::Scale;
  n.a = a;
  n.alpha = alpha;
  n.value = alpha * value(a);
  n.needs_grad = nodes_[size_t(a)].needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::tanh(NodeId a) {
  Node n;
  n.op = Op::Tanh;
  n.a = a;
  n.value = value(a).array().tanh();
  n.needs_grad = nodes_[size_t(a)].needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::row_normalize(NodeId a, double eps_norm) {
  const Mat& A = value(a);
  Node n;
  n.op = Op::RowNormalize;
  n.a = a;
  n.value.resize(A.rows(), A.cols());
  for (long i = 0; i < A.rows(); ++i) {
    double norm = A.row(i).norm();
    if (norm < eps_norm)
      throw DegenerateVector("row_normalize: row " + std::to_string(i) +
                             " has norm " + std::to_string(norm));
    n.value.row(i) = A.row(i) / norm;
  }
  n.needs_grad = nodes_[size_t(a)].needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::project_rows(NodeId a, const Mat& dirs, double eps) {
  const Mat& A = value(a);
  require_shape(dirs.rows() == A.rows() && dirs.cols() == A.cols(),
                "project_rows directions must match the batch shape");
  Node n;
  n.op = Op::ProjectRows;
  n.a = a;
  n.aux = dirs;
  n.eps = eps;
  n.value.resize(A.rows(), A.cols());
  for (long i = 0; i < A.rows(); ++i) {
    const auto v = dirs.row(i);
    double denom = v.squaredNorm() + eps;
    require_shape(denom > 0.0, "project_rows: zero direction with eps 0");
    n.value.row(i) = A.row(i) - v * (v.dot(A.row(i)) / denom);
  }
  n.needs_grad = nodes_[size_t(a)].needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::stop_gradient(NodeId a) {
  Node n;
  n.op = Op::StopGrad;
  n.a = a;
  n.value = value(a);
  n.needs_grad = false;
  return push(std::move(n));
}

Tape::NodeId Tape::select_rows(NodeId a, std::vector<int> rows) {
  const Mat& A = value(a);
  if (rows.empty()) throw EmptyInput("select_rows: empty row set");
  Node n;
  n.op = Op::SelectRows;
  n.a = a;
  n.value.resize(long(rows.size()), A.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    require_shape(rows[i] >= 0 && rows[i] < A.rows(),
                  "select_rows: index out of range");
    n.value.row(long(i)) = A.row(rows[i]);
  }
  n.idx = std::move(rows);
  n.needs_grad = nodes_[size_t(a)].needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::rowwise_dot(NodeId a, NodeId b) {
  const Mat& A = value(a);
  const Mat& B = value(b);
  require_shape(A.rows() == B.rows() && A.cols() == B.cols(),
                "rowwise_dot operands differ in shape");
  Node n;
  n.op = Op::RowwiseDot;
  n.a = a;
  n.b = b;
  n.value = (A.array() * B.array()).rowwise().sum().matrix();
  n.needs_grad = nodes_[size_t(a)].needs_grad || nodes_[size_t(b)].needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::sum(NodeId a) {
  Node n;
  n.op = Op::Sum;
  n.a = a;
  n.value = Mat::Constant(1, 1, value(a).sum());
  n.needs_grad = nodes_[size_t(a)].needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::mean(NodeId a) {
  Node n;
  n.op = Op::Mean;
  n.a = a;
  n.value = Mat::Constant(1, 1, value(a).mean());
  n.needs_grad = nodes_[size_t(a)].needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::sumsq(NodeId a) {
  Node n;
  n.op = Op::SumSq;
  n.a = a;
  n.value = Mat::Constant(1, 1, value(a).squaredNorm());
  n.needs_grad = nodes_[size_t(a)].needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::mse_const(NodeId a, const Mat& target) {
  const Mat& A = value(a);
  require_shape(target.rows() == A.rows() && target.cols() == A.cols(),
                "mse_const target must match the batch shape");
  Node n;
  n.op = Op::MseConst;
  n.a = a;
  n.aux = target;
  n.value =
      Mat::Constant(1, 1, (A - target).squaredNorm() / double(A.rows()));
  n.needs_grad = nodes_[size_t(a)].needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::softmax_xent_rows(NodeId logits, std::vector<int> targets) {
  const Mat& L = value(logits);
  require_shape(long(targets.size()) == L.rows(),
                "softmax_xent_rows needs one target per row");
  Node n;
  n.op = Op::SoftmaxXentRows;
  n.a = logits;
  Vec lse;
  row_softmax(L, n.aux, lse);
  double total = 0.0;
  for (long i = 0; i < L.rows(); ++i) {
    int t = targets[size_t(i)];
    require_shape(t >= 0 && t < L.cols(),
                  "softmax_xent_rows: target out of range");
    total += lse(i) - L(i, t);
  }
  n.value = Mat::Constant(1, 1, total / double(L.rows()));
  n.idx = std::move(targets);
  n.needs_grad = nodes_[size_t(logits)].needs_grad;
  return push(std::move(n));
}

Tape::NodeId Tape::lincomb(const std::vector<NodeId>& srcs,
                           const std::vector<double>& coeffs) {
  require_shape(srcs.size() == coeffs.size() && !srcs.empty(),
                "lincomb needs matching operand and coefficient counts");
  Node n;
  n.op = Op::Lincomb;
  double v = 0.0;
  for (size_t i = 0; i < srcs.size(); ++i) {
    require_shape(value(srcs[i]).size() == 1, "lincomb operands must be 1x1");
    v += coeffs[i] * value(srcs[i])(0, 0);
    n.needs_grad = n.needs_grad || nodes_[size_t(srcs[i])].needs_grad;
  }
  n.value = Mat::Constant(1, 1, v);
  n.srcs = srcs;
  n.coeffs = coeffs;
  return push(std::move(n));
}

double Tape::scalar(NodeId n) const {
  require_shape(value(n).size() == 1, "scalar() on a non-1x1 node");
  return value(n)(0, 0);
}

const Mat& Tape::grad(NodeId n) const {
  if (!ran_backward_) throw Error("grad() before backward()");
  return bar_[size_t(n)];
}

void Tape::backward(NodeId loss) {
  require_shape(value(loss).size() == 1, "backward expects a scalar loss");
  if (!std::isfinite(value(loss)(0, 0)))
    throw NonFiniteLoss("backward: loss is not finite");

  bar_.assign(nodes_.size(), Mat());
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].needs_grad || int(i) == loss)
      bar_[i] = Mat::Zero(nodes_[i].value.rows(), nodes_[i].value.cols());
  }
  bar_[size_t(loss)](0, 0) = 1.0;

  for (int id = loss; id >= 0; --id) {
    Node& n = nodes_[size_t(id)];
    if (bar_[size_t(id)].size() == 0) continue;
    if (!n.needs_grad && id != loss) continue;
    const Mat& g = bar_[size_t(id)];
    auto wants = [&](int src) {
      return src >= 0 && nodes_[size_t(src)].needs_grad;
    };
    switch (n.op) {
      case Op::Leaf:
      case Op::StopGrad:
        break;
      case Op::MatMul: {
        const Mat& A = nodes_[size_t(n.a)].value;
        const Mat& B = nodes_[size_t(n.b)].value;
        if (wants(n.a)) {
          Mat da;
          if (!n.trans_a)
            da = n.trans_b ? Mat(g * B) : Mat(g * B.transpose());
          else
            da = n.trans_b ? Mat(B.transpose() * g.transpose())
                           : Mat(B * g.transpose());
          bar_[size_t(n.a)] += da;
        }
        if (wants(n.b)) {
          Mat db;
          if (!n.trans_b)
            db = n.trans_a ? Mat(A * g) : Mat(A.transpose() * g);
          else
            db = n.trans_a ? Mat(g.transpose() * A.transpose())
                           : Mat(g.transpose() * A);
          bar_[size_t(n.b)] += db;
        }
        break;
      }
      case Op::Add:
        if (wants(n.a)) bar_[size_t(n.a)] += g;
        if (wants(n.b)) bar_[size_t(n.b)] += g;
        break;
      case Op::AddRowVec:
        if (wants(n.a)) bar_[size_t(n.a)] += g;
        if (wants(n.b)) bar_[size_t(n.b)] += g.colwise().sum();
        break;
      case Op::Scale:
        if (wants(n.a)) bar_[size_t(n.a)] += n.alpha * g;
        break;
      case Op::Tanh:
        if (wants(n.a))
          bar_[size_t(n.a)].array() +=
              (1.0 - n.value.array().square()) * g.array();
        break;
      case Op::RowNormalize: {
        if (!wants(n.a)) break;
        const Mat& X = nodes_[size_t(n.a)].value;
        Mat& dst = bar_[size_t(n.a)];
        for (long i = 0; i < X.rows(); ++i) {
          double norm = X.row(i).norm();
          const auto y = n.value.row(i);
          dst.row(i) += (g.row(i) - y * y.dot(g.row(i))) / norm;
        }
        break;
      }
      case Op::ProjectRows: {
        if (!wants(n.a)) break;
        Mat& dst = bar_[size_t(n.a)];
        for (long i = 0; i < g.rows(); ++i) {
          const auto v = n.aux.row(i);
          double denom = v.squaredNorm() + n.eps;
          dst.row(i) += g.row(i) - v * (v.dot(g.row(i)) / denom);
        }
        break;
      }
      case Op::SelectRows: {
        if (!wants(n.a)) break;
        Mat& dst = bar_[size_t(n.a)];
        for (size_t i = 0; i < n.idx.size(); ++i)
          dst.row(n.idx[i]) += g.row(long(i));
        break;
      }
      case Op::RowwiseDot: {
        const Mat& A = nodes_[size_t(n.a)].value;
        const Mat& B = nodes_[size_t(n.b)].value;
        if (wants(n.a))
          bar_[size_t(n.a)].array() += B.array().colwise() * g.col(0).array();
        if (wants(n.b))
          bar_[size_t(n.b)].array() += A.array().colwise() * g.col(0).array();
        break;
      }
      case Op::Sum:
        if (wants(n.a))
          bar_[size_t(n.a)].array() += g(0, 0);
        break;
      case Op::Mean:
        if (wants(n.a))
          bar_[size_t(n.a)].array() +=
              g(0, 0) / double(nodes_[size_t(n.a)].value.size());
        break;
      case Op::SumSq:
        if (wants(n.a))
          bar_[size_t(n.a)] += 2.0 * g(0, 0) * nodes_[size_t(n.a)].value;
        break;
      case Op::MseConst:
        if (wants(n.a))
          bar_[size_t(n.a)] +=
              (2.0 * g(0, 0) / double(nodes_[size_t(n.a)].value.rows())) *
              (nodes_[size_t(n.a)].value - n.aux);
        break;
      case Op::SoftmaxXentRows: {
        if (!wants(n.a)) break;
        const Mat& P = n.aux;
        Mat dl = P;
        for (long i = 0; i < dl.rows(); ++i) dl(i, n.idx[size_t(i)]) -= 1.0;
        bar_[size_t(n.a)] += (g(0, 0) / double(dl.rows())) * dl;
        break;
      }
      case Op::Lincomb:
        for (size_t i = 0; i < n.srcs.size(); ++i)
          if (wants(n.srcs[i]))
            bar_[size_t(n.srcs[i])](0, 0) += n.coeffs[i] * g(0, 0);
        break;
    }
  }

  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == Op::Leaf && nodes_[i].requires_grad &&
        !bar_[i].allFinite())
      throw NonFiniteGradient("backward: non-finite gradient at leaf " +
                              std::to_string(i));
  }
  ran_backward_ = true;
}

}  // namespace embridge
