#include "embridge/losses.hpp"

#include <cmath>

namespace embridge {

namespace {

double logsumexp_row(const Eigen::RowVectorXd& v) {
  double m = v.maxCoeff();
  double s = 0.0;
  for (long j = 0; j < v.size(); ++j) s += std::exp(v(j) - m);
  return m + std::log(s);
}

void check_tau(double tau) {
  if (!(tau > 0.0)) throw InvalidSpec("temperature must be positive");
}

std::vector<int> iota_vec(int n) {
  std::vector<int> v(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) v[size_t(i)] = i;
  return v;
}

}  // namespace

double info_nce(const Mat& queries, const Mat& keys, double tau) {
  check_tau(tau);
  if (queries.rows() == 0) throw EmptyInput("info_nce: empty batch");
  require_shape(queries.rows() == keys.rows() &&
                    queries.cols() == keys.cols(),
                "info_nce: queries and keys must pair up row-for-row");
  Mat s = (queries * keys.transpose()) / tau;
  double total = 0.0;
  for (long i = 0; i < s.rows(); ++i)
    total += logsumexp_row(s.row(i)) - s(i, i);
  return total / double(s.rows());
}

double align_part(const Vec& x, const Vec& c, double tau) {
  check_tau(tau);
  return -cosine_sim(x, c) / tau;
}

double neg_part(const Vec& x, const Mat& keys, double tau) {
  check_tau(tau);
  if (keys.rows() == 0) throw EmptyInput("neg_part: no keys");
  Vec xn = normalize(x);
  Eigen::RowVectorXd sims(keys.rows());
  for (long j = 0; j < keys.rows(); ++j)
    sims(j) = normalize(Vec(keys.row(j))).dot(xn) / tau;
  return logsumexp_row(sims);
}

std::optional<Vec> anchor_direction(const Vec& x, const Vec& c, double tau,
                                    double eps_dir) {
  check_tau(tau);
  double xn = x.norm();
  if (xn < kEpsNorm) throw DegenerateVector("anchor_direction: zero embedding");
  Vec xu = x / xn;
  Vec cu = normalize(c);
  // d/dx cos(x, c) = (I - xu xu^T) cu / ||x||
  Vec g = (cu - xu * xu.dot(cu)) / (xn * tau);
  if (g.norm() < eps_dir) return std::nullopt;
  return g;
}

AnchorDirections anchor_directions(const Mat& x, const Mat& anchors,
                                   double tau, double eps_dir) {
  require_shape(x.rows() == anchors.rows() && x.cols() == anchors.cols(),
                "anchor_directions: batch shapes differ");
  AnchorDirections out;
  out.dirs = Mat::Zero(x.rows(), x.cols());
  out.ok.assign(size_t(x.rows()), 0);
  for (long i = 0; i < x.rows(); ++i) {
    auto d = anchor_direction(Vec(x.row(i)), Vec(anchors.row(i)), tau, eps_dir);
    if (d) {
      out.dirs.row(i) = d->transpose();
      out.ok[size_t(i)] = 1;
    } else {
      ++out.degenerate;
    }
  }
  return out;
}

LambdaBound lambda_bound(const Vec& c_bar, const Vec& g_T, double eps_dir) {
  LambdaBound b;
  double cn = c_bar.norm();
  if (cn < eps_dir) {
    b.degenerate_direction = true;
    return b;
  }
  double gn = g_T.norm();
  if (gn < 1e-300) {
    b.infinite = true;
    b.value = std::numeric_limits<double>::infinity();
    return b;
  }
  b.value = cn / gn;
  return b;
}

// ------------------------------------------------------------ tape builders

Tape::NodeId info_nce_node(Tape& t, Tape::NodeId queries, Tape::NodeId keys,
                           double tau) {
  check_tau(tau);
  require_shape(t.value(queries).rows() == t.value(keys).rows(),
                "info_nce_node: queries and keys must pair up row-for-row");
  Tape::NodeId s = t.matmul(queries, keys, false, true);
  Tape::NodeId sl = t.scale(s, 1.0 / tau);
  return t.softmax_xent_rows(sl, iota_vec(int(t.value(queries).rows())));
}

OsrGraph osr_graph(Tape& t, Tape::NodeId xb, const Mat& anchors,
                   const Mat& proxies, const OsrOptions& opt) {
  const Mat& X = t.value(xb);
  require_shape(anchors.rows() == X.rows() && anchors.cols() == X.cols(),
                "osr_graph: anchors must match the embedding batch");
  require_shape(proxies.rows() == X.rows() && proxies.cols() == X.cols(),
                "osr_graph: proxies must match the embedding batch");
  if (X.rows() == 0) throw EmptyInput("osr_graph: empty batch");

  AnchorDirections ad = anchor_directions(X, anchors, opt.tau, opt.eps_dir);

  OsrGraph g;
  std::vector<int> kept;
  for (long i = 0; i < X.rows(); ++i) {
    if (!ad.ok[size_t(i)]) continue;
    // ensure the projected vector can be renormalized
    Vec v = ad.dirs.row(i).transpose();
    Vec p = Vec(X.row(i).transpose()) -
            v * (v.dot(X.row(i)) / (v.squaredNorm() + opt.proj_eps));
    if (p.norm() < kEpsNorm) continue;
    kept.push_back(int(i));
  }
  g.skipped = int(X.rows()) - int(kept.size());
  if (kept.empty())
    throw AllSamplesDegenerate("osr_graph: every sample was skipped");
  g.kept = kept;

  Mat dirs_kept(long(kept.size()), X.cols());
  for (size_t i = 0; i < kept.size(); ++i)
    dirs_kept.row(long(i)) = ad.dirs.row(kept[i]);

  Tape::NodeId sel = t.select_rows(xb, kept);
  Tape::NodeId proj = t.project_rows(sel, dirs_kept, opt.proj_eps);
  g.transported = t.row_normalize(proj);

  Tape::NodeId keys = t.leaf(proxies, false);
  Tape::NodeId s = t.matmul(g.transported, keys, false, true);
  Tape::NodeId sl = t.scale(s, 1.0 / opt.tau);
  g.loss = t.softmax_xent_rows(sl, kept);  // positive = original column
  return g;
}

OsrValue osr_loss(const Mat& xb, const Mat& anchors, const Mat& proxies,
                  double tau, const OsrOptions* opt) {
  OsrOptions o = opt ? *opt : OsrOptions{};
  o.tau = tau;
  Tape t;
  Tape::NodeId x = t.leaf(xb, false);
  OsrGraph g = osr_graph(t, x, anchors, proxies, o);
  return OsrValue{t.scalar(g.loss), g.skipped};
}

CombinedGraph combined_graph(Tape& t, Tape::NodeId xb, const Mat& anchors,
                             const Mat& proxies, const CombinedOptions& opt) {
  check_tau(opt.tau);
  if (opt.lambda < 0.0) throw InvalidSpec("lambda must be non-negative");
  // copy the dims out: pushing nodes below may reallocate the value store
  const long n = t.value(xb).rows();
  const long d = t.value(xb).cols();
  require_shape(anchors.rows() == n && anchors.cols() == d,
                "combined_graph: anchors must match the embedding batch");

  CombinedGraph g;
  Tape::NodeId c = t.leaf(anchors, false);

  // query -> anchor direction
  Tape::NodeId s1 = t.matmul(xb, c, false, true);
  g.sim_to_anchors = s1;
  Tape::NodeId l1 =
      t.softmax_xent_rows(t.scale(s1, 1.0 / opt.tau), iota_vec(int(n)));
  // anchor -> query direction
  Tape::NodeId s2 = t.matmul(c, xb, false, true);
  Tape::NodeId l2 =
      t.softmax_xent_rows(t.scale(s2, 1.0 / opt.tau), iota_vec(int(n)));
  g.infonce = t.lincomb({l1, l2}, {0.5, 0.5});

  if (opt.lambda == 0.0) {
    g.total = t.lincomb({g.infonce}, {1.0});
    return g;
  }

  require_shape(proxies.rows() == n && proxies.cols() == d,
                "combined_graph: proxies must match the embedding batch");

  if (opt.mode == ProxyAlignMode::kOsr) {
    OsrOptions oo;
    oo.tau = opt.tau;
    oo.eps_dir = opt.eps_dir;
    oo.proj_eps = opt.proj_eps;
    g.osr_fwd = osr_graph(t, xb, anchors, proxies, oo);
    g.skipped = g.osr_fwd.skipped;

    // reverse direction: proxies query the transported embeddings; skipped
    // rows are absent from both sides here
    Mat prox_kept(long(g.osr_fwd.kept.size()), d);
    for (size_t i = 0; i < g.osr_fwd.kept.size(); ++i)
      prox_kept.row(long(i)) = proxies.row(g.osr_fwd.kept[i]);
    Tape::NodeId pk = t.leaf(prox_kept, false);
    Tape::NodeId s3 = t.matmul(pk, g.osr_fwd.transported, false, true);
    Tape::NodeId l3 = t.softmax_xent_rows(
        t.scale(s3, 1.0 / opt.tau), iota_vec(int(g.osr_fwd.kept.size())));
    g.osr = t.lincomb({g.osr_fwd.loss, l3}, {0.5, 0.5});
  } else {
    // ablation: plain symmetric InfoNCE against proxies, no transport
    Tape::NodeId pk = t.leaf(proxies, false);
    Tape::NodeId s3 = t.matmul(xb, pk, false, true);
    Tape::NodeId l3 =
        t.softmax_xent_rows(t.scale(s3, 1.0 / opt.tau), iota_vec(int(n)));
    Tape::NodeId s4 = t.matmul(pk, xb, false, true);
    Tape::NodeId l4 =
        t.softmax_xent_rows(t.scale(s4, 1.0 / opt.tau), iota_vec(int(n)));
    g.osr = t.lincomb({l3, l4}, {0.5, 0.5});
  }

  g.total = t.lincomb({g.infonce, g.osr}, {1.0, opt.lambda});
  return g;
}

LossReport combined_loss(const Mat& xb, const Mat& anchors, const Mat& proxies,
                         double lambda, double tau,
                         const CombinedOptions* opt_in) {
  CombinedOptions opt = opt_in ? *opt_in : CombinedOptions{};
  opt.lambda = lambda;
  opt.tau = tau;

  Tape t;
  Tape::NodeId x = t.leaf(xb, false);
  CombinedGraph g = combined_graph(t, x, anchors, proxies, opt);

  LossReport r;
  r.total = t.scalar(g.total);
  r.infonce_component = t.scalar(g.infonce);
  r.osr_component = g.osr >= 0 ? t.scalar(g.osr) : 0.0;
  r.skipped_samples = g.skipped;
  if (!std::isfinite(r.total)) throw NonFiniteLoss("combined_loss");

  const Mat& s = t.value(g.sim_to_anchors);
  r.per_sample_align.resize(size_t(s.rows()));
  r.per_sample_neg.resize(size_t(s.rows()));
  for (long i = 0; i < s.rows(); ++i) {
    r.per_sample_align[size_t(i)] = -s(i, i) / tau;
    r.per_sample_neg[size_t(i)] = logsumexp_row(s.row(i) / tau);
  }
  return r;
}

Tape::NodeId align_mean_node(Tape& t, Tape::NodeId xb, Tape::NodeId anchors,
                             double tau) {
  check_tau(tau);
  Tape::NodeId d = t.rowwise_dot(xb, anchors);
  return t.scale(t.mean(d), -1.0 / tau);
}

}  // namespace embridge
