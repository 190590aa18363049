#include "embridge/verify.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <limits>

namespace embridge {

namespace {

// flattened parameter gradient of the encoder leaves
Vec flatten_grads(const Tape& t, const std::vector<Tape::NodeId>& params) {
  long total = 0;
  for (Tape::NodeId p : params) total += t.grad(p).size();
  Vec out(total);
  long at = 0;
  for (Tape::NodeId p : params) {
    const Mat& g = t.grad(p);
    for (long j = 0; j < g.size(); ++j) out(at + j) = g.data()[j];
    at += g.size();
  }
  return out;
}

double align_loss_eager(const Encoder& enc, const Mat& obs, const Mat& anchors,
                        double tau) {
  Mat x = encoder_forward(enc, obs);
  double s = 0.0;
  for (long i = 0; i < x.rows(); ++i) s += x.row(i).dot(anchors.row(i));
  return -s / (double(x.rows()) * tau);
}

}  // namespace

TheoremProbe theorem_probe(const Encoder& enc_b, const Mat& obs_b,
                           const Mat& anchors, const Mat& proxies,
                           double lambda, const TheoremProbeOptions& opt) {
  TheoremProbe pr;

  Tape t;
  EncoderGraph eg = encoder_forward_graph(t, enc_b, obs_b, true);
  Tape::NodeId anchors_leaf = t.leaf(anchors, false);
  Tape::NodeId align = align_mean_node(t, eg.out, anchors_leaf, opt.tau);

  OsrOptions oo;
  oo.tau = opt.tau;
  OsrGraph og = osr_graph(t, eg.out, anchors, proxies, oo);
  pr.skipped = og.skipped;

  // positive-pair-only transported loss over the kept rows
  Mat prox_kept(long(og.kept.size()), proxies.cols());
  for (size_t i = 0; i < og.kept.size(); ++i)
    prox_kept.row(long(i)) = proxies.row(og.kept[i]);
  Tape::NodeId pk = t.leaf(prox_kept, false);
  Tape::NodeId pos_loss =
      t.scale(t.mean(t.rowwise_dot(og.transported, pk)), -1.0 / opt.tau);

  t.backward(align);
  Vec g_align = flatten_grads(t, eg.params);
  pr.align_grad_sq = g_align.squaredNorm();

  AnchorDirections ad =
      anchor_directions(t.value(eg.out), anchors, opt.tau, kEpsDir);

  const double K = double(og.kept.size());
  double bound_full = std::numeric_limits<double>::infinity();
  double bound_pos = std::numeric_limits<double>::infinity();

  t.backward(og.loss);
  Vec g_osr = flatten_grads(t, eg.params);
  {
    const Mat& gT = t.grad(og.transported);
    for (size_t i = 0; i < og.kept.size(); ++i) {
      Vec c_bar = ad.dirs.row(og.kept[i]).transpose();
      LambdaBound b = lambda_bound(c_bar, Vec(K * gT.row(long(i)).transpose()));
      if (!b.degenerate_direction && !b.infinite)
        bound_full = std::min(bound_full, b.value);
    }
  }
  pr.cross_term = g_osr.dot(g_align);

  t.backward(pos_loss);
  Vec g_osr_pos = flatten_grads(t, eg.params);
  {
    const Mat& gT = t.grad(og.transported);
    for (size_t i = 0; i < og.kept.size(); ++i) {
      Vec c_bar = ad.dirs.row(og.kept[i]).transpose();
      LambdaBound b = lambda_bound(c_bar, Vec(K * gT.row(long(i)).transpose()));
      if (!b.degenerate_direction && !b.infinite)
        bound_pos = std::min(bound_pos, b.value);
    }
  }
  pr.cross_term_positive = g_osr_pos.dot(g_align);

  pr.bound = bound_full;
  pr.bound_positive_pair = bound_pos;
  pr.lambda =
      lambda < 0.0 ? (std::isfinite(bound_full) ? bound_full : 0.0) : lambda;
  pr.inner_product = pr.align_grad_sq + pr.lambda * pr.cross_term;
  pr.inner_product_positive =
      pr.align_grad_sq + pr.lambda * pr.cross_term_positive;
  pr.lambda_le_bound = pr.lambda <= pr.bound;
  pr.satisfied = pr.inner_product >= -opt.tol;

  if (opt.fd_check) {
    Rng rng(opt.fd_seed);
    Encoder work = enc_b;
    // interleaved W0, b0, W1, b1, ... matches the flatten_grads layout
    std::vector<Mat*> mats;
    for (size_t l = 0; l < work.W.size(); ++l) {
      mats.push_back(&work.W[l]);
      mats.push_back(&work.b[l]);
    }
    long total = 0;
    for (Mat* m : mats) total += m->size();
    double worst = 0.0;
    for (int c = 0; c < opt.fd_coords; ++c) {
      long flat = long(rng.uniform_int(int(total)));
      long at = flat;
      Mat* target = nullptr;
      for (Mat* m : mats) {
        if (at < m->size()) {
          target = m;
          break;
        }
        at -= m->size();
      }
      double orig = target->data()[at];
      target->data()[at] = orig + opt.fd_h;
      double lp = align_loss_eager(work, obs_b, anchors, opt.tau);
      target->data()[at] = orig - opt.fd_h;
      double lm = align_loss_eager(work, obs_b, anchors, opt.tau);
      target->data()[at] = orig;
      double fd = (lp - lm) / (2.0 * opt.fd_h);
      double an = g_align(flat);
      double rel =
          std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
      worst = std::max(worst, rel);
    }
    pr.fd_max_rel_err = worst;
  }
  return pr;
}

TheoremReport verify_theorem1(const Encoder& enc_b, const Mat& obs_b,
                              const Mat& anchors, const Mat& proxies,
                              const std::vector<double>& lambdas,
                              const TheoremProbeOptions& opt) {
  TheoremReport rep;
  rep.min_inner = std::numeric_limits<double>::infinity();
  for (double l : lambdas) {
    TheoremProbe p = theorem_probe(enc_b, obs_b, anchors, proxies, l, opt);
    rep.min_inner = std::min(rep.min_inner, p.inner_product);
    rep.max_fd_rel_err = std::max(rep.max_fd_rel_err, p.fd_max_rel_err);
    if (p.lambda_le_bound && !p.satisfied) ++rep.violations;
    rep.probes.push_back(p);
  }
  return rep;
}

TheoremReport theorem_random_snapshots(int count, uint64_t seed,
                                       const TheoremProbeOptions& opt) {
  TheoremReport rep;
  rep.min_inner = std::numeric_limits<double>::infinity();
  Rng rng(seed);
  for (int s = 0; s < count; ++s) {
    int d = 16;
    int n = 8 + rng.uniform_int(25);       // batch 8..32
    int obs_dim = 8 + rng.uniform_int(25);
    int width = 16 + rng.uniform_int(17);
    Rng enc_rng(rng.next_u64());
    Encoder enc = Encoder::init(obs_dim, {width, width}, d, enc_rng);
    Mat obs = rng.normal_mat(n, obs_dim);
    Mat anchors(n, d), proxies(n, d);
    for (int i = 0; i < n; ++i) {
      anchors.row(i) = normalize(Vec(rng.normal_mat(d, 1))).transpose();
      proxies.row(i) = normalize(Vec(rng.normal_mat(d, 1))).transpose();
    }
    TheoremProbeOptions o = opt;
    o.fd_seed = rng.next_u64();
    TheoremProbe p = theorem_probe(enc, obs, anchors, proxies, -1.0, o);
    rep.min_inner = std::min(rep.min_inner, p.inner_product);
    rep.max_fd_rel_err = std::max(rep.max_fd_rel_err, p.fd_max_rel_err);
    if (p.lambda_le_bound && !p.satisfied) ++rep.violations;
    rep.probes.push_back(p);
  }
  return rep;
}

LemmaReport verify_lemma1(const std::vector<int>& dims, int trials_per_dim,
                          uint64_t seed, double margin_tol) {
  LemmaReport rep;
  rep.worst_margin = std::numeric_limits<double>::infinity();
  rep.max_contraction_excess = 0.0;
  Rng rng(seed);
  for (int d : dims) {
    if (d < 2) throw InvalidSpec("verify_lemma1: dims must be >= 2");
    for (int tr = 0; tr < trials_per_dim; ++tr) {
      Mat A = rng.normal_mat(d, d);
      Vec y = rng.normal_mat(d, 1);
      while (y.norm() < 1e-6) y = rng.normal_mat(d, 1);
      Vec x = rng.normal_mat(d, 1);
      x -= y * (y.dot(x) / y.squaredNorm());
      if (x.norm() < 1e-9) {
        --tr;
        continue;
      }
      x *= rng.uniform(0.1, 3.0);

      LemmaProbe p;
      p.dim = d;
      p.lhs = x.dot(A.transpose() * (A * y));
      Eigen::JacobiSVD<Mat> svd(A);
      double smax = svd.singularValues()(0);
      double smin = svd.singularValues()(svd.singularValues().size() - 1);
      double ay2 = (A * y).squaredNorm();
      if (smin < 1e-12) {
        p.kappa = std::numeric_limits<double>::infinity();
        p.rhs = -std::numeric_limits<double>::infinity();
      } else {
        p.kappa = (smax * smax) / (smin * smin);
        p.rhs = -std::sqrt(std::max(0.0, p.kappa - 1.0)) * ay2 * x.norm() /
                y.norm();
      }
      p.margin = p.lhs - p.rhs;
      rep.worst_margin = std::min(rep.worst_margin, p.margin);
      rep.probes.push_back(p);

      // projector contraction draws
      Vec v = rng.normal_mat(d, 1);
      while (v.norm() < 1e-6) v = rng.normal_mat(d, 1);
      Vec u = rng.normal_mat(d, 1);
      Vec pu = u - v * (v.dot(u) / v.squaredNorm());
      double excess = pu.norm() - u.norm();
      rep.max_contraction_excess =
          std::max(rep.max_contraction_excess, excess);
    }
  }
  rep.all_satisfied = rep.worst_margin >= -margin_tol;
  rep.contraction_ok = rep.max_contraction_excess <= 1e-12;
  return rep;
}

double osr_orthogonality_probe(uint64_t seed, double tau) {
  Rng rng(seed);
  int n = 8 + rng.uniform_int(9);
  int d = 16;
  Mat xb(n, d), anchors(n, d), proxies(n, d);
  for (int i = 0; i < n; ++i) {
    xb.row(i) = normalize(Vec(rng.normal_mat(d, 1))).transpose();
    anchors.row(i) = normalize(Vec(rng.normal_mat(d, 1))).transpose();
    proxies.row(i) = normalize(Vec(rng.normal_mat(d, 1))).transpose();
  }
  Tape t;
  Tape::NodeId x = t.leaf(xb, true);
  OsrOptions oo;
  oo.tau = tau;
  OsrGraph og = osr_graph(t, x, anchors, proxies, oo);
  t.backward(og.loss);
  const Mat& gx = t.grad(x);
  AnchorDirections ad = anchor_directions(xb, anchors, tau, kEpsDir);
  double worst = 0.0;
  for (int k : og.kept) {
    Vec c_bar = ad.dirs.row(k).transpose();
    Vec g = gx.row(k).transpose();
    double denom = c_bar.norm() * g.norm();
    if (denom < 1e-300) continue;
    worst = std::max(worst, std::abs(c_bar.dot(g)) / denom);
  }
  return worst;
}

}  // namespace embridge
