#include "embridge/proxy.hpp"

#include <algorithm>
#include <cmath>

#include "embridge/geometry.hpp"
#include "embridge/optimizer.hpp"

namespace embridge {

std::string proxy_kind_name(ProxyKind k) {
  switch (k) {
    case ProxyKind::kDiffusion: return "diffusion";
    case ProxyKind::kMlp: return "mlp";
    case ProxyKind::kLinear: return "linear";
    case ProxyKind::kNoise: return "noise";
    case ProxyKind::kMemory: return "memory";
  }
  return "?";
}

ProxyKind proxy_kind_from_name(const std::string& name) {
  if (name == "diffusion") return ProxyKind::kDiffusion;
  if (name == "mlp") return ProxyKind::kMlp;
  if (name == "linear") return ProxyKind::kLinear;
  if (name == "noise") return ProxyKind::kNoise;
  if (name == "memory") return ProxyKind::kMemory;
  throw InvalidSpec("unknown proxy kind: " + name);
}

// ----------------------------------------------------------------- Mlp

Mlp Mlp::init(const std::vector<int>& dims, Rng& rng) {
  if (dims.size() < 2) throw InvalidSpec("mlp needs at least in/out dims");
  Mlp m;
  m.dims = dims;
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    double a = 1.0 / std::sqrt(double(dims[l]));
    m.W.push_back(rng.uniform_mat(dims[l], dims[l + 1], -a, a));
    m.b.push_back(Mat::Zero(1, dims[l + 1]));
  }
  return m;
}

Mat Mlp::forward(const Mat& x) const {
  require_shape(x.cols() == dims.front(), "mlp input width mismatch");
  Mat h = x;
  for (size_t l = 0; l < W.size(); ++l) {
    h = (h * W[l]).rowwise() + b[l].row(0);
    if (l + 1 < W.size()) h = h.array().tanh();
  }
  return h;
}

MlpGraph mlp_forward_graph(Tape& t, const Mlp& net, Tape::NodeId input,
                           bool trainable) {
  MlpGraph g;
  Tape::NodeId h = input;
  for (size_t l = 0; l < net.W.size(); ++l) {
    Tape::NodeId w = t.leaf(net.W[l], trainable);
    Tape::NodeId bb = t.leaf(net.b[l], trainable);
    g.params.push_back(w);
    g.params.push_back(bb);
    h = t.add_rowvec(t.matmul(h, w), bb);
    if (l + 1 < net.W.size()) h = t.tanh(h);
  }
  g.out = h;
  return g;
}

// ----------------------------------------------------------- schedule

DiffusionSchedule DiffusionSchedule::linear(int num_steps, double start,
                                            double end) {
  if (num_steps < 2) throw InvalidSpec("schedule needs at least 2 steps");
  DiffusionSchedule s;
  s.num_steps = num_steps;
  s.alpha_bar.resize(num_steps);
  for (int t = 0; t < num_steps; ++t)
    s.alpha_bar(t) =
        start + (end - start) * double(t) / double(num_steps - 1);
  s.validate();
  return s;
}

void DiffusionSchedule::validate() const {
  if (alpha_bar.size() != num_steps)
    throw InvalidSpec("schedule length mismatch");
  if (!(alpha_bar(0) >= 0.99))
    throw InvalidSpec("schedule must start near 1 (alpha_bar[0] >= 0.99)");
  for (int t = 0; t < num_steps; ++t) {
    double a = alpha_bar(t);
    if (!(a > 0.0 && a < 1.0))
      throw InvalidSpec("alpha_bar values must lie in (0, 1)");
    if (t > 0 && !(a < alpha_bar(t - 1)))
      throw InvalidSpec("alpha_bar must decrease strictly");
  }
}

// ---------------------------------------------------------- denoiser

Mat time_embedding(const std::vector<int>& t, int num_steps, int temb_dim) {
  if (temb_dim % 2 != 0) throw InvalidSpec("temb_dim must be even");
  Mat e(long(t.size()), temb_dim);
  for (size_t i = 0; i < t.size(); ++i) {
    double tn = (double(t[i]) + 0.5) / double(num_steps);
    for (int j = 0; j < temb_dim / 2; ++j) {
      double w = M_PI * std::pow(2.0, double(j));
      e(long(i), 2 * j) = std::sin(w * tn);
      e(long(i), 2 * j + 1) = std::cos(w * tn);
    }
  }
  return e;
}

DiffusionNet DiffusionNet::init(int state_dim, int cond_dim, int temb_dim,
                                const std::vector<int>& hidden, Rng& rng) {
  if (hidden.empty()) throw InvalidSpec("denoiser needs a hidden layer");
  DiffusionNet n;
  n.state_dim = state_dim;
  n.cond_dim = cond_dim;
  n.temb_dim = temb_dim;
  int width = hidden[0];
  double a = 1.0 / std::sqrt(double(state_dim + cond_dim + temb_dim));
  n.Wx = rng.uniform_mat(state_dim, width, -a, a);
  n.Wc = rng.uniform_mat(cond_dim, width, -a, a);
  n.Wt = rng.uniform_mat(temb_dim, width, -a, a);
  n.b0 = Mat::Zero(1, width);
  std::vector<int> tail_dims(hidden.begin(), hidden.end());
  tail_dims.push_back(state_dim);
  n.tail = Mlp::init(tail_dims, rng);
  n.null_token = Mat::Zero(1, cond_dim);
  return n;
}

Mat DiffusionNet::first_layer(const Mat& xt, const Mat& cond,
                              const Mat& temb) const {
  Mat h = xt * Wx + cond * Wc + temb * Wt;
  h.rowwise() += b0.row(0);
  return h.array().tanh();
}

Mat DiffusionNet::forward(const Mat& xt, const Mat& cond,
                          const Mat& temb) const {
  return tail.forward(first_layer(xt, cond, temb));
}

// --------------------------------------------------------------- fits

namespace {

struct HoldoutSplit {
  Mat train_x, train_y, hold_x, hold_y;
};

HoldoutSplit split_holdout(const Mat& x, const Mat& y, double fraction) {
  long n = x.rows();
  long h = long(std::floor(double(n) * fraction));
  if (h >= n) h = n - 1;
  HoldoutSplit s;
  s.train_x = x.topRows(n - h);
  s.train_y = y.topRows(n - h);
  if (h > 0) {
    s.hold_x = x.bottomRows(h);
    s.hold_y = y.bottomRows(h);
  }
  return s;
}

void check_pairs(const Mat& anchors, const Mat& targets) {
  if (anchors.rows() == 0) throw EmptyInput("proxy fit: no pairs");
  require_shape(anchors.rows() == targets.rows(),
                "proxy fit: anchors and targets must pair up");
}

std::vector<int> shuffled_indices(long n, Rng& rng) {
  std::vector<int> idx(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) idx[size_t(i)] = int(i);
  rng.shuffle(idx);
  return idx;
}

Mat gather_rows(const Mat& m, const std::vector<int>& idx, size_t lo,
                size_t hi) {
  Mat out(long(hi - lo), m.cols());
  for (size_t i = lo; i < hi; ++i) out.row(long(i - lo)) = m.row(idx[i]);
  return out;
}

}  // namespace

ProxyPredictor fit_regressor(const Mat& anchors, const Mat& targets,
                             const RegressorConfig& cfg, uint64_t seed,
                             FitStats* stats) {
  check_pairs(anchors, targets);
  HoldoutSplit hs = split_holdout(anchors, targets, cfg.holdout_fraction);

  Rng rng(seed);
  std::vector<int> dims;
  dims.push_back(int(anchors.cols()));
  for (int h : cfg.hidden) dims.push_back(h);
  dims.push_back(int(targets.cols()));
  Mlp net = Mlp::init(dims, rng);

  long n = hs.train_x.rows();
  long steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = cfg.weight_decay;
  ocfg.total_steps = cfg.epochs * steps_per_epoch;
  AdamW opt(ocfg);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> idx = shuffled_indices(n, rng);
    double epoch_loss = 0.0;
    long batches = 0;
    for (long s = 0; s < n; s += cfg.batch_size) {
      size_t lo = size_t(s), hi = size_t(std::min(n, s + cfg.batch_size));
      Mat bx = gather_rows(hs.train_x, idx, lo, hi);
      Mat by = gather_rows(hs.train_y, idx, lo, hi);
      Tape t;
      MlpGraph g = mlp_forward_graph(t, net, t.leaf(bx, false), true);
      Tape::NodeId loss = t.mse_const(g.out, by);
      t.backward(loss);
      epoch_loss += t.scalar(loss);
      ++batches;
      std::vector<Mat*> params;
      std::vector<const Mat*> grads;
      for (size_t l = 0; l < net.W.size(); ++l) {
        params.push_back(&net.W[l]);
        grads.push_back(&t.grad(g.params[2 * l]));
        params.push_back(&net.b[l]);
        grads.push_back(&t.grad(g.params[2 * l + 1]));
      }
      opt.step(params, grads);
    }
    if (stats) stats->epoch_loss.push_back(epoch_loss / double(batches));
  }

  if (stats && hs.hold_x.rows() > 0) {
    Mat pred = net.forward(hs.hold_x);
    stats->holdout_mse =
        (pred - hs.hold_y).squaredNorm() / double(hs.hold_x.rows());
  }

  ProxyPredictor p;
  p.kind = cfg.hidden.empty() ? ProxyKind::kLinear : ProxyKind::kMlp;
  p.dim = int(targets.cols());
  p.regressor = std::move(net);
  return p;
}

ProxyPredictor diffusion_fit(const Mat& anchors, const Mat& targets,
                             const DiffusionConfig& cfg, uint64_t seed,
                             FitStats* stats) {
  check_pairs(anchors, targets);
  HoldoutSplit hs = split_holdout(anchors, targets, cfg.holdout_fraction);

  Rng rng(seed);
  DiffusionPredictor pred;
  pred.sched = DiffusionSchedule::linear(cfg.num_steps);
  pred.guidance_scale = cfg.guidance_scale;
  pred.predict_noise = cfg.predict_noise;
  pred.cfg_dropout = cfg.cfg_dropout;
  pred.init_seed = derive_seed(seed, 0x5eedULL);
  pred.net = DiffusionNet::init(int(targets.cols()), int(anchors.cols()),
                                cfg.temb_dim, cfg.hidden, rng);
  DiffusionNet& net = pred.net;

  long n = hs.train_x.rows();
  long steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = cfg.weight_decay;
  ocfg.total_steps = cfg.epochs * steps_per_epoch;
  AdamW opt(ocfg);

  std::vector<Mat*> tracked = {&net.Wx, &net.Wc, &net.Wt, &net.b0};
  for (size_t l = 0; l < net.tail.W.size(); ++l) {
    tracked.push_back(&net.tail.W[l]);
    tracked.push_back(&net.tail.b[l]);
  }
  tracked.push_back(&net.null_token);
  std::vector<Mat> shadow;
  if (cfg.ema_decay > 0.0)
    for (Mat* m : tracked) shadow.push_back(*m);
  long opt_steps = 0;

  const int T = pred.sched.num_steps;
  const int d = net.state_dim;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> idx = shuffled_indices(n, rng);
    double epoch_loss = 0.0;
    long batches = 0;
    for (long s = 0; s < n; s += cfg.batch_size) {
      size_t lo = size_t(s), hi = size_t(std::min(n, s + cfg.batch_size));
      long bn = long(hi - lo);
      Mat x0 = gather_rows(hs.train_y, idx, lo, hi);
      Mat cond = gather_rows(hs.train_x, idx, lo, hi);

      Mat xt(bn, d), target(bn, d), cmask = cond, ind = Mat::Zero(bn, 1);
      std::vector<int> ts(static_cast<size_t>(bn));
      for (long i = 0; i < bn; ++i) {
        int t = rng.uniform_int(T);
        ts[size_t(i)] = t;
        double ab = pred.sched.alpha_bar(t);
        Vec eps(d);
        for (int j = 0; j < d; ++j) eps(j) = rng.normal();
        xt.row(i) = std::sqrt(ab) * x0.row(i) +
                    std::sqrt(1.0 - ab) * eps.transpose();
        if (cfg.predict_noise)
          target.row(i) = eps.transpose();
        else
          target.row(i) = x0.row(i);
        if (stats) ++stats->cfg_draws;
        if (rng.uniform() < cfg.cfg_dropout) {
          cmask.row(i).setZero();
          ind(i, 0) = 1.0;
          if (stats) ++stats->cfg_dropped;
        }
      }
      Mat temb = time_embedding(ts, T, net.temb_dim);

      Tape t;
      Tape::NodeId xtL = t.leaf(xt, false);
      Tape::NodeId cmaskL = t.leaf(cmask, false);
      Tape::NodeId indL = t.leaf(ind, false);
      Tape::NodeId tembL = t.leaf(temb, false);
      Tape::NodeId nullL = t.leaf(net.null_token, true);
      Tape::NodeId WxL = t.leaf(net.Wx, true);
      Tape::NodeId WcL = t.leaf(net.Wc, true);
      Tape::NodeId WtL = t.leaf(net.Wt, true);
      Tape::NodeId b0L = t.leaf(net.b0, true);

      Tape::NodeId ceff = t.add(cmaskL, t.matmul(indL, nullL));
      Tape::NodeId pre = t.add_rowvec(
          t.add(t.add(t.matmul(xtL, WxL), t.matmul(ceff, WcL)),
                t.matmul(tembL, WtL)),
          b0L);
      Tape::NodeId h1 = t.tanh(pre);
      MlpGraph tail = mlp_forward_graph(t, net.tail, h1, true);
      Tape::NodeId loss = t.mse_const(tail.out, target);
      t.backward(loss);
      epoch_loss += t.scalar(loss);
      ++batches;

      std::vector<Mat*> params = {&net.Wx, &net.Wc, &net.Wt, &net.b0};
      std::vector<const Mat*> grads = {&t.grad(WxL), &t.grad(WcL),
                                       &t.grad(WtL), &t.grad(b0L)};
      for (size_t l = 0; l < net.tail.W.size(); ++l) {
        params.push_back(&net.tail.W[l]);
        grads.push_back(&t.grad(tail.params[2 * l]));
        params.push_back(&net.tail.b[l]);
        grads.push_back(&t.grad(tail.params[2 * l + 1]));
      }
      params.push_back(&net.null_token);
      grads.push_back(&t.grad(nullL));
      opt.step(params, grads);
      ++opt_steps;
      if (cfg.ema_decay > 0.0) {
        // ramp keeps early shadows from clinging to the init
        double dec = std::min(cfg.ema_decay,
                              double(opt_steps) / double(opt_steps + 10));
        for (size_t k = 0; k < tracked.size(); ++k)
          shadow[k] = dec * shadow[k] + (1.0 - dec) * (*tracked[k]);
      }
    }
    if (stats) stats->epoch_loss.push_back(epoch_loss / double(batches));
  }
  if (cfg.ema_decay > 0.0)
    for (size_t k = 0; k < tracked.size(); ++k) *tracked[k] = shadow[k];

  ProxyPredictor p;
  p.kind = ProxyKind::kDiffusion;
  p.dim = int(targets.cols());
  p.diff = std::move(pred);

  if (stats && hs.hold_x.rows() > 0)
    stats->holdout_mse = diffusion_denoise_loss_at(
        p.diff, hs.hold_x, hs.hold_y, 0, derive_seed(seed, 0x401dULL));
  return p;
}

Mat diffusion_sample(const DiffusionPredictor& pred, const Mat& anchors) {
  if (anchors.rows() == 0) throw EmptyInput("diffusion_sample: no anchors");
  const DiffusionNet& net = pred.net;
  require_shape(anchors.cols() == net.cond_dim,
                "diffusion_sample: condition width mismatch");
  const int T = pred.sched.num_steps;
  const long n = anchors.rows();
  const int d = net.state_dim;

  Rng init_rng(pred.init_seed);
  Mat init = init_rng.normal_mat(1, d);
  Mat x = init.replicate(n, 1);
  Mat nulls = net.null_token.replicate(n, 1);
  const double w = pred.guidance_scale;

  Mat x0hat;
  for (int t = T - 1; t >= 0; --t) {
    Mat temb = time_embedding(std::vector<int>(size_t(n), t), T, net.temb_dim);
    Mat out = net.forward(x, anchors, temb);
    if (w != 0.0) {
      Mat out_u = net.forward(x, nulls, temb);
      out = out + w * (out - out_u);
    }
    double ab = pred.sched.alpha_bar(t);
    if (pred.predict_noise)
      x0hat = (x - std::sqrt(1.0 - ab) * out) / std::sqrt(ab);
    else
      x0hat = out;
    Mat eps_implied = (x - std::sqrt(ab) * x0hat) / std::sqrt(1.0 - ab);
    double ab_prev = t > 0 ? pred.sched.alpha_bar(t - 1) : 1.0;
    x = std::sqrt(ab_prev) * x0hat +
        std::sqrt(1.0 - ab_prev) * eps_implied;
  }
  return normalize_rows(x);
}

ProxyPredictor fit_noise(int dim, uint64_t seed, double variance) {
  if (dim < 2) throw InvalidSpec("noise predictor needs dim >= 2");
  Rng rng(seed);
  ProxyPredictor p;
  p.kind = ProxyKind::kNoise;
  p.dim = dim;
  p.noise.eta.resize(dim);
  double sd = std::sqrt(variance);
  for (int j = 0; j < dim; ++j) p.noise.eta(j) = sd * rng.normal();
  return p;
}

ProxyPredictor fit_memory(const Mat& same, const Mat& cross, double tau_m) {
  check_pairs(same, cross);
  if (!(tau_m > 0.0)) throw InvalidSpec("memory temperature must be positive");
  ProxyPredictor p;
  p.kind = ProxyKind::kMemory;
  p.dim = int(cross.cols());
  p.memory.same = same;
  p.memory.cross = cross;
  p.memory.tau_m = tau_m;
  return p;
}

Vec memory_proxy(const MemoryBank& bank, const Vec& query) {
  if (bank.same.rows() == 0) throw EmptyInput("memory_proxy: empty bank");
  Vec q = normalize(query);
  Vec logits(bank.same.rows());
  for (long k = 0; k < bank.same.rows(); ++k)
    logits(k) = normalize(Vec(bank.same.row(k))).dot(q) / bank.tau_m;
  double m = logits.maxCoeff();
  Vec w = (logits.array() - m).exp();
  w /= w.sum();
  Vec out = bank.cross.transpose() * w;
  return normalize(out);
}

Vec ProxyPredictor::predict(const Vec& c) const {
  return Vec(predict_batch(Mat(c.transpose())).row(0));
}

Mat ProxyPredictor::predict_batch(const Mat& anchors) const {
  if (anchors.rows() == 0) throw EmptyInput("predict_batch: no anchors");
  switch (kind) {
    case ProxyKind::kMlp:
    case ProxyKind::kLinear:
      return normalize_rows(regressor.forward(anchors));
    case ProxyKind::kNoise: {
      Mat out = anchors;
      out.rowwise() += noise.eta.transpose();
      return normalize_rows(out);
    }
    case ProxyKind::kMemory: {
      Mat out(anchors.rows(), dim);
      for (long i = 0; i < anchors.rows(); ++i)
        out.row(i) = memory_proxy(memory, Vec(anchors.row(i))).transpose();
      return out;
    }
    case ProxyKind::kDiffusion:
      return diffusion_sample(diff, anchors);
  }
  throw InvalidSpec("predict_batch: unknown kind");
}

double diffusion_denoise_loss_at(const DiffusionPredictor& pred,
                                 const Mat& anchors, const Mat& targets,
                                 int t, uint64_t seed) {
  check_pairs(anchors, targets);
  if (t < 0 || t >= pred.sched.num_steps)
    throw InvalidSpec("diffusion step index out of range");
  Rng rng(seed);
  long n = anchors.rows();
  int d = pred.net.state_dim;
  double ab = pred.sched.alpha_bar(t);
  Mat xt(n, d), target(n, d);
  for (long i = 0; i < n; ++i) {
    Vec eps(d);
    for (int j = 0; j < d; ++j) eps(j) = rng.normal();
    xt.row(i) = std::sqrt(ab) * targets.row(i) +
                std::sqrt(1.0 - ab) * eps.transpose();
    if (pred.predict_noise)
      target.row(i) = eps.transpose();
    else
      target.row(i) = targets.row(i);
  }
  Mat temb =
      time_embedding(std::vector<int>(size_t(n), t), pred.sched.num_steps,
                     pred.net.temb_dim);
  Mat out = pred.net.forward(xt, anchors, temb);
  return (out - target).squaredNorm() / double(n);
}

std::vector<std::pair<double, double>> proxy_fidelity_cdf(const Mat& proxies,
                                                          const Mat& targets) {
  if (proxies.rows() == 0) throw EmptyInput("proxy_fidelity_cdf: no rows");
  require_shape(proxies.rows() == targets.rows(),
                "proxy_fidelity_cdf: row counts differ");
  std::vector<double> sims(size_t(proxies.rows()));
  for (long i = 0; i < proxies.rows(); ++i)
    sims[size_t(i)] = cosine_sim(Vec(proxies.row(i)), Vec(targets.row(i)));
  std::sort(sims.begin(), sims.end());
  std::vector<std::pair<double, double>> pts;
  pts.reserve(sims.size());
  for (size_t i = 0; i < sims.size(); ++i)
    pts.emplace_back(sims[i], double(i + 1) / double(sims.size()));
  return pts;
}

double fidelity_median(const Mat& proxies, const Mat& targets) {
  auto pts = proxy_fidelity_cdf(proxies, targets);
  size_t n = pts.size();
  if (n % 2 == 1) return pts[n / 2].first;
  return 0.5 * (pts[n / 2 - 1].first + pts[n / 2].first);
}

double proxy_collapse_fraction(const Mat& proxies, double cos_threshold) {
  long n = proxies.rows();
  if (n < 2) return 0.0;
  long stride = 1;
  while ((n / stride) * (n / stride - 1) / 2 > 200000) ++stride;
  long hits = 0, total = 0;
  for (long i = 0; i < n; i += stride)
    for (long j = i + stride; j < n; j += stride) {
      ++total;
      if (cosine_sim(Vec(proxies.row(i)), Vec(proxies.row(j))) >
          cos_threshold)
        ++hits;
    }
  return total ? double(hits) / double(total) : 0.0;
}

}  // namespace embridge
