#pragma once

#include "embridge/tape.hpp"

namespace embridge {

enum class ProxyKind { kDiffusion, kMlp, kLinear, kNoise, kMemory };

std::string proxy_kind_name(ProxyKind k);
ProxyKind proxy_kind_from_name(const std::string& name);

/// Plain MLP (affine + tanh hidden layers, linear head, no output
/// normalization). Used for the regression predictors and the denoiser tail.
struct Mlp {
  std::vector<int> dims;
  std::vector<Mat> W;
  std::vector<Mat> b;

  static Mlp init(const std::vector<int>& dims, Rng& rng);
  Mat forward(const Mat& x) const;
};

struct MlpGraph {
  Tape::NodeId out = -1;
  std::vector<Tape::NodeId> params;
};
MlpGraph mlp_forward_graph(Tape& t, const Mlp& net, Tape::NodeId input,
                           bool trainable);

/// Noise-to-signal schedule: alpha_bar decreasing from near 1.
struct DiffusionSchedule {
  int num_steps = 100;
  Vec alpha_bar;

  static DiffusionSchedule linear(int num_steps = 100, double start = 0.999,
                                  double end = 0.01);
  void validate() const;  // alpha_bar[0] >= 0.99, strictly decreasing, in (0,1)
};

/// Conditional denoiser: blocked first layer over [state | condition | time
/// embedding], tanh, then an Mlp tail. Classifier-free dropout swaps the
/// condition for a learned null row during fitting.
struct DiffusionNet {
  int state_dim = 0, cond_dim = 0, temb_dim = 8;
  Mat Wx, Wc, Wt;  // first-layer blocks (fan_in x width)
  Mat b0;          // 1 x width
  Mlp tail;        // width -> ... -> state_dim
  Mat null_token;  // 1 x cond_dim, learned

  static DiffusionNet init(int state_dim, int cond_dim, int temb_dim,
                           const std::vector<int>& hidden, Rng& rng);
  Mat first_layer(const Mat& xt, const Mat& cond, const Mat& temb) const;
  Mat forward(const Mat& xt, const Mat& cond, const Mat& temb) const;
};

Mat time_embedding(const std::vector<int>& t, int num_steps, int temb_dim);

struct DiffusionPredictor {
  DiffusionNet net;
  DiffusionSchedule sched;
  double guidance_scale = 1.0;  // 0 disables guidance (pure conditional)
  bool predict_noise = false;   // default parameterization predicts the state
  double cfg_dropout = 0.05;
  uint64_t init_seed = 0;  // fixed initial sampler state
};

struct MemoryBank {
  Mat same;   // K x d entries on the query side
  Mat cross;  // K x d paired entries on the output side
  double tau_m = 0.07;
};

struct NoisePredictor {
  Vec eta;  // drawn once at fit time; output = normalize(c + eta)
};

struct ProxyPredictor {
  ProxyKind kind = ProxyKind::kLinear;
  int dim = 0;
  Mlp regressor;            // kMlp / kLinear
  DiffusionPredictor diff;  // kDiffusion
  MemoryBank memory;        // kMemory
  NoisePredictor noise;     // kNoise

  /// Deterministic unit-norm proxy for one anchor embedding.
  Vec predict(const Vec& c) const;
  /// Row-wise predict; the diffusion chain runs vectorized over the batch.
  Mat predict_batch(const Mat& anchors) const;
};

struct RegressorConfig {
  std::vector<int> hidden;  // empty = linear model
  int epochs = 200;
  int batch_size = 128;
  double lr = 1e-2;
  double weight_decay = 0.0;
  double holdout_fraction = 0.1;
};

struct DiffusionConfig {
  std::vector<int> hidden = {96, 96};
  int num_steps = 100;
  int temb_dim = 16;
  int epochs = 800;
  int batch_size = 128;
  double lr = 3e-3;
  double weight_decay = 0.0;
  double cfg_dropout = 0.05;
  double guidance_scale = 1.0;
  bool predict_noise = false;
  double ema_decay = 0.999;  // weight average used for sampling; 0 disables
  double holdout_fraction = 0.1;
};

struct FitStats {
  std::vector<double> epoch_loss;
  double holdout_mse = 0.0;     // regression head
  long cfg_draws = 0;           // diffusion: conditioning draws seen
  long cfg_dropped = 0;         // diffusion: draws replaced by the null token
};

/// MSE-fit regression predictor (hidden empty gives the linear baseline).
ProxyPredictor fit_regressor(const Mat& anchors, const Mat& targets,
                             const RegressorConfig& cfg, uint64_t seed,
                             FitStats* stats = nullptr);

/// Denoising fit of the conditional diffusion predictor.
ProxyPredictor diffusion_fit(const Mat& anchors, const Mat& targets,
                             const DiffusionConfig& cfg, uint64_t seed,
                             FitStats* stats = nullptr);

/// Deterministic reverse process (eta = 0) from the predictor's fixed
/// initial state; returns unit rows.
Mat diffusion_sample(const DiffusionPredictor& pred, const Mat& anchors);

/// Perturbation baseline.
ProxyPredictor fit_noise(int dim, uint64_t seed, double variance = 1e-3);

/// Similarity-weighted memory readout over stored pairs.
ProxyPredictor fit_memory(const Mat& same, const Mat& cross,
                          double tau_m = 0.07);
Vec memory_proxy(const MemoryBank& bank, const Vec& query);

/// Mean denoising loss at one step index with seeded corruption; used to
/// probe convergence near the clean end of the schedule.
double diffusion_denoise_loss_at(const DiffusionPredictor& pred,
                                 const Mat& anchors, const Mat& targets,
                                 int t, uint64_t seed);

/// Empirical CDF of per-row cosine similarity between proxies and targets:
/// points (sorted value, rank/N).
std::vector<std::pair<double, double>> proxy_fidelity_cdf(const Mat& proxies,
                                                          const Mat& targets);
double fidelity_median(const Mat& proxies, const Mat& targets);

/// Fraction of (sampled) proxy pairs that are near-duplicates; collapse
/// diagnostic surfaced in run reports.
double proxy_collapse_fraction(const Mat& proxies, double cos_threshold = 0.999);

}  // namespace embridge
