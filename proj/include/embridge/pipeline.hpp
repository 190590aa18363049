#pragma once

#include "embridge/encoder.hpp"
#include "embridge/losses.hpp"
#include "embridge/optimizer.hpp"
#include "embridge/proxy.hpp"
#include "embridge/world.hpp"

namespace embridge {

// Three-stage bridge training. Stage 1 aligns the modality-A encoder to the
// shared anchors and freezes it. Stage 2 fits a proxy predictor from anchors
// to frozen A-embeddings. Stage 3 trains the modality-B encoder against
// anchors plus the regularized proxy term; it never touches modality-A data
// or the predictor parameters.

struct Stage1Config {
  bool enabled = true;
  int epochs = 40;
  int batch_size = 64;
  double tau = 0.07;
  double lr = 3e-3;
  double weight_decay = 1e-4;
  std::vector<int> hidden = {64, 64};
};

struct Stage2Config {
  ProxyKind kind = ProxyKind::kDiffusion;
  RegressorConfig regressor;  // mlp / linear baselines
  DiffusionConfig diffusion;
  double memory_tau = 0.07;
  double noise_variance = 1e-3;
};

struct Stage3Config {
  int epochs = 40;
  int batch_size = 64;
  double tau = 0.07;
  double lambda = 1.0;
  double lr = 3e-3;
  double weight_decay = 1e-4;
  std::vector<int> hidden = {64, 64};
  ProxyAlignMode mode = ProxyAlignMode::kOsr;
  int monitor_every = 50;  // steps between gradient probes; 0 disables
};

struct EpochRecord {
  std::string stage;
  int epoch = 0;
  long steps = 0;
  double mean_loss = 0.0;
  double mean_infonce = 0.0;
  double mean_osr = 0.0;
  long skipped_samples = 0;
  double lr_last = 0.0;
};

struct MonitorRecord {
  long step = 0;
  double lambda = 0.0;
  double bound = 0.0;          // measured per-batch weight bound
  double inner_product = 0.0;  // descent-inner-product probe
  bool lambda_le_bound = false;
  bool satisfied = false;
  double ortho_diag = 0.0;  // mean |c_bar . g| / (norms) at the embeddings
  int skipped = 0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::vector<MonitorRecord> monitors;
  long samples_served = 0;      // audit: pair samples drawn from the split
  long degenerate_batches = 0;  // batches dropped whole (no usable rows)
  long monitor_violations = 0;  // inner < -tol while within the bound
};

struct Stage1Result {
  Encoder encoder;  // frozen on return, trained or not
  TrainLog log;
};

Stage1Result stage1_anchor_align(const World& world, const Stage1Config& cfg,
                                 uint64_t seed);

struct Stage2Result {
  ProxyPredictor predictor;
  FitStats stats;
  double fidelity_median_eval = 0.0;  // cos(proxy, frozen A-embedding)
  std::vector<std::pair<double, double>> fidelity_cdf_eval;
  double collapse_fraction = 0.0;
};

Stage2Result stage2_proxy_fit(const World& world, const Encoder& enc_a,
                              const Stage2Config& cfg, uint64_t seed);

/// Proxies for the B-side training split, row-aligned with it. Computed once
/// per predictor so sweeps can share them.
Mat proxies_for_split(const ProxyPredictor& pred, const Split& split);

struct Stage3Result {
  Encoder encoder;  // trained modality-B encoder
  TrainLog log;
  double mean_ortho_diag = 0.0;  // mean over monitor probes
};

Stage3Result stage3_bridge_align(const World& world, const Mat& proxies,
                                 const Stage3Config& cfg, uint64_t seed);

}  // namespace embridge
