#pragma once

#include <string>

#include "embridge/pipeline.hpp"

namespace embridge {

struct EvalConfig {
  std::vector<int> recall_ks = {1, 5, 10};
};

struct SweepConfig {
  std::vector<double> lambdas = {0.0, 0.1, 1.0, 10.0, 100.0};
};

// One experiment = one config. The JSON schema mirrors this struct; parsing
// is strict and names any unknown key. The echoed config reproduces the run
// byte for byte.
struct ExperimentConfig {
  WorldSpec world;
  Stage1Config stage1;
  Stage2Config stage2;
  Stage3Config stage3;
  EvalConfig eval;
  SweepConfig sweep;
  uint64_t seed = 7;
  std::string out = "out";
  std::string mode = "train";
};

ExperimentConfig default_config();
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);

/// Dotted-path override, e.g. "stage3.lambda=10" or
/// "world.train_pairs=[\"anchor_a\",\"anchor_b\"]". The path must name an
/// existing key.
void apply_override(ExperimentConfig& cfg, const std::string& dotted_kv);

/// Dispatch on cfg.mode: gen-data | train | eval | sweep | verify | ablate.
/// Writes artifacts under cfg.out and prints line-delimited metric records.
void run_experiment(const ExperimentConfig& cfg);

void run_gen_data(const ExperimentConfig& cfg);
/// Returns the metrics JSON written to <out>/metrics.json.
std::string run_train(const ExperimentConfig& cfg);
std::string run_eval(const ExperimentConfig& cfg);
void run_sweep(const ExperimentConfig& cfg);
void run_verify(const ExperimentConfig& cfg);
void run_ablate(const ExperimentConfig& cfg);

}  // namespace embridge
