#include "embridge/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <sstream>

#include "embridge/metrics.hpp"
#include "embridge/serialize.hpp"
#include "embridge/verify.hpp"
#include "json.hpp"

namespace embridge {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::string qualify(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

void check_keys(const ojson& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw ConfigError("config section '" + (where.empty() ? "root" : where) +
                      "' must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed)
      if (it.key() == a) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError("unknown config key: " + qualify(where, it.key()));
  }
}

template <typename T>
void get_if(const ojson& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const ojson::exception& e) {
    throw ConfigError("config key " + qualify(where, key) + ": " + e.what());
  }
}

std::string mode_name(ProxyAlignMode m) {
  return m == ProxyAlignMode::kOsr ? "osr" : "direct";
}

ProxyAlignMode mode_from_name(const std::string& s) {
  if (s == "osr") return ProxyAlignMode::kOsr;
  if (s == "direct") return ProxyAlignMode::kDirect;
  throw ConfigError("stage3.mode must be \"osr\" or \"direct\", got \"" + s +
                    "\"");
}

// ------------------------------------------------- config <-> json sections

ojson world_json(const WorldSpec& s) {
  ojson j;
  j["num_classes"] = s.num_classes;
  j["latent_dim"] = s.latent_dim;
  j["embed_dim"] = s.embed_dim;
  j["obs_dim_a"] = s.obs_dim_a;
  j["obs_dim_b"] = s.obs_dim_b;
  j["anchor_rank"] = s.anchor_rank;
  j["noise_std_a"] = s.noise_std_a;
  j["noise_std_b"] = s.noise_std_b;
  j["latent_jitter"] = s.latent_jitter;
  j["train_samples"] = s.train_samples;
  j["eval_samples"] = s.eval_samples;
  j["seed"] = s.seed;
  j["train_pairs"] = s.train_pairs;
  j["eval_pairs"] = s.eval_pairs;
  return j;
}

void world_from_json(const ojson& j, WorldSpec& s) {
  check_keys(j, "world",
             {"num_classes", "latent_dim", "embed_dim", "obs_dim_a",
              "obs_dim_b", "anchor_rank", "noise_std_a", "noise_std_b",
              "latent_jitter", "train_samples", "eval_samples", "seed",
              "train_pairs", "eval_pairs"});
  get_if(j, "num_classes", s.num_classes, "world");
  get_if(j, "latent_dim", s.latent_dim, "world");
  get_if(j, "embed_dim", s.embed_dim, "world");
  get_if(j, "obs_dim_a", s.obs_dim_a, "world");
  get_if(j, "obs_dim_b", s.obs_dim_b, "world");
  get_if(j, "anchor_rank", s.anchor_rank, "world");
  get_if(j, "noise_std_a", s.noise_std_a, "world");
  get_if(j, "noise_std_b", s.noise_std_b, "world");
  get_if(j, "latent_jitter", s.latent_jitter, "world");
  get_if(j, "train_samples", s.train_samples, "world");
  get_if(j, "eval_samples", s.eval_samples, "world");
  get_if(j, "seed", s.seed, "world");
  get_if(j, "train_pairs", s.train_pairs, "world");
  get_if(j, "eval_pairs", s.eval_pairs, "world");
}

ojson stage1_json(const Stage1Config& s) {
  ojson j;
  j["enabled"] = s.enabled;
  j["epochs"] = s.epochs;
  j["batch_size"] = s.batch_size;
  j["tau"] = s.tau;
  j["lr"] = s.lr;
  j["weight_decay"] = s.weight_decay;
  j["hidden"] = s.hidden;
  return j;
}

void stage1_from_json(const ojson& j, Stage1Config& s) {
  check_keys(j, "stage1",
             {"enabled", "epochs", "batch_size", "tau", "lr", "weight_decay",
              "hidden"});
  get_if(j, "enabled", s.enabled, "stage1");
  get_if(j, "epochs", s.epochs, "stage1");
  get_if(j, "batch_size", s.batch_size, "stage1");
  get_if(j, "tau", s.tau, "stage1");
  get_if(j, "lr", s.lr, "stage1");
  get_if(j, "weight_decay", s.weight_decay, "stage1");
  get_if(j, "hidden", s.hidden, "stage1");
}

ojson regressor_json(const RegressorConfig& r) {
  ojson j;
  j["hidden"] = r.hidden;
  j["epochs"] = r.epochs;
  j["batch_size"] = r.batch_size;
  j["lr"] = r.lr;
  j["weight_decay"] = r.weight_decay;
  j["holdout_fraction"] = r.holdout_fraction;
  return j;
}

void regressor_from_json(const ojson& j, RegressorConfig& r) {
  check_keys(j, "stage2.regressor",
             {"hidden", "epochs", "batch_size", "lr", "weight_decay",
              "holdout_fraction"});
  get_if(j, "hidden", r.hidden, "stage2.regressor");
  get_if(j, "epochs", r.epochs, "stage2.regressor");
  get_if(j, "batch_size", r.batch_size, "stage2.regressor");
  get_if(j, "lr", r.lr, "stage2.regressor");
  get_if(j, "weight_decay", r.weight_decay, "stage2.regressor");
  get_if(j, "holdout_fraction", r.holdout_fraction, "stage2.regressor");
}

ojson diffusion_json(const DiffusionConfig& d) {
  ojson j;
  j["hidden"] = d.hidden;
  j["num_steps"] = d.num_steps;
  j["temb_dim"] = d.temb_dim;
  j["epochs"] = d.epochs;
  j["batch_size"] = d.batch_size;
  j["lr"] = d.lr;
  j["weight_decay"] = d.weight_decay;
  j["cfg_dropout"] = d.cfg_dropout;
  j["guidance_scale"] = d.guidance_scale;
  j["parameterization"] = d.predict_noise ? "eps" : "x0";
  j["ema_decay"] = d.ema_decay;
  j["holdout_fraction"] = d.holdout_fraction;
  return j;
}

void diffusion_from_json(const ojson& j, DiffusionConfig& d) {
  check_keys(j, "stage2.diffusion",
             {"hidden", "num_steps", "temb_dim", "epochs", "batch_size", "lr",
              "weight_decay", "cfg_dropout", "guidance_scale",
              "parameterization", "ema_decay", "holdout_fraction"});
  get_if(j, "hidden", d.hidden, "stage2.diffusion");
  get_if(j, "num_steps", d.num_steps, "stage2.diffusion");
  get_if(j, "temb_dim", d.temb_dim, "stage2.diffusion");
  get_if(j, "epochs", d.epochs, "stage2.diffusion");
  get_if(j, "batch_size", d.batch_size, "stage2.diffusion");
  get_if(j, "lr", d.lr, "stage2.diffusion");
  get_if(j, "weight_decay", d.weight_decay, "stage2.diffusion");
  get_if(j, "cfg_dropout", d.cfg_dropout, "stage2.diffusion");
  get_if(j, "guidance_scale", d.guidance_scale, "stage2.diffusion");
  if (j.contains("parameterization")) {
    std::string p = j.at("parameterization").get<std::string>();
    if (p == "eps")
      d.predict_noise = true;
    else if (p == "x0")
      d.predict_noise = false;
    else
      throw ConfigError(
          "stage2.diffusion.parameterization must be \"x0\" or \"eps\", "
          "got \"" + p + "\"");
  }
  get_if(j, "ema_decay", d.ema_decay, "stage2.diffusion");
  get_if(j, "holdout_fraction", d.holdout_fraction, "stage2.diffusion");
}

ojson stage2_json(const Stage2Config& s) {
  ojson j;
  j["kind"] = proxy_kind_name(s.kind);
  j["regressor"] = regressor_json(s.regressor);
  j["diffusion"] = diffusion_json(s.diffusion);
  j["memory_tau"] = s.memory_tau;
  j["noise_variance"] = s.noise_variance;
  return j;
}

void stage2_from_json(const ojson& j, Stage2Config& s) {
  check_keys(j, "stage2",
             {"kind", "regressor", "diffusion", "memory_tau",
              "noise_variance"});
  if (j.contains("kind")) {
    std::string k = j.at("kind").get<std::string>();
    try {
      s.kind = proxy_kind_from_name(k);
    } catch (const Error&) {
      throw ConfigError("stage2.kind: unknown predictor kind \"" + k + "\"");
    }
  }
  if (j.contains("regressor")) regressor_from_json(j.at("regressor"), s.regressor);
  if (j.contains("diffusion")) diffusion_from_json(j.at("diffusion"), s.diffusion);
  get_if(j, "memory_tau", s.memory_tau, "stage2");
  get_if(j, "noise_variance", s.noise_variance, "stage2");
}

ojson stage3_json(const Stage3Config& s) {
  ojson j;
  j["epochs"] = s.epochs;
  j["batch_size"] = s.batch_size;
  j["tau"] = s.tau;
  j["lambda"] = s.lambda;
  j["lr"] = s.lr;
  j["weight_decay"] = s.weight_decay;
  j["hidden"] = s.hidden;
  j["mode"] = mode_name(s.mode);
  j["monitor_every"] = s.monitor_every;
  return j;
}

void stage3_from_json(const ojson& j, Stage3Config& s) {
  check_keys(j, "stage3",
             {"epochs", "batch_size", "tau", "lambda", "lr", "weight_decay",
              "hidden", "mode", "monitor_every"});
  get_if(j, "epochs", s.epochs, "stage3");
  get_if(j, "batch_size", s.batch_size, "stage3");
  get_if(j, "tau", s.tau, "stage3");
  get_if(j, "lambda", s.lambda, "stage3");
  get_if(j, "lr", s.lr, "stage3");
  get_if(j, "weight_decay", s.weight_decay, "stage3");
  get_if(j, "hidden", s.hidden, "stage3");
  if (j.contains("mode")) s.mode = mode_from_name(j.at("mode").get<std::string>());
  get_if(j, "monitor_every", s.monitor_every, "stage3");
}

void check_mode(const std::string& m) {
  static const char* known[] = {"gen-data", "train", "eval",
                                "sweep",    "verify", "ablate"};
  for (const char* k : known)
    if (m == k) return;
  throw ConfigError("unknown mode \"" + m +
                    "\" (expected gen-data, train, eval, sweep, verify, "
                    "ablate)");
}

// --------------------------------------------------------------- run utils

std::string join(const std::string& dir, const char* name) {
  return (fs::path(dir) / name).string();
}

void ensure_outdir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output dir: " + out);
}

void emit(const char* name, const ojson& value) {
  ojson j;
  j["metric"] = name;
  j["value"] = value;
  std::cout << j.dump() << '\n';
}

World acquire_world(const ExperimentConfig& cfg) {
  const std::string wp = join(cfg.out, "world.ebw");
  if (fs::exists(wp)) {
    World w = load_world(wp);
    if (world_json(w.spec) != world_json(cfg.world))
      throw ConfigError("existing world file does not match world config: " +
                        wp);
    return w;
  }
  World w = generate_world(cfg.world);
  save_world(w, wp);
  return w;
}

ojson retrieval_json(const RetrievalResult& r) {
  ojson o;
  for (size_t i = 0; i < r.ks.size(); ++i)
    o["recall_at_" + std::to_string(r.ks[i])] = r.recall[i];
  return o;
}

std::vector<int> iota_truth(long n) {
  std::vector<int> t(static_cast<size_t>(n));
  std::iota(t.begin(), t.end(), 0);
  return t;
}

ojson evaluate_encoders(const World& w, const Encoder& enc_a,
                        const Encoder& enc_b, const ProxyPredictor* pred,
                        const std::vector<int>& ks, PairAudit* audit) {
  const Split& ev = w.eval_set;
  Mat xa = encoder_forward(enc_a, ev.obs_a);
  Mat xb = encoder_forward(enc_b, ev.obs_b);
  std::vector<int> truth = iota_truth(ev.size());

  ojson j;
  if (pair_allowed(w.spec, PairKind::kAB, SplitKind::kEval)) {
    j["emergent_b_to_a"] = retrieval_json(recall_at_k(xb, xa, truth, ks));
    if (audit) audit->record(PairKind::kAB, SplitKind::kEval, ev.size());
  }
  j["anchor_b_to_c"] = retrieval_json(recall_at_k(xb, ev.anchors, truth, ks));
  j["anchor_c_to_b"] = retrieval_json(recall_at_k(ev.anchors, xb, truth, ks));
  j["anchor_a_to_c"] = retrieval_json(recall_at_k(xa, ev.anchors, truth, ks));
  if (audit) {
    audit->record(PairKind::kAnchorB, SplitKind::kEval, 2 * ev.size());
    audit->record(PairKind::kAnchorA, SplitKind::kEval, ev.size());
  }
  j["top1_zero_shot_b"] = top1_zero_shot(xb, w.class_prototypes, ev.labels);
  if (pred) {
    Mat proxies = pred->predict_batch(ev.anchors);
    j["proxy_fidelity_median"] = fidelity_median(proxies, xa);
    j["proxy_collapse_fraction"] = proxy_collapse_fraction(proxies);
  }
  return j;
}

struct QuickEval {
  double emergent_r1 = 0.0;
  double anchor_b_to_c_r1 = 0.0;
  double anchor_c_to_b_r1 = 0.0;
  double top1 = 0.0;
};

QuickEval quick_eval(const World& w, const Encoder& enc_a,
                     const Encoder& enc_b) {
  const Split& ev = w.eval_set;
  Mat xa = encoder_forward(enc_a, ev.obs_a);
  Mat xb = encoder_forward(enc_b, ev.obs_b);
  std::vector<int> truth = iota_truth(ev.size());
  std::vector<int> ks = {1};
  QuickEval q;
  q.emergent_r1 = recall_at_k(xb, xa, truth, ks).recall_at(1);
  q.anchor_b_to_c_r1 = recall_at_k(xb, ev.anchors, truth, ks).recall_at(1);
  q.anchor_c_to_b_r1 = recall_at_k(ev.anchors, xb, truth, ks).recall_at(1);
  q.top1 = top1_zero_shot(xb, w.class_prototypes, ev.labels);
  return q;
}

std::string log_jsonl(const TrainLog& log) {
  std::ostringstream os;
  for (const EpochRecord& e : log.epochs) {
    ojson j;
    j["type"] = "epoch";
    j["stage"] = e.stage;
    j["epoch"] = e.epoch;
    j["steps"] = e.steps;
    j["mean_loss"] = e.mean_loss;
    j["mean_infonce"] = e.mean_infonce;
    j["mean_osr"] = e.mean_osr;
    j["skipped_samples"] = e.skipped_samples;
    j["lr_last"] = e.lr_last;
    os << j.dump() << '\n';
  }
  for (const MonitorRecord& m : log.monitors) {
    ojson j;
    j["type"] = "monitor";
    j["step"] = m.step;
    j["lambda"] = m.lambda;
    j["bound"] = m.bound;
    j["inner_product"] = m.inner_product;
    j["lambda_le_bound"] = m.lambda_le_bound;
    j["satisfied"] = m.satisfied;
    j["ortho_diag"] = m.ortho_diag;
    j["skipped"] = m.skipped;
    os << j.dump() << '\n';
  }
  return os.str();
}

std::string cdf_csv(const std::vector<std::pair<double, double>>& cdf) {
  std::ostringstream os;
  os << "cosine,cdf\n";
  for (const auto& p : cdf)
    os << fmt_double(p.first) << ',' << fmt_double(p.second) << '\n';
  return os.str();
}

ojson stage1_summary(const Stage1Config& cfg, const Stage1Result& s1) {
  ojson j;
  j["enabled"] = cfg.enabled;
  j["epochs"] = s1.log.epochs.size();
  j["final_loss"] =
      s1.log.epochs.empty() ? 0.0 : s1.log.epochs.back().mean_loss;
  return j;
}

ojson stage2_summary(const Stage2Config& cfg, const Stage2Result& s2) {
  ojson j;
  j["kind"] = proxy_kind_name(cfg.kind);
  j["fidelity_median"] = s2.fidelity_median_eval;
  j["collapse_fraction"] = s2.collapse_fraction;
  j["holdout_mse"] = s2.stats.holdout_mse;
  j["cfg_draws"] = s2.stats.cfg_draws;
  j["cfg_dropped"] = s2.stats.cfg_dropped;
  return j;
}

ojson stage3_summary(const Stage3Config& cfg, const Stage3Result& s3) {
  ojson j;
  j["lambda"] = cfg.lambda;
  j["mode"] = mode_name(cfg.mode);
  j["epochs"] = s3.log.epochs.size();
  const bool have = !s3.log.epochs.empty();
  j["final_loss"] = have ? s3.log.epochs.back().mean_loss : 0.0;
  j["final_infonce"] = have ? s3.log.epochs.back().mean_infonce : 0.0;
  j["final_osr"] = have ? s3.log.epochs.back().mean_osr : 0.0;
  long skipped = 0;
  for (const EpochRecord& e : s3.log.epochs) skipped += e.skipped_samples;
  j["skipped_samples"] = skipped;
  j["degenerate_batches"] = s3.log.degenerate_batches;
  j["monitor_probes"] = s3.log.monitors.size();
  j["monitor_violations"] = s3.log.monitor_violations;
  double min_inner = 0.0;
  bool first = true;
  for (const MonitorRecord& m : s3.log.monitors) {
    if (first || m.inner_product < min_inner) min_inner = m.inner_product;
    first = false;
  }
  j["min_monitor_inner"] = min_inner;
  j["mean_ortho_diag"] = s3.mean_ortho_diag;
  return j;
}

ojson audit_json(const PairAudit& audit) {
  ojson j;
  for (const auto& kv : audit.samples) j[kv.first] = kv.second;
  return j;
}

ojson probe_json(const TheoremProbe& p) {
  ojson j;
  j["lambda"] = p.lambda;
  j["bound"] = p.bound;
  j["bound_positive_pair"] = p.bound_positive_pair;
  j["align_grad_sq"] = p.align_grad_sq;
  j["cross_term"] = p.cross_term;
  j["inner_product"] = p.inner_product;
  j["inner_product_positive"] = p.inner_product_positive;
  j["lambda_le_bound"] = p.lambda_le_bound;
  j["satisfied"] = p.satisfied;
  j["fd_max_rel_err"] = p.fd_max_rel_err;
  j["skipped"] = p.skipped;
  return j;
}

}  // namespace

// ----------------------------------------------------------------- config

ExperimentConfig default_config() { return ExperimentConfig{}; }

std::string config_to_json(const ExperimentConfig& cfg) {
  ojson j;
  j["world"] = world_json(cfg.world);
  j["stage1"] = stage1_json(cfg.stage1);
  j["stage2"] = stage2_json(cfg.stage2);
  j["stage3"] = stage3_json(cfg.stage3);
  j["eval"] = ojson{{"recall_ks", cfg.eval.recall_ks}};
  j["sweep"] = ojson{{"lambdas", cfg.sweep.lambdas}};
  j["seed"] = cfg.seed;
  j["out"] = cfg.out;
  j["mode"] = cfg.mode;
  return j.dump(2) + "\n";
}

ExperimentConfig parse_config(const std::string& json_text) {
  ojson j;
  try {
    j = ojson::parse(json_text);
  } catch (const ojson::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  check_keys(j, "",
             {"world", "stage1", "stage2", "stage3", "eval", "sweep", "seed",
              "out", "mode"});
  ExperimentConfig cfg;
  if (j.contains("world")) world_from_json(j.at("world"), cfg.world);
  if (j.contains("stage1")) stage1_from_json(j.at("stage1"), cfg.stage1);
  if (j.contains("stage2")) stage2_from_json(j.at("stage2"), cfg.stage2);
  if (j.contains("stage3")) stage3_from_json(j.at("stage3"), cfg.stage3);
  if (j.contains("eval")) {
    check_keys(j.at("eval"), "eval", {"recall_ks"});
    get_if(j.at("eval"), "recall_ks", cfg.eval.recall_ks, "eval");
  }
  if (j.contains("sweep")) {
    check_keys(j.at("sweep"), "sweep", {"lambdas"});
    get_if(j.at("sweep"), "lambdas", cfg.sweep.lambdas, "sweep");
  }
  get_if(j, "seed", cfg.seed, "");
  get_if(j, "out", cfg.out, "");
  get_if(j, "mode", cfg.mode, "");
  check_mode(cfg.mode);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  return parse_config(read_text_file(path));
}

void apply_override(ExperimentConfig& cfg, const std::string& dotted_kv) {
  const size_t eq = dotted_kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like key.path=value: " + dotted_kv);
  const std::string path = dotted_kv.substr(0, eq);
  const std::string raw = dotted_kv.substr(eq + 1);

  std::vector<std::string> parts;
  size_t start = 0;
  while (true) {
    size_t dot = path.find('.', start);
    if (dot == std::string::npos) {
      parts.push_back(path.substr(start));
      break;
    }
    parts.push_back(path.substr(start, dot - start));
    start = dot + 1;
  }

  ojson j = ojson::parse(config_to_json(cfg));
  ojson* cur = &j;
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!cur->is_object() || !cur->contains(parts[i]))
      throw ConfigError("unknown config key: " + path);
    cur = &cur->at(parts[i]);
  }
  if (!cur->is_object() || !cur->contains(parts.back()))
    throw ConfigError("unknown config key: " + path);

  ojson value;
  try {
    value = ojson::parse(raw);
  } catch (const ojson::exception&) {
    value = raw;  // bare strings arrive unquoted
  }
  cur->at(parts.back()) = value;
  cfg = parse_config(j.dump());
}

// ------------------------------------------------------------------ modes

void run_gen_data(const ExperimentConfig& cfg) {
  ensure_outdir(cfg.out);
  write_text_file(join(cfg.out, "config_echo.json"), config_to_json(cfg));
  World w = generate_world(cfg.world);
  save_world(w, join(cfg.out, "world.ebw"));
  ojson s;
  s["world_hash"] = world_hash(w);
  s["train_samples_per_split"] = w.train_ca.size();
  s["eval_samples"] = w.eval_set.size();
  s["intra_class_cos"] = w.intra_class_cos;
  s["inter_class_cos"] = w.inter_class_cos;
  write_text_file(join(cfg.out, "world_summary.json"), s.dump(2) + "\n");
  emit("world_hash", world_hash(w));
  emit("intra_class_cos", w.intra_class_cos);
  emit("inter_class_cos", w.inter_class_cos);
}

std::string run_train(const ExperimentConfig& cfg) {
  ensure_outdir(cfg.out);
  write_text_file(join(cfg.out, "config_echo.json"), config_to_json(cfg));
  World w = acquire_world(cfg);
  PairAudit audit;

  Stage1Result s1 = stage1_anchor_align(w, cfg.stage1, cfg.seed);
  if (s1.log.samples_served)
    audit.record(PairKind::kAnchorA, SplitKind::kTrainCA,
                 s1.log.samples_served);
  save_encoder(s1.encoder, join(cfg.out, "encoder_a.ebc"));
  write_text_file(join(cfg.out, "stage1_log.jsonl"), log_jsonl(s1.log));

  Stage2Result s2 = stage2_proxy_fit(w, s1.encoder, cfg.stage2, cfg.seed);
  audit.record(PairKind::kAnchorA, SplitKind::kTrainCA, w.train_ca.size());
  save_predictor(s2.predictor, join(cfg.out, "predictor.ebc"));
  write_text_file(join(cfg.out, "fidelity_cdf.csv"),
                  cdf_csv(s2.fidelity_cdf_eval));

  Mat proxies = proxies_for_split(s2.predictor, w.train_cb);
  Stage3Result s3 = stage3_bridge_align(w, proxies, cfg.stage3, cfg.seed);
  audit.record(PairKind::kAnchorB, SplitKind::kTrainCB,
               s3.log.samples_served);
  save_encoder(s3.encoder, join(cfg.out, "encoder_b.ebc"));
  write_text_file(join(cfg.out, "stage3_log.jsonl"), log_jsonl(s3.log));

  ojson m;
  m["mode"] = "train";
  m["seed"] = cfg.seed;
  m["world_hash"] = world_hash(w);
  m["proxy_kind"] = proxy_kind_name(cfg.stage2.kind);
  m["align_mode"] = mode_name(cfg.stage3.mode);
  m["lambda"] = cfg.stage3.lambda;
  m["stage1"] = stage1_summary(cfg.stage1, s1);
  m["stage2"] = stage2_summary(cfg.stage2, s2);
  m["stage3"] = stage3_summary(cfg.stage3, s3);
  m["eval"] = evaluate_encoders(w, s1.encoder, s3.encoder, &s2.predictor,
                                cfg.eval.recall_ks, &audit);
  ojson ws;
  ws["intra_class_cos"] = w.intra_class_cos;
  ws["inter_class_cos"] = w.inter_class_cos;
  m["world_stats"] = ws;

  const std::string text = m.dump(2) + "\n";
  write_text_file(join(cfg.out, "metrics.json"), text);
  write_text_file(join(cfg.out, "audit.json"), audit_json(audit).dump(2) + "\n");

  emit("eval", m["eval"]);
  emit("stage2_fidelity_median", s2.fidelity_median_eval);
  emit("stage3_final_loss", m["stage3"]["final_loss"]);
  emit("monitor_violations", s3.log.monitor_violations);
  return text;
}

std::string run_eval(const ExperimentConfig& cfg) {
  World w = load_world(join(cfg.out, "world.ebw"));
  Encoder enc_a = load_encoder(join(cfg.out, "encoder_a.ebc"));
  Encoder enc_b = load_encoder(join(cfg.out, "encoder_b.ebc"));
  ProxyPredictor pred = load_predictor(join(cfg.out, "predictor.ebc"));

  ojson m;
  m["mode"] = "eval";
  m["world_hash"] = world_hash(w);
  m["proxy_kind"] = proxy_kind_name(pred.kind);
  m["eval"] =
      evaluate_encoders(w, enc_a, enc_b, &pred, cfg.eval.recall_ks, nullptr);
  const std::string text = m.dump(2) + "\n";
  write_text_file(join(cfg.out, "metrics_eval.json"), text);
  emit("eval", m["eval"]);
  return text;
}

void run_sweep(const ExperimentConfig& cfg) {
  ensure_outdir(cfg.out);
  write_text_file(join(cfg.out, "config_echo.json"), config_to_json(cfg));
  World w = acquire_world(cfg);

  Stage1Result s1 = stage1_anchor_align(w, cfg.stage1, cfg.seed);
  Stage2Result s2 = stage2_proxy_fit(w, s1.encoder, cfg.stage2, cfg.seed);
  Mat proxies = proxies_for_split(s2.predictor, w.train_cb);

  std::vector<double> lambdas = cfg.sweep.lambdas;
  std::sort(lambdas.begin(), lambdas.end());

  std::ostringstream csv;
  csv << "lambda,emergent_recall_at_1,anchor_b_to_c_recall_at_1,"
         "anchor_c_to_b_recall_at_1,top1_zero_shot_b,final_loss,final_osr,"
         "skipped_samples,degenerate_batches,monitor_violations\n";
  for (double lam : lambdas) {
    Stage3Config sc = cfg.stage3;
    sc.lambda = lam;
    Stage3Result s3 = stage3_bridge_align(w, proxies, sc, cfg.seed);
    QuickEval q = quick_eval(w, s1.encoder, s3.encoder);
    const EpochRecord last =
        s3.log.epochs.empty() ? EpochRecord{} : s3.log.epochs.back();
    long skipped = 0;
    for (const EpochRecord& e : s3.log.epochs) skipped += e.skipped_samples;
    csv << fmt_double(lam) << ',' << fmt_double(q.emergent_r1) << ','
        << fmt_double(q.anchor_b_to_c_r1) << ','
        << fmt_double(q.anchor_c_to_b_r1) << ',' << fmt_double(q.top1) << ','
        << fmt_double(last.mean_loss) << ',' << fmt_double(last.mean_osr)
        << ',' << skipped << ',' << s3.log.degenerate_batches << ','
        << s3.log.monitor_violations << '\n';
    ojson row;
    row["lambda"] = lam;
    row["emergent_recall_at_1"] = q.emergent_r1;
    row["anchor_b_to_c_recall_at_1"] = q.anchor_b_to_c_r1;
    emit("sweep_point", row);
  }
  write_text_file(join(cfg.out, "sweep.csv"), csv.str());
}

void run_verify(const ExperimentConfig& cfg) {
  ensure_outdir(cfg.out);
  write_text_file(join(cfg.out, "config_echo.json"), config_to_json(cfg));

  TheoremProbeOptions po;
  po.tau = cfg.stage3.tau;
  po.fd_check = true;
  po.fd_coords = 16;
  po.fd_seed = derive_seed(cfg.seed, 0xfd);

  TheoremReport snaps =
      theorem_random_snapshots(100, derive_seed(cfg.seed, 0x7e0), po);

  World w = generate_world(cfg.world);
  Rng grid_rng(derive_seed(cfg.seed, 0x96d));
  Encoder enc = Encoder::init(w.spec.obs_dim_b, cfg.stage3.hidden,
                              w.spec.embed_dim, grid_rng);
  const long n = std::min<long>(64, w.train_cb.size());
  Mat obs = w.train_cb.obs_b.topRows(n);
  Mat anchors = w.train_cb.anchors.topRows(n);
  Mat proxies = normalize_rows(grid_rng.normal_mat(n, w.spec.embed_dim));
  TheoremReport grid =
      verify_theorem1(enc, obs, anchors, proxies, {0.0, 0.1, 1.0, -1.0}, po);

  ojson tj;
  tj["snapshots"] = ojson{{"count", snaps.probes.size()},
                          {"violations", snaps.violations},
                          {"min_inner", snaps.min_inner},
                          {"max_fd_rel_err", snaps.max_fd_rel_err}};
  ojson grid_rows = ojson::array();
  for (const TheoremProbe& p : grid.probes) grid_rows.push_back(probe_json(p));
  tj["grid"] = grid_rows;
  write_text_file(join(cfg.out, "theorem_report.json"), tj.dump(2) + "\n");

  LemmaReport lr =
      verify_lemma1({2, 4, 8, 32}, 250, derive_seed(cfg.seed, 0x1e), 1e-10);
  ojson lj;
  lj["trials"] = lr.probes.size();
  lj["worst_margin"] = lr.worst_margin;
  lj["all_satisfied"] = lr.all_satisfied;
  lj["contraction_ok"] = lr.contraction_ok;
  lj["max_contraction_excess"] = lr.max_contraction_excess;
  write_text_file(join(cfg.out, "lemma_report.json"), lj.dump(2) + "\n");

  emit("theorem_snapshot_violations", snaps.violations);
  emit("theorem_min_inner", snaps.min_inner);
  emit("theorem_max_fd_rel_err", snaps.max_fd_rel_err);
  emit("lemma_worst_margin", lr.worst_margin);
  emit("lemma_all_satisfied", lr.all_satisfied);
}

void run_ablate(const ExperimentConfig& cfg) {
  ensure_outdir(cfg.out);
  write_text_file(join(cfg.out, "config_echo.json"), config_to_json(cfg));
  World w = acquire_world(cfg);
  const std::string whash = world_hash(w);

  Stage1Result s1 = stage1_anchor_align(w, cfg.stage1, cfg.seed);
  Stage2Result s2 = stage2_proxy_fit(w, s1.encoder, cfg.stage2, cfg.seed);
  Mat proxies = proxies_for_split(s2.predictor, w.train_cb);

  std::ostringstream csv;
  csv << "mode,lambda,seed,world_hash,emergent_recall_at_1,"
         "anchor_b_to_c_recall_at_1,anchor_c_to_b_recall_at_1,"
         "top1_zero_shot_b,mean_ortho_diag,final_osr\n";
  for (ProxyAlignMode mode : {ProxyAlignMode::kOsr, ProxyAlignMode::kDirect}) {
    Stage3Config sc = cfg.stage3;
    sc.mode = mode;
    Stage3Result s3 = stage3_bridge_align(w, proxies, sc, cfg.seed);
    QuickEval q = quick_eval(w, s1.encoder, s3.encoder);
    const double final_osr =
        s3.log.epochs.empty() ? 0.0 : s3.log.epochs.back().mean_osr;
    csv << mode_name(mode) << ',' << fmt_double(sc.lambda) << ',' << cfg.seed
        << ',' << whash << ',' << fmt_double(q.emergent_r1) << ','
        << fmt_double(q.anchor_b_to_c_r1) << ','
        << fmt_double(q.anchor_c_to_b_r1) << ',' << fmt_double(q.top1) << ','
        << fmt_double(s3.mean_ortho_diag) << ',' << fmt_double(final_osr)
        << '\n';
    ojson row;
    row["mode"] = mode_name(mode);
    row["emergent_recall_at_1"] = q.emergent_r1;
    row["anchor_b_to_c_recall_at_1"] = q.anchor_b_to_c_r1;
    row["mean_ortho_diag"] = s3.mean_ortho_diag;
    emit("ablate_point", row);
  }
  write_text_file(join(cfg.out, "ablate.csv"), csv.str());
}

void run_experiment(const ExperimentConfig& cfg) {
  check_mode(cfg.mode);
  if (cfg.mode == "gen-data")
    run_gen_data(cfg);
  else if (cfg.mode == "train")
    run_train(cfg);
  else if (cfg.mode == "eval")
    run_eval(cfg);
  else if (cfg.mode == "sweep")
    run_sweep(cfg);
  else if (cfg.mode == "verify")
    run_verify(cfg);
  else
    run_ablate(cfg);
}

}  // namespace embridge
