#include "embridge/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "embridge/verify.hpp"

namespace embridge {

namespace {

// Stable per-stage seed salts; stream separation only, values arbitrary.
constexpr uint64_t kSaltInit1 = 0x11;
constexpr uint64_t kSaltBatch1 = 0x12;
constexpr uint64_t kSaltFit2 = 0x21;
constexpr uint64_t kSaltInit3 = 0x31;
constexpr uint64_t kSaltBatch3 = 0x32;

std::vector<Mat*> param_ptrs(Encoder& enc) {
  std::vector<Mat*> p;
  for (size_t l = 0; l < enc.W.size(); ++l) {
    p.push_back(&enc.W[l]);
    p.push_back(&enc.b[l]);
  }
  return p;
}

std::vector<const Mat*> grad_ptrs(const Tape& t, const EncoderGraph& eg) {
  std::vector<const Mat*> g;
  for (Tape::NodeId id : eg.params) g.push_back(&t.grad(id));
  return g;
}

}  // namespace

Stage1Result stage1_anchor_align(const World& world, const Stage1Config& cfg,
                                 uint64_t seed) {
  Rng init_rng(derive_seed(seed, kSaltInit1));
  Stage1Result r;
  r.encoder = Encoder::init(world.spec.obs_dim_a, cfg.hidden,
                            world.spec.embed_dim, init_rng);
  if (!cfg.enabled) {
    r.encoder.frozen = true;
    return r;
  }

  PairSampler sampler(world, PairKind::kAnchorA, SplitKind::kTrainCA,
                      cfg.batch_size, derive_seed(seed, kSaltBatch1));
  const long per_epoch = sampler.batches_per_epoch();
  AdamWConfig ac;
  ac.lr = cfg.lr;
  ac.weight_decay = cfg.weight_decay;
  ac.total_steps = cfg.epochs * per_epoch;
  AdamW opt(ac);

  CombinedOptions co;
  co.tau = cfg.tau;
  co.lambda = 0.0;
  const Mat no_proxies;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochRecord er;
    er.stage = "anchor_align";
    er.epoch = epoch;
    for (long b = 0; b < per_epoch; ++b) {
      PairBatch batch = sampler.next();
      Tape t;
      EncoderGraph eg = encoder_forward_graph(t, r.encoder, batch.right, true);
      CombinedGraph cg = combined_graph(t, eg.out, batch.left, no_proxies, co);
      t.backward(cg.total);
      er.lr_last = opt.lr_at(opt.steps_taken());
      opt.step(param_ptrs(r.encoder), grad_ptrs(t, eg));
      er.steps += 1;
      er.mean_loss += t.scalar(cg.total);
      er.mean_infonce += t.scalar(cg.infonce);
    }
    er.mean_loss /= double(er.steps);
    er.mean_infonce /= double(er.steps);
    r.log.epochs.push_back(er);
  }
  r.log.samples_served = sampler.samples_served();
  r.encoder.frozen = true;
  return r;
}

Stage2Result stage2_proxy_fit(const World& world, const Encoder& enc_a,
                              const Stage2Config& cfg, uint64_t seed) {
  if (!enc_a.frozen)
    throw InvalidSpec("stage2: the modality-A encoder must be frozen");

  const Split& tr = world.train_ca;
  Mat targets = encoder_forward(enc_a, tr.obs_a);
  const Mat& anchors = tr.anchors;
  const uint64_t fit_seed = derive_seed(seed, kSaltFit2);

  Stage2Result r;
  switch (cfg.kind) {
    case ProxyKind::kMlp: {
      RegressorConfig rc = cfg.regressor;
      if (rc.hidden.empty()) rc.hidden = {64, 64};
      r.predictor = fit_regressor(anchors, targets, rc, fit_seed, &r.stats);
      break;
    }
    case ProxyKind::kLinear: {
      RegressorConfig rc = cfg.regressor;
      rc.hidden.clear();
      r.predictor = fit_regressor(anchors, targets, rc, fit_seed, &r.stats);
      break;
    }
    case ProxyKind::kDiffusion:
      r.predictor = diffusion_fit(anchors, targets, cfg.diffusion, fit_seed,
                                  &r.stats);
      break;
    case ProxyKind::kNoise:
      r.predictor =
          fit_noise(world.spec.embed_dim, fit_seed, cfg.noise_variance);
      break;
    case ProxyKind::kMemory:
      r.predictor = fit_memory(anchors, targets, cfg.memory_tau);
      break;
  }

  const Split& ev = world.eval_set;
  Mat proxies_eval = r.predictor.predict_batch(ev.anchors);
  Mat targets_eval = encoder_forward(enc_a, ev.obs_a);
  r.fidelity_median_eval = fidelity_median(proxies_eval, targets_eval);
  r.fidelity_cdf_eval = proxy_fidelity_cdf(proxies_eval, targets_eval);
  r.collapse_fraction = proxy_collapse_fraction(proxies_eval);
  return r;
}

Mat proxies_for_split(const ProxyPredictor& pred, const Split& split) {
  return pred.predict_batch(split.anchors);
}

Stage3Result stage3_bridge_align(const World& world, const Mat& proxies,
                                 const Stage3Config& cfg, uint64_t seed) {
  const Split& tr = world.train_cb;
  require_shape(proxies.rows() == tr.size() &&
                    proxies.cols() == world.spec.embed_dim,
                "stage3: proxies must align with the B-side training split");

  Rng init_rng(derive_seed(seed, kSaltInit3));
  Stage3Result r;
  r.encoder = Encoder::init(world.spec.obs_dim_b, cfg.hidden,
                            world.spec.embed_dim, init_rng);

  // batch rows arrive shuffled; recover split-local rows from sample ids
  int max_id = 0;
  for (int id : tr.ids) max_id = std::max(max_id, id);
  std::vector<int> id_to_row(size_t(max_id) + 1, -1);
  for (long i = 0; i < tr.size(); ++i)
    id_to_row[size_t(tr.ids[size_t(i)])] = int(i);

  PairSampler sampler(world, PairKind::kAnchorB, SplitKind::kTrainCB,
                      cfg.batch_size, derive_seed(seed, kSaltBatch3));
  const long per_epoch = sampler.batches_per_epoch();
  AdamWConfig ac;
  ac.lr = cfg.lr;
  ac.weight_decay = cfg.weight_decay;
  ac.total_steps = cfg.epochs * per_epoch;
  AdamW opt(ac);

  CombinedOptions co;
  co.tau = cfg.tau;
  co.lambda = cfg.lambda;
  co.mode = cfg.mode;

  TheoremProbeOptions po;
  po.tau = cfg.tau;

  long step = 0;
  double ortho_sum = 0.0;
  long ortho_count = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochRecord er;
    er.stage = "bridge_align";
    er.epoch = epoch;
    long degenerate_this_epoch = 0;
    for (long b = 0; b < per_epoch; ++b, ++step) {
      PairBatch batch = sampler.next();
      Mat prox_batch(long(batch.ids.size()), proxies.cols());
      for (size_t i = 0; i < batch.ids.size(); ++i)
        prox_batch.row(long(i)) = proxies.row(id_to_row[size_t(batch.ids[i])]);

      Tape t;
      EncoderGraph eg = encoder_forward_graph(t, r.encoder, batch.right, true);
      CombinedGraph cg;
      try {
        cg = combined_graph(t, eg.out, batch.left, prox_batch, co);
      } catch (const AllSamplesDegenerate&) {
        r.log.degenerate_batches += 1;
        degenerate_this_epoch += 1;
        continue;
      }

      const bool monitor = cfg.monitor_every > 0 &&
                           step % cfg.monitor_every == 0;
      if (monitor) {
        MonitorRecord mr;
        mr.step = step;
        TheoremProbe pr = theorem_probe(r.encoder, batch.right, batch.left,
                                        prox_batch, cfg.lambda, po);
        mr.lambda = pr.lambda;
        mr.bound = pr.bound;
        mr.inner_product = pr.inner_product;
        mr.lambda_le_bound = pr.lambda_le_bound;
        mr.satisfied = pr.satisfied;
        mr.skipped = pr.skipped;
        if (cg.osr >= 0) {
          t.backward(cg.osr);
          const Mat& gx = t.grad(eg.out);
          AnchorDirections ad =
              anchor_directions(t.value(eg.out), batch.left, cfg.tau);
          double acc = 0.0;
          long n = 0;
          for (long i = 0; i < gx.rows(); ++i) {
            if (!ad.ok[size_t(i)]) continue;
            double cn = ad.dirs.row(i).norm();
            double gn = gx.row(i).norm();
            if (gn < 1e-300) continue;
            acc += std::abs(ad.dirs.row(i).dot(gx.row(i))) / (cn * gn);
            n += 1;
          }
          mr.ortho_diag = n ? acc / double(n) : 0.0;
          ortho_sum += mr.ortho_diag;
          ortho_count += 1;
        }
        if (mr.lambda_le_bound && !mr.satisfied) r.log.monitor_violations += 1;
        r.log.monitors.push_back(mr);
      }

      t.backward(cg.total);
      er.lr_last = opt.lr_at(opt.steps_taken());
      opt.step(param_ptrs(r.encoder), grad_ptrs(t, eg));
      er.steps += 1;
      er.mean_loss += t.scalar(cg.total);
      er.mean_infonce += t.scalar(cg.infonce);
      if (cg.osr >= 0) er.mean_osr += t.scalar(cg.osr);
      er.skipped_samples += cg.skipped;
    }
    if (degenerate_this_epoch == per_epoch)
      throw AllSamplesDegenerate(
          "stage3: every batch of an epoch lost all rows to direction "
          "collapse");
    if (er.steps) {
      er.mean_loss /= double(er.steps);
      er.mean_infonce /= double(er.steps);
      er.mean_osr /= double(er.steps);
    }
    r.log.epochs.push_back(er);
  }
  r.log.samples_served = sampler.samples_served();
  r.mean_ortho_diag = ortho_count ? ortho_sum / double(ortho_count) : 0.0;
  return r;
}

}  // namespace embridge
