#include "doctest.h"
#include "embridge/encoder.hpp"
#include "embridge/geometry.hpp"
#include "embridge/optimizer.hpp"
#include "embridge/pipeline.hpp"
#include "oracles.hpp"

using namespace embridge;

namespace {

WorldSpec tiny_spec() {
  WorldSpec s;
  s.num_classes = 4;
  s.latent_dim = 4;
  s.embed_dim = 8;
  s.obs_dim_a = 12;
  s.obs_dim_b = 12;
  s.train_samples = 64;
  s.eval_samples = 32;
  s.seed = 500;
  return s;
}

Stage1Config tiny_stage1() {
  Stage1Config c;
  c.epochs = 2;
  c.batch_size = 16;
  c.hidden = {16};
  return c;
}

Stage3Config tiny_stage3() {
  Stage3Config c;
  c.epochs = 2;
  c.batch_size = 16;
  c.hidden = {16};
  c.monitor_every = 2;
  return c;
}

}  // namespace

TEST_CASE("identity-weight linear encoder reproduces unit inputs") {
  Rng rng(2);
  Encoder enc = Encoder::init(6, {}, 6, rng);
  enc.W[0] = Mat::Identity(6, 6);
  enc.b[0].setZero();
  Mat x = normalize_rows(rng.normal_mat(5, 6));
  Mat y = encoder_forward(enc, x);
  CHECK((y - x).norm() < 1e-14);
}

TEST_CASE("encoder parameter gradients match finite differences") {
  Rng rng(8);
  Encoder enc = Encoder::init(5, {7}, 4, rng);
  Mat x = rng.normal_mat(6, 5);
  Mat c = rng.normal_mat(6, 4);

  Tape t;
  EncoderGraph eg = encoder_forward_graph(t, enc, x, true);
  auto loss_id = t.mean(t.rowwise_dot(eg.out, t.leaf(c, false)));
  t.backward(loss_id);

  // interleaved leaves W0,b0,W1,b1 mirror the encoder layout
  std::vector<Mat*> mats = {&enc.W[0], &enc.b[0], &enc.W[1], &enc.b[1]};
  for (size_t p = 0; p < mats.size(); ++p) {
    Mat analytic = t.grad(eg.params[p]);
    Mat fd = oracle::fd_grad(
        [&](const Mat& m) {
          Encoder e2 = enc;
          std::vector<Mat*> m2 = {&e2.W[0], &e2.b[0], &e2.W[1], &e2.b[1]};
          *m2[p] = m;
          Mat out = encoder_forward(e2, x);
          return out.cwiseProduct(c).rowwise().sum().mean();
        },
        *mats[p]);
    CHECK(oracle::rel_err(analytic, fd) < 1e-6);
  }
}

TEST_CASE("encoder init is deterministic in the rng seed") {
  Rng r1(33), r2(33);
  Encoder a = Encoder::init(5, {9, 7}, 4, r1);
  Encoder b = Encoder::init(5, {9, 7}, 4, r2);
  CHECK(a.same_params(b));
  Encoder c = Encoder::init(5, {9, 7}, 4, r1);  // rng advanced
  CHECK_FALSE(a.same_params(c));
}

TEST_CASE("adamw first step moves by roughly lr times the gradient sign") {
  AdamWConfig cfg;
  cfg.lr = 1e-2;
  AdamW opt(cfg);
  Mat p = Mat::Zero(2, 2);
  Mat g(2, 2);
  g << 1.0, -2.0, 0.5, -0.75;
  opt.step({&p}, {&g});
  for (long i = 0; i < 2; ++i)
    for (long j = 0; j < 2; ++j) {
      double want = -cfg.lr * (g(i, j) > 0 ? 1.0 : -1.0);
      CHECK(std::abs(p(i, j) - want) < 1e-6 * cfg.lr);
    }
  CHECK(opt.steps_taken() == 1);
}

TEST_CASE("adamw zero gradient leaves parameters alone except decay") {
  Mat p0(1, 3);
  p0 << 0.5, -1.0, 2.0;
  Mat zero = Mat::Zero(1, 3);

  AdamWConfig plain;
  plain.lr = 1e-2;
  AdamW a(plain);
  Mat p = p0;
  a.step({&p}, {&zero});
  CHECK((p - p0).norm() == 0.0);

  AdamWConfig decay = plain;
  decay.weight_decay = 0.1;
  AdamW b(decay);
  p = p0;
  b.step({&p}, {&zero});
  Mat want = p0 - decay.lr * decay.weight_decay * p0;
  CHECK((p - want).norm() < 1e-15);
}

TEST_CASE("cosine schedule starts at base lr and ends at zero") {
  AdamWConfig cfg;
  cfg.lr = 3e-3;
  cfg.total_steps = 100;
  AdamW opt(cfg);
  CHECK(opt.lr_at(0) == cfg.lr);
  CHECK(opt.lr_at(99) == 0.0);
  CHECK(opt.lr_at(49) < cfg.lr);
  CHECK(opt.lr_at(49) > opt.lr_at(80));
}

TEST_CASE("stage 1 returns a frozen encoder and a full service audit") {
  World w = generate_world(tiny_spec());
  Stage1Config cfg = tiny_stage1();
  Stage1Result r = stage1_anchor_align(w, cfg, 77);
  CHECK(r.encoder.frozen);
  CHECK(r.encoder.in_dim == w.spec.obs_dim_a);
  CHECK(r.encoder.out_dim == w.spec.embed_dim);
  REQUIRE(r.log.epochs.size() == 2);
  CHECK(r.log.samples_served == 2l * w.train_ca.size());
  for (const EpochRecord& e : r.log.epochs)
    CHECK(std::isfinite(e.mean_loss));
}

TEST_CASE("disabling stage 1 still yields a frozen usable encoder") {
  World w = generate_world(tiny_spec());
  Stage1Config cfg = tiny_stage1();
  cfg.enabled = false;
  Stage1Result r = stage1_anchor_align(w, cfg, 77);
  CHECK(r.encoder.frozen);
  CHECK(r.log.epochs.empty());
  Mat out = encoder_forward(r.encoder, w.eval_set.obs_a);
  CHECK(out.allFinite());
}

TEST_CASE("stage 2 demands a frozen upstream encoder") {
  World w = generate_world(tiny_spec());
  Rng rng(4);
  Encoder loose =
      Encoder::init(w.spec.obs_dim_a, {16}, w.spec.embed_dim, rng);
  Stage2Config cfg;
  cfg.kind = ProxyKind::kLinear;
  CHECK_THROWS_AS(stage2_proxy_fit(w, loose, cfg, 5), InvalidSpec);
  loose.frozen = true;
  CHECK_NOTHROW(stage2_proxy_fit(w, loose, cfg, 5));
}

TEST_CASE("stages 2 and 3 never touch the frozen encoder's parameters") {
  World w = generate_world(tiny_spec());
  Stage1Result s1 = stage1_anchor_align(w, tiny_stage1(), 77);
  Encoder snapshot = s1.encoder;

  Stage2Config s2cfg;
  s2cfg.kind = ProxyKind::kLinear;
  Stage2Result s2 = stage2_proxy_fit(w, s1.encoder, s2cfg, 78);
  CHECK(s1.encoder.same_params(snapshot));

  Mat proxies = proxies_for_split(s2.predictor, w.train_cb);
  stage3_bridge_align(w, proxies, tiny_stage3(), 79);
  CHECK(s1.encoder.same_params(snapshot));
}

TEST_CASE("split proxies are exactly the predictor applied to its anchors") {
  World w = generate_world(tiny_spec());
  Stage1Result s1 = stage1_anchor_align(w, tiny_stage1(), 77);
  Stage2Config cfg;
  cfg.kind = ProxyKind::kLinear;
  Stage2Result s2 = stage2_proxy_fit(w, s1.encoder, cfg, 78);
  Mat got = proxies_for_split(s2.predictor, w.train_cb);
  Mat want = s2.predictor.predict_batch(w.train_cb.anchors);
  CHECK((got - want).norm() == 0.0);
  CHECK(got.rows() == w.train_cb.size());
}

TEST_CASE("weight-zero bridge training ignores the proxies entirely") {
  World w = generate_world(tiny_spec());
  Rng rng(6);
  Mat real = normalize_rows(rng.normal_mat(w.train_cb.size(), w.spec.embed_dim));
  Mat garbage = 1e6 * rng.normal_mat(w.train_cb.size(), w.spec.embed_dim);

  Stage3Config cfg = tiny_stage3();
  cfg.lambda = 0.0;
  Stage3Result a = stage3_bridge_align(w, real, cfg, 91);
  Stage3Result b = stage3_bridge_align(w, garbage, cfg, 91);
  CHECK(a.encoder.same_params(b.encoder));
}

TEST_CASE("bridge training is deterministic in the seed") {
  World w = generate_world(tiny_spec());
  Rng rng(12);
  Mat proxies =
      normalize_rows(rng.normal_mat(w.train_cb.size(), w.spec.embed_dim));
  Stage3Config cfg = tiny_stage3();
  Stage3Result a = stage3_bridge_align(w, proxies, cfg, 101);
  Stage3Result b = stage3_bridge_align(w, proxies, cfg, 101);
  CHECK(a.encoder.same_params(b.encoder));
  Stage3Result c = stage3_bridge_align(w, proxies, cfg, 102);
  CHECK_FALSE(a.encoder.same_params(c.encoder));
}

TEST_CASE("bridge monitors observe the orthogonality of the regularizer") {
  World w = generate_world(tiny_spec());
  Rng rng(18);
  Mat proxies =
      normalize_rows(rng.normal_mat(w.train_cb.size(), w.spec.embed_dim));
  Stage3Config cfg = tiny_stage3();
  Stage3Result r = stage3_bridge_align(w, proxies, cfg, 111);
  REQUIRE_FALSE(r.log.monitors.empty());
  for (const MonitorRecord& m : r.log.monitors) {
    CHECK(m.lambda == cfg.lambda);
    CHECK(std::isfinite(m.inner_product));
  }
  CHECK(r.mean_ortho_diag < 1e-8);
  CHECK(r.log.monitor_violations == 0);
}

TEST_CASE("bridge training rejects misshapen proxies") {
  World w = generate_world(tiny_spec());
  Mat wrong = Mat::Zero(3, w.spec.embed_dim);
  CHECK_THROWS_AS(stage3_bridge_align(w, wrong, tiny_stage3(), 5),
                  ShapeMismatch);
}
