#include "doctest.h"
#include "embridge/geometry.hpp"
#include "embridge/proxy.hpp"
#include "oracles.hpp"

using namespace embridge;

namespace {

Mat unit_rows(Rng& rng, long n, long d) {
  return normalize_rows(rng.normal_mat(n, d));
}

}  // namespace

TEST_CASE("linear regressor recovers the identity map") {
  Rng rng(3);
  Mat anchors = unit_rows(rng, 400, 8);
  RegressorConfig cfg;
  cfg.epochs = 150;
  cfg.lr = 5e-2;
  FitStats stats;
  ProxyPredictor p = fit_regressor(anchors, anchors, cfg, 7, &stats);
  CHECK(p.kind == ProxyKind::kLinear);
  CHECK(stats.holdout_mse <= 1e-3);
  Mat out = p.predict_batch(anchors);
  CHECK(fidelity_median(out, anchors) >= 0.999);
}

TEST_CASE("mlp regressor fits a constant target") {
  Rng rng(5);
  Mat anchors = unit_rows(rng, 200, 8);
  Vec v = normalize(rng.normal_mat(8, 1).col(0));
  Mat targets = v.transpose().replicate(200, 1);
  RegressorConfig cfg;
  cfg.hidden = {16};
  cfg.epochs = 120;
  cfg.lr = 2e-2;
  ProxyPredictor p = fit_regressor(anchors, targets, cfg, 11, nullptr);
  CHECK(p.kind == ProxyKind::kMlp);
  Mat out = p.predict_batch(anchors.topRows(20));
  for (long i = 0; i < out.rows(); ++i)
    CHECK(out.row(i).dot(v) == doctest::Approx(1.0).epsilon(1e-2));
}

TEST_CASE("linear regressor beats the noise baseline on a rotation") {
  Rng rng(9);
  const int d = 8;
  // orthonormal map via QR of a random matrix
  Eigen::HouseholderQR<Mat> qr(rng.normal_mat(d, d));
  Mat R = qr.householderQ();
  Mat anchors = unit_rows(rng, 300, d);
  Mat targets = anchors * R;
  RegressorConfig cfg;
  cfg.epochs = 150;
  cfg.lr = 5e-2;
  ProxyPredictor lin = fit_regressor(anchors, targets, cfg, 13, nullptr);
  ProxyPredictor noise = fit_noise(d, 13);
  double lin_med = fidelity_median(lin.predict_batch(anchors), targets);
  double noise_med = fidelity_median(noise.predict_batch(anchors), targets);
  CHECK(lin_med > 0.99);
  CHECK(lin_med > noise_med);
}

TEST_CASE("noise baseline stays close to its input") {
  Rng rng(15);
  Mat anchors = unit_rows(rng, 200, 16);
  ProxyPredictor p = fit_noise(16, 99);
  Mat out = p.predict_batch(anchors);
  CHECK(fidelity_median(out, anchors) >= 0.98);
  for (long i = 0; i < out.rows(); ++i)
    CHECK(out.row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
  // the perturbation is drawn once: identical anchors map identically
  Mat again = p.predict_batch(anchors);
  CHECK((out - again).norm() == 0.0);
}

TEST_CASE("memory with one stored pair returns its normalized value") {
  Rng rng(21);
  Mat same = unit_rows(rng, 1, 6);
  Mat cross = 2.0 * unit_rows(rng, 1, 6);
  ProxyPredictor p = fit_memory(same, cross);
  Vec q = normalize(rng.normal_mat(6, 1).col(0));
  Vec out = p.predict(q);
  CHECK((out - normalize(cross.row(0).transpose())).norm() < 1e-12);
}

TEST_CASE("memory averages equidistant keys uniformly") {
  Mat same(2, 3), cross(2, 3);
  same << 1, 0, 0, 0, 1, 0;
  cross << 0, 0, 1, 0, 1, 0;
  ProxyPredictor p = fit_memory(same, cross);
  Vec q(3);
  q << 1, 1, 0;
  q = normalize(q);  // equally similar to both stored keys
  Vec want = normalize(Vec(0.5 * (cross.row(0) + cross.row(1)).transpose()));
  CHECK((p.predict(q) - want).norm() < 1e-12);
}

TEST_CASE("memory at huge temperature ignores similarity") {
  Rng rng(31);
  Mat same = unit_rows(rng, 8, 6);
  Mat cross = unit_rows(rng, 8, 6);
  ProxyPredictor p = fit_memory(same, cross, 1e6);
  Vec q = normalize(rng.normal_mat(6, 1).col(0));
  Vec want = normalize(Vec(cross.colwise().mean().transpose()));
  CHECK((p.predict(q) - want).norm() < 1e-6);
}

TEST_CASE("memory at tiny temperature snaps to the nearest key") {
  Rng rng(37);
  Mat same = unit_rows(rng, 8, 6);
  Mat cross = unit_rows(rng, 8, 6);
  ProxyPredictor p = fit_memory(same, cross, 1e-3);
  Vec q = normalize(Vec(same.row(3).transpose() +
                        0.01 * rng.normal_mat(6, 1).col(0)));
  CHECK((p.predict(q) - normalize(cross.row(3).transpose())).norm() < 1e-9);
}

TEST_CASE("schedule validation accepts the default and rejects tampering") {
  DiffusionSchedule s = DiffusionSchedule::linear();
  CHECK(s.num_steps == 100);
  CHECK_NOTHROW(s.validate());
  CHECK(s.alpha_bar(0) == doctest::Approx(0.999).epsilon(1e-15));
  CHECK(s.alpha_bar(99) == doctest::Approx(0.01).epsilon(1e-12));

  DiffusionSchedule bad = s;
  bad.alpha_bar(50) = bad.alpha_bar(49);  // not strictly decreasing
  CHECK_THROWS_AS(bad.validate(), InvalidSpec);
  bad = s;
  bad.alpha_bar(0) = 0.5;  // too noisy at the clean end
  CHECK_THROWS_AS(bad.validate(), InvalidSpec);
  bad = s;
  bad.alpha_bar(99) = 1.5;  // outside (0,1)
  CHECK_THROWS_AS(bad.validate(), InvalidSpec);
}

TEST_CASE("a constant denoiser samples exactly its constant") {
  Rng rng(41);
  const int d = 6;
  Vec v = rng.normal_mat(d, 1).col(0);
  DiffusionPredictor pred;
  pred.net = DiffusionNet::init(d, d, 8, {16}, rng);
  pred.net.Wx.setZero();
  pred.net.Wc.setZero();
  pred.net.Wt.setZero();
  pred.net.b0.setZero();
  for (Mat& w : pred.net.tail.W) w.setZero();
  for (Mat& b : pred.net.tail.b) b.setZero();
  pred.net.tail.b.back() = v.transpose();
  pred.sched = DiffusionSchedule::linear();
  pred.init_seed = 77;

  Mat anchors = unit_rows(rng, 5, d);
  Mat out = diffusion_sample(pred, anchors);
  Vec vn = normalize(v);
  for (long i = 0; i < out.rows(); ++i)
    CHECK((out.row(i).transpose() - vn).norm() == 0.0);
}

TEST_CASE("denoising fit memorizes a single pair") {
  Rng rng(47);
  const int d = 8;
  Mat anchor = unit_rows(rng, 1, d);
  Mat target = unit_rows(rng, 1, d);
  DiffusionConfig cfg;
  cfg.hidden = {48};
  cfg.num_steps = 40;
  cfg.epochs = 600;
  cfg.batch_size = 1;
  cfg.lr = 3e-3;
  cfg.cfg_dropout = 0.1;
  FitStats stats;
  ProxyPredictor p = diffusion_fit(anchor, target, cfg, 55, &stats);
  CHECK(p.kind == ProxyKind::kDiffusion);
  Vec out = p.predict(anchor.row(0).transpose());
  CHECK(out.dot(target.row(0).transpose()) >= 0.99);

  // near the clean end of the schedule the denoising error is small
  double l0 = diffusion_denoise_loss_at(p.diff, anchor, target, 0, 91);
  CHECK(l0 <= 0.05);
}

TEST_CASE("conditioning dropout hits its configured rate") {
  Rng rng(53);
  const int d = 4;
  Mat anchors = unit_rows(rng, 256, d);
  Mat targets = unit_rows(rng, 256, d);
  DiffusionConfig cfg;
  cfg.hidden = {8};
  cfg.num_steps = 20;
  cfg.temb_dim = 4;
  cfg.epochs = 50;
  cfg.cfg_dropout = 0.05;
  FitStats stats;
  diffusion_fit(anchors, targets, cfg, 61, &stats);
  REQUIRE(stats.cfg_draws >= 10000);
  double rate = double(stats.cfg_dropped) / double(stats.cfg_draws);
  CHECK(rate >= 0.04);
  CHECK(rate <= 0.06);
}

TEST_CASE("sampling is deterministic and ignores guidance at weight zero") {
  Rng rng(59);
  const int d = 6;
  Mat anchors = unit_rows(rng, 64, d);
  Mat targets = unit_rows(rng, 64, d);
  DiffusionConfig cfg;
  cfg.hidden = {16};
  cfg.num_steps = 20;
  cfg.temb_dim = 4;
  cfg.epochs = 30;
  ProxyPredictor p = diffusion_fit(anchors, targets, cfg, 67, nullptr);

  Mat out1 = p.predict_batch(anchors);
  Mat out2 = p.predict_batch(anchors);
  CHECK((out1 - out2).norm() == 0.0);

  // with zero guidance weight the unconditional branch never runs
  ProxyPredictor a = p, b = p;
  a.diff.guidance_scale = 0.0;
  b.diff.guidance_scale = 0.0;
  b.diff.net.null_token = rng.normal_mat(1, d);
  CHECK((a.predict_batch(anchors) - b.predict_batch(anchors)).norm() == 0.0);
}

TEST_CASE("fidelity summary: cdf points and median") {
  Mat proxies(2, 2), targets(2, 2);
  proxies << 1, 0, 0, 1;
  targets << 1, 0, -1, 0;
  auto cdf = proxy_fidelity_cdf(proxies, targets);
  REQUIRE(cdf.size() == 2);
  CHECK(cdf[0].first == doctest::Approx(0.0));
  CHECK(cdf[0].second == doctest::Approx(0.5));
  CHECK(cdf[1].first == doctest::Approx(1.0));
  CHECK(cdf[1].second == doctest::Approx(1.0));
  CHECK(fidelity_median(proxies, targets) == doctest::Approx(0.5));

  CHECK_THROWS_AS(proxy_fidelity_cdf(Mat(0, 2), Mat(0, 2)), EmptyInput);
}

TEST_CASE("collapse fraction separates clones from spread proxies") {
  Mat clones = Mat::Ones(20, 4);
  clones = normalize_rows(clones);
  CHECK(proxy_collapse_fraction(clones) == doctest::Approx(1.0));
  Rng rng(71);
  Mat spread = unit_rows(rng, 20, 4);
  CHECK(proxy_collapse_fraction(spread) < 0.2);
}
