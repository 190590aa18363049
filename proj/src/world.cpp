#include "embridge/world.hpp"

#include <algorithm>

#include "embridge/geometry.hpp"

namespace embridge {

std::string pair_kind_name(PairKind p) {
  switch (p) {
    case PairKind::kAnchorA: return "anchor_a";
    case PairKind::kAnchorB: return "anchor_b";
    case PairKind::kAB: return "a_b";
  }
  return "?";
}

std::string split_kind_name(SplitKind s) {
  switch (s) {
    case SplitKind::kTrainCA: return "train_ca";
    case SplitKind::kTrainCB: return "train_cb";
    case SplitKind::kEval: return "eval";
  }
  return "?";
}

void WorldSpec::validate() const {
  auto bad = [](const std::string& f) {
    throw InvalidSpec("world spec: invalid " + f);
  };
  if (num_classes < 2) bad("num_classes");
  if (latent_dim < 1) bad("latent_dim");
  if (embed_dim < 2) bad("embed_dim");
  if (anchor_rank < 0 || anchor_rank > latent_dim) bad("anchor_rank");
  if (obs_dim_a < 1) bad("obs_dim_a");
  if (obs_dim_b < 1) bad("obs_dim_b");
  if (noise_std_a < 0.0) bad("noise_std_a");
  if (noise_std_b < 0.0) bad("noise_std_b");
  if (latent_jitter < 0.0) bad("latent_jitter");
  if (train_samples < 1) bad("train_samples");
  if (eval_samples < 1) bad("eval_samples");
  auto known = [](const std::string& p) {
    return p == "anchor_a" || p == "anchor_b" || p == "a_b";
  };
  for (const auto& p : train_pairs) {
    if (!known(p)) bad("train_pairs entry '" + p + "'");
    if (p == "a_b")
      throw InvalidSpec(
          "world spec: train_pairs must not contain the emergent pair a_b");
  }
  for (const auto& p : eval_pairs)
    if (!known(p)) bad("eval_pairs entry '" + p + "'");
}

const Split& World::split(SplitKind s) const {
  switch (s) {
    case SplitKind::kTrainCA: return train_ca;
    case SplitKind::kTrainCB: return train_cb;
    case SplitKind::kEval: return eval_set;
  }
  throw InvalidSpec("unknown split");
}

namespace {

Split make_split(const WorldSpec& spec, const World& w, int n, int id_base,
                 Rng& rng) {
  Split s;
  s.ids.resize(size_t(n));
  s.labels.resize(size_t(n));
  s.anchors.resize(n, spec.embed_dim);
  s.obs_a.resize(n, spec.obs_dim_a);
  s.obs_b.resize(n, spec.obs_dim_b);
  for (int i = 0; i < n; ++i) {
    s.ids[size_t(i)] = id_base + i;
    int label = rng.uniform_int(spec.num_classes);
    s.labels[size_t(i)] = label;
    Vec z = w.class_means.row(label).transpose();
    for (int j = 0; j < spec.latent_dim; ++j)
      z(j) += spec.latent_jitter * rng.normal();
    s.anchors.row(i) = normalize(Vec(w.anchor_map * z)).transpose();
    Vec oa = (w.map_a * z).array().tanh();
    for (int j = 0; j < spec.obs_dim_a; ++j)
      oa(j) += spec.noise_std_a * rng.normal();
    s.obs_a.row(i) = oa.transpose();
    Vec ob = (w.map_b * z).array().tanh();
    for (int j = 0; j < spec.obs_dim_b; ++j)
      ob(j) += spec.noise_std_b * rng.normal();
    s.obs_b.row(i) = ob.transpose();
  }
  return s;
}

}  // namespace

World generate_world(const WorldSpec& spec) {
  spec.validate();
  World w;
  w.spec = spec;
  Rng rng(spec.seed);

  w.class_means = rng.normal_mat(spec.num_classes, spec.latent_dim);
  if (spec.anchor_rank != 0 && spec.anchor_rank < spec.latent_dim) {
    Mat lift = rng.normal_mat(spec.embed_dim, spec.anchor_rank);
    Mat read = rng.normal_mat(spec.anchor_rank, spec.latent_dim,
                              1.0 / std::sqrt(double(spec.latent_dim)));
    w.anchor_map = lift * read;
  } else {
    w.anchor_map = rng.normal_mat(spec.embed_dim, spec.latent_dim);
  }
  double obs_scale = 1.0 / std::sqrt(double(spec.latent_dim));
  w.map_a = rng.normal_mat(spec.obs_dim_a, spec.latent_dim, obs_scale);
  w.map_b = rng.normal_mat(spec.obs_dim_b, spec.latent_dim, obs_scale);

  w.class_prototypes.resize(spec.num_classes, spec.embed_dim);
  for (int c = 0; c < spec.num_classes; ++c)
    w.class_prototypes.row(c) =
        normalize(Vec(w.anchor_map * w.class_means.row(c).transpose()))
            .transpose();

  w.train_ca = make_split(spec, w, spec.train_samples, 0, rng);
  w.train_cb =
      make_split(spec, w, spec.train_samples, spec.train_samples, rng);
  w.eval_set =
      make_split(spec, w, spec.eval_samples, 2 * spec.train_samples, rng);

  // class-structure summary over the eval anchors
  double intra = 0.0, inter = 0.0;
  long n_intra = 0, n_inter = 0;
  const Split& e = w.eval_set;
  for (long i = 0; i < e.size(); ++i)
    for (long j = i + 1; j < e.size(); ++j) {
      double cs = e.anchors.row(i).dot(e.anchors.row(j));
      if (e.labels[size_t(i)] == e.labels[size_t(j)]) {
        intra += cs;
        ++n_intra;
      } else {
        inter += cs;
        ++n_inter;
      }
    }
  w.intra_class_cos = n_intra ? intra / double(n_intra) : 0.0;
  w.inter_class_cos = n_inter ? inter / double(n_inter) : 0.0;
  return w;
}

// ------------------------------------------------------------- sampler

bool pair_allowed(const WorldSpec& spec, PairKind pair, SplitKind split) {
  const auto& list =
      split == SplitKind::kEval ? spec.eval_pairs : spec.train_pairs;
  return std::find(list.begin(), list.end(), pair_kind_name(pair)) !=
         list.end();
}

namespace {

SplitKind train_split_for(PairKind pair) {
  switch (pair) {
    case PairKind::kAnchorA: return SplitKind::kTrainCA;
    case PairKind::kAnchorB: return SplitKind::kTrainCB;
    default: throw ForbiddenPair("emergent pair has no training split");
  }
}

}  // namespace

PairSampler::PairSampler(const World& world, PairKind pair, SplitKind split,
                         int batch_size, uint64_t seed)
    : world_(world),
      pair_(pair),
      split_(split),
      batch_size_(batch_size),
      rng_(seed) {
  if (batch_size < 1) throw InvalidSpec("batch_size must be positive");
  if (!pair_allowed(world.spec, pair, split))
    throw ForbiddenPair("pair " + pair_kind_name(pair) +
                        " is not allowed on split " + split_kind_name(split));
  if (split != SplitKind::kEval && split != train_split_for(pair))
    throw ForbiddenPair("pair " + pair_kind_name(pair) +
                        " trains on split " +
                        split_kind_name(train_split_for(pair)) + ", not " +
                        split_kind_name(split));
  reshuffle();
}

void PairSampler::reshuffle() {
  const Split& s = world_.split(split_);
  order_.resize(size_t(s.size()));
  for (long i = 0; i < s.size(); ++i) order_[size_t(i)] = int(i);
  rng_.shuffle(order_);
  cursor_ = 0;
  ++epochs_started_;
}

long PairSampler::batches_per_epoch() const {
  long n = world_.split(split_).size();
  return (n + batch_size_ - 1) / batch_size_;
}

PairBatch PairSampler::next() {
  if (cursor_ >= order_.size()) reshuffle();
  const Split& s = world_.split(split_);
  size_t hi = std::min(order_.size(), cursor_ + size_t(batch_size_));
  long bn = long(hi - cursor_);

  PairBatch b;
  b.ids.resize(size_t(bn));
  b.labels.resize(size_t(bn));
  const Mat* left = nullptr;
  const Mat* right = nullptr;
  switch (pair_) {
    case PairKind::kAnchorA:
      left = &s.anchors;
      right = &s.obs_a;
      break;
    case PairKind::kAnchorB:
      left = &s.anchors;
      right = &s.obs_b;
      break;
    case PairKind::kAB:
      left = &s.obs_a;
      right = &s.obs_b;
      break;
  }
  b.left.resize(bn, left->cols());
  b.right.resize(bn, right->cols());
  for (long i = 0; i < bn; ++i) {
    int row = order_[cursor_ + size_t(i)];
    b.left.row(i) = left->row(row);
    b.right.row(i) = right->row(row);
    b.ids[size_t(i)] = s.ids[size_t(row)];
    b.labels[size_t(i)] = s.labels[size_t(row)];
  }
  cursor_ = hi;
  samples_served_ += bn;
  return b;
}

void PairAudit::record(PairKind p, SplitKind s, long n) {
  samples[pair_kind_name(p) + "/" + split_kind_name(s)] += n;
}

}  // namespace embridge
