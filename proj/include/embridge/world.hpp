#pragma once

#include <map>

#include "embridge/common.hpp"

namespace embridge {

/// Modality pairs the samplers can serve. The emergent pair (a_b) never
/// appears in training; guards enforce that.
enum class PairKind { kAnchorA, kAnchorB, kAB };
enum class SplitKind { kTrainCA, kTrainCB, kEval };

std::string pair_kind_name(PairKind p);
std::string split_kind_name(SplitKind s);

struct WorldSpec;
/// Whether the pairing graph permits serving this pair on this split.
bool pair_allowed(const WorldSpec& spec, PairKind pair, SplitKind split);

struct WorldSpec {
  int num_classes = 10;
  int latent_dim = 8;
  int embed_dim = 16;
  int obs_dim_a = 32;
  int obs_dim_b = 32;
  // anchors may see the latent through a rank-limited map, the way a caption
  // names an image loosely; 0 means full rank and the anchor pins the latent
  // direction exactly
  int anchor_rank = 0;
  double noise_std_a = 0.1;
  double noise_std_b = 0.1;
  double latent_jitter = 0.5;
  int train_samples = 2000;  // per paired training split
  int eval_samples = 500;
  uint64_t seed = 1234;
  // pairing graph: which pairs may be served from train vs eval splits
  std::vector<std::string> train_pairs = {"anchor_a", "anchor_b"};
  std::vector<std::string> eval_pairs = {"anchor_a", "anchor_b", "a_b"};

  void validate() const;  // throws InvalidSpec naming the offending field
};

struct Split {
  std::vector<int> ids;     // globally unique sample ids
  std::vector<int> labels;
  Mat anchors;              // N x embed_dim, unit rows
  Mat obs_a;                // N x obs_dim_a
  Mat obs_b;                // N x obs_dim_b
  long size() const { return long(ids.size()); }
};

struct World {
  WorldSpec spec;
  Mat class_means;        // C x k
  Mat anchor_map;         // embed_dim x k
  Mat map_a, map_b;       // obs_dim x k
  Mat class_prototypes;   // C x embed_dim, unit rows (anchor space)
  Split train_ca, train_cb, eval_set;
  double intra_class_cos = 0.0;  // mean anchor cosine, same class
  double inter_class_cos = 0.0;  // mean anchor cosine, different class

  const Split& split(SplitKind s) const;
};

/// Deterministic generation from the spec; identical spec gives identical
/// worlds.
World generate_world(const WorldSpec& spec);

struct PairBatch {
  Mat left;   // anchors or obs_a depending on the pair
  Mat right;
  std::vector<int> ids;
  std::vector<int> labels;
};

/// Epoch-wise batch cursor over one (pair, split). Each epoch is a fresh
/// seeded shuffle that covers every sample exactly once; the trailing
/// partial batch is served. Construction throws ForbiddenPair when the
/// requested pair is not allowed on the split by the pairing graph.
class PairSampler {
 public:
  PairSampler(const World& world, PairKind pair, SplitKind split,
              int batch_size, uint64_t seed);

  PairBatch next();  // starts a new epoch automatically when exhausted
  long batches_per_epoch() const;
  long samples_served() const { return samples_served_; }
  long epochs_started() const { return epochs_started_; }

 private:
  const World& world_;
  PairKind pair_;
  SplitKind split_;
  int batch_size_;
  Rng rng_;
  std::vector<int> order_;
  size_t cursor_ = 0;
  long samples_served_ = 0;
  long epochs_started_ = 0;
  void reshuffle();
};

/// Audit trail of (pair, split) service counts for one run.
struct PairAudit {
  std::map<std::string, long> samples;  // "pair/split" -> samples served
  void record(PairKind p, SplitKind s, long n);
};

}  // namespace embridge
