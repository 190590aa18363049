#include "embridge/metrics.hpp"

#include <algorithm>

#include "embridge/geometry.hpp"

namespace embridge {

double RetrievalResult::recall_at(int k) const {
  for (size_t i = 0; i < ks.size(); ++i)
    if (ks[i] == k) return recall[i];
  throw InvalidSpec("recall_at: k not evaluated");
}

RetrievalResult recall_at_k(const Mat& queries, const Mat& gallery,
                            const std::vector<int>& truth,
                            const std::vector<int>& ks) {
  if (queries.rows() == 0) throw EmptyInput("recall_at_k: no queries");
  if (gallery.rows() == 0) throw EmptyGallery("recall_at_k: empty gallery");
  require_shape(long(truth.size()) == queries.rows(),
                "recall_at_k: one truth index per query");
  if (ks.empty()) throw InvalidSpec("recall_at_k: no k values");
  for (int k : ks)
    if (k < 1) throw InvalidSpec("recall_at_k: k must be >= 1");

  Mat qn = normalize_rows(queries);
  Mat gn = normalize_rows(gallery);
  Mat sims = qn * gn.transpose();

  std::vector<long> hits_at(ks.size(), 0);
  for (long i = 0; i < sims.rows(); ++i) {
    int t = truth[size_t(i)];
    require_shape(t >= 0 && t < gallery.rows(),
                  "recall_at_k: truth index out of range");
    double st = sims(i, t);
    // rank = better-scoring items plus equal-scoring items of lower index
    long rank = 0;
    for (long j = 0; j < sims.cols(); ++j) {
      if (j == t) continue;
      if (sims(i, j) > st || (sims(i, j) == st && j < t)) ++rank;
    }
    for (size_t m = 0; m < ks.size(); ++m)
      if (rank < ks[m]) ++hits_at[m];
  }

  RetrievalResult r;
  r.ks = ks;
  for (size_t m = 0; m < ks.size(); ++m)
    r.recall.push_back(double(hits_at[m]) / double(queries.rows()));
  return r;
}

double top1_zero_shot(const Mat& queries, const Mat& prototypes,
                      const std::vector<int>& labels) {
  if (queries.rows() == 0) throw EmptyInput("top1_zero_shot: no queries");
  if (prototypes.rows() == 0)
    throw EmptyGallery("top1_zero_shot: no prototypes");
  require_shape(long(labels.size()) == queries.rows(),
                "top1_zero_shot: one label per query");
  for (int l : labels)
    if (l < 0 || l >= prototypes.rows())
      throw ClassCountMismatch(
          "top1_zero_shot: label outside prototype range");

  Mat qn = normalize_rows(queries);
  Mat pn = normalize_rows(prototypes);
  long correct = 0;
  for (long i = 0; i < qn.rows(); ++i) {
    int best = 0;
    double best_s = qn.row(i).dot(pn.row(0));
    for (long c = 1; c < pn.rows(); ++c) {
      double s = qn.row(i).dot(pn.row(c));
      if (s > best_s) {  // ties keep the lower class index
        best_s = s;
        best = int(c);
      }
    }
    if (best == labels[size_t(i)]) ++correct;
  }
  return double(correct) / double(qn.rows());
}

}  // namespace embridge
