#pragma once

#include "embridge/common.hpp"

namespace embridge {

struct RetrievalResult {
  std::vector<int> ks;
  std::vector<double> recall;  // same order as ks, nondecreasing in k
  double recall_at(int k) const;
};

/// Cosine retrieval of gallery items by query rows. truth[i] is the gallery
/// row holding query i's true match. Ties rank by lower gallery index.
RetrievalResult recall_at_k(const Mat& queries, const Mat& gallery,
                            const std::vector<int>& truth,
                            const std::vector<int>& ks);

/// Nearest-prototype classification accuracy; ties resolve to the lowest
/// class index.
double top1_zero_shot(const Mat& queries, const Mat& prototypes,
                      const std::vector<int>& labels);

}  // namespace embridge
