#include <algorithm>
#include <cmath>

#include "loglake/detectors.hpp"
#include "loglake/errors.hpp"
#include "loglake/parallel.hpp"

namespace loglake {

std::vector<double> knn_scores(const Matrix& x, std::size_t k, unsigned threads) {
  const std::size_t n = x.rows();
  if (k < 1 || n <= k) {
    throw TooFewRows("KNN needs more than k=" + std::to_string(k) + " rows, got " +
                     std::to_string(n));
  }
  std::vector<double> scores(n);
  parallel_for(n, threads, [&](std::size_t i) {
    std::vector<double> d2;
    d2.reserve(n - 1);
    const auto xi = x.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) d2.push_back(squared_distance(xi, x.row(j)));
    }
    std::nth_element(d2.begin(), d2.begin() + (k - 1), d2.end());
    scores[i] = std::sqrt(d2[k - 1]);
  });
  return scores;
}

DetectorResult knn_detect(const Matrix& x, const DetectorConfig& cfg) {
  DetectorResult r;
  r.detector = Detector::kKnn;
  r.category = category_of(r.detector);
  r.contamination = cfg.contamination(r.detector);
  r.scores = knn_scores(x, cfg.knn_k, cfg.threads);
  r.flagged = top_flagged(r.scores, r.contamination);
  return r;
}

}  // namespace loglake
