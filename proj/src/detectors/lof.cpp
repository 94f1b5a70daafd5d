#include <algorithm>
#include <cmath>
#include <limits>

#include "loglake/detectors.hpp"
#include "loglake/errors.hpp"
#include "loglake/parallel.hpp"

namespace loglake {

std::vector<double> lof_scores(const Matrix& x, std::size_t k, unsigned threads) {
  const std::size_t n = x.rows();
  if (k < 1 || n <= k) {
    throw TooFewRows("LOF needs more than k=" + std::to_string(k) + " rows, got " +
                     std::to_string(n));
  }
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // k nearest other rows per row, ordered by (distance, index).
  std::vector<std::size_t> nbr(n * k);
  std::vector<double> nbr_dist(n * k);
  std::vector<double> kdist(n);
  parallel_for(n, threads, [&](std::size_t i) {
    std::vector<std::pair<double, std::size_t>> cand;
    cand.reserve(n - 1);
    const auto xi = x.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) cand.emplace_back(squared_distance(xi, x.row(j)), j);
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    for (std::size_t m = 0; m < k; ++m) {
      nbr[i * k + m] = cand[m].second;
      nbr_dist[i * k + m] = std::sqrt(cand[m].first);
    }
    kdist[i] = nbr_dist[i * k + k - 1];
  });

  // Local reachability density; +inf when every reach distance is zero.
  std::vector<double> lrd(n);
  parallel_for(n, threads, [&](std::size_t i) {
    double sum = 0.0;
    for (std::size_t m = 0; m < k; ++m) {
      sum += std::max(kdist[nbr[i * k + m]], nbr_dist[i * k + m]);
    }
    lrd[i] = sum > 0.0 ? static_cast<double>(k) / sum : kInf;
  });

  std::vector<double> scores(n);
  parallel_for(n, threads, [&](std::size_t i) {
    double sum = 0.0;
    for (std::size_t m = 0; m < k; ++m) {
      const double other = lrd[nbr[i * k + m]];
      double ratio;
      if (std::isinf(lrd[i])) {
        ratio = std::isinf(other) ? 1.0 : 0.0;
      } else {
        ratio = other / lrd[i];  // +inf when the neighbour is a duplicate pile
      }
      sum += ratio;
    }
    scores[i] = sum / static_cast<double>(k);
  });
  return scores;
}

DetectorResult lof_detect(const Matrix& x, const DetectorConfig& cfg) {
  DetectorResult r;
  r.detector = Detector::kLof;
  r.category = category_of(r.detector);
  r.contamination = cfg.contamination(r.detector);
  r.scores = lof_scores(x, cfg.lof_k, cfg.threads);
  r.flagged = top_flagged(r.scores, r.contamination);
  return r;
}

}  // namespace loglake
