#include <algorithm>
#include <cmath>
#include <limits>

#include "loglake/detectors.hpp"
#include "loglake/errors.hpp"
#include "loglake/parallel.hpp"
#include "loglake/random.hpp"

namespace loglake {
namespace {

// Index i with weights[0..i) < u <= weights[0..i]; zero-weight rows are never
// returned unless every weight is zero.
std::size_t sample_weighted(std::span<const double> weights, double total,
                            Rng& rng) {
  const double target = rng.uniform() * total;
  double cum = 0.0;
  std::size_t last_positive = weights.size();
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    cum += weights[i];
    last_positive = i;
    if (cum > target) return i;
  }
  return last_positive;
}

Matrix seed_centroids(const Matrix& x, std::size_t k, Rng& rng) {
  const std::size_t n = x.rows();
  Matrix centroids;
  std::vector<bool> chosen(n, false);

  std::size_t first = rng.below(n);
  centroids.append_row(x.row(first));
  chosen[first] = true;

  std::vector<double> d2(n);
  double potential = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    d2[i] = squared_distance(x.row(i), x.row(first));
    potential += d2[i];
  }

  const std::size_t trials =
      2 + static_cast<std::size_t>(std::log(static_cast<double>(k)));
  std::vector<double> candidate_d2(n);
  std::vector<double> best_d2(n);
  while (centroids.rows() < k) {
    if (potential <= 0.0) {
      // Fewer distinct rows than k: take the lowest unused row.
      std::size_t next = 0;
      while (chosen[next]) ++next;
      centroids.append_row(x.row(next));
      chosen[next] = true;
      continue;
    }
    std::size_t best = n;
    double best_potential = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t c = sample_weighted(d2, potential, rng);
      double p = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        candidate_d2[i] = std::min(d2[i], squared_distance(x.row(i), x.row(c)));
        p += candidate_d2[i];
      }
      if (p < best_potential) {
        best_potential = p;
        best = c;
        best_d2.swap(candidate_d2);
      }
    }
    centroids.append_row(x.row(best));
    chosen[best] = true;
    d2.swap(best_d2);
    potential = best_potential;
  }
  return centroids;
}

std::size_t nearest(const Matrix& centroids, std::span<const double> row,
                    double& best_d2) {
  std::size_t best = 0;
  best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    double d = squared_distance(row, centroids.row(c));
    if (d < best_d2) {
      best_d2 = d;
      best = c;
    }
  }
  return best;
}

}  // namespace

KMeansModel kmeans_fit(const Matrix& x, std::size_t k, std::size_t max_iter,
                       std::uint64_t seed, unsigned threads) {
  const std::size_t n = x.rows();
  if (k < 1 || n < k) {
    throw TooFewRows("KMeans needs at least k=" + std::to_string(k) +
                     " rows, got " + std::to_string(n));
  }
  Rng rng(seed);
  KMeansModel model;
  model.centroids = seed_centroids(x, k, rng);
  model.assignment.assign(n, k);  // k = unassigned

  std::vector<std::size_t> next(n);
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    parallel_for(n, threads, [&](std::size_t i) {
      double d2;
      next[i] = nearest(model.centroids, x.row(i), d2);
    });
    model.iterations = iter + 1;
    if (next == model.assignment) {
      model.converged = true;
      break;
    }
    model.assignment = next;

    Matrix sums(k, x.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto dst = sums.row(model.assignment[i]);
      auto src = x.row(i);
      for (std::size_t c = 0; c < x.cols(); ++c) dst[c] += src[c];
      ++counts[model.assignment[i]];
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] == 0) continue;  // empty cluster keeps its centroid
      auto dst = model.centroids.row(j);
      auto src = sums.row(j);
      for (std::size_t c = 0; c < x.cols(); ++c) {
        dst[c] = src[c] / static_cast<double>(counts[j]);
      }
    }
  }
  return model;
}

DetectorResult kmeans_detect(const Matrix& x, const DetectorConfig& cfg) {
  DetectorResult r;
  r.detector = Detector::kKMeans;
  r.category = category_of(r.detector);
  r.contamination = cfg.contamination(r.detector);
  auto model = kmeans_fit(x, cfg.kmeans_k, cfg.kmeans_max_iter,
                          substream_seed(cfg.seed, static_cast<std::uint64_t>(r.detector)),
                          cfg.threads);
  r.scores.resize(x.rows());
  parallel_for(x.rows(), cfg.threads, [&](std::size_t i) {
    double d2;
    nearest(model.centroids, x.row(i), d2);
    r.scores[i] = std::sqrt(d2);
  });
  r.flagged = top_flagged(r.scores, r.contamination);
  return r;
}

}  // namespace loglake
