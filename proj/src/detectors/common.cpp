#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "loglake/detectors.hpp"
#include "loglake/errors.hpp"

namespace loglake {

std::string_view to_string(Detector d) {
  switch (d) {
    case Detector::kKnn: return "KNN";
    case Detector::kKMeans: return "KMeans";
    case Detector::kIForest: return "IForest";
    case Detector::kLof: return "LOF";
    case Detector::kOcsvm: return "OCSVM";
  }
  return "?";
}

std::string_view to_string(Category c) {
  switch (c) {
    case Category::kDistance: return "Distance";
    case Category::kDensity: return "Density";
    case Category::kClassification: return "Classification";
  }
  return "?";
}

Category category_of(Detector d) {
  switch (d) {
    case Detector::kKnn:
    case Detector::kKMeans: return Category::kDistance;
    case Detector::kIForest:
    case Detector::kLof: return Category::kDensity;
    case Detector::kOcsvm: return Category::kClassification;
  }
  return Category::kDistance;
}

std::optional<Detector> parse_detector(std::string_view name) {
  auto lower = [](std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
  };
  for (Detector d : kAllDetectors) {
    if (lower(to_string(d)) == lower(name)) return d;
  }
  return std::nullopt;
}

double DetectorConfig::contamination(Detector d) const {
  auto it = contaminations.find(d);
  if (it == contaminations.end()) {
    throw UsageError("no contamination configured for " +
                     std::string(to_string(d)));
  }
  return it->second;
}

double DetectorConfig::gamma_for(std::size_t cols) const {
  if (ocsvm_gamma > 0.0) return ocsvm_gamma;
  return 1.0 / static_cast<double>(std::max<std::size_t>(cols, 1));
}

void DetectorConfig::validate() const {
  if (knn_k < 1 || kmeans_k < 1 || kmeans_max_iter < 1 || iforest_trees < 1 ||
      iforest_sample < 1 || lof_k < 1 || ocsvm_max_sweeps < 1) {
    throw UsageError("detector counts must be >= 1");
  }
  if (!(ocsvm_nu > 0.0 && ocsvm_nu < 1.0)) {
    throw UsageError("ocsvm nu must be in (0, 1)");
  }
  if (!(ocsvm_tolerance > 0.0)) throw UsageError("ocsvm tolerance must be > 0");
  for (Detector d : kAllDetectors) {
    double c = contamination(d);
    if (!(c > 0.0 && c < 0.5)) {
      throw UsageError("contamination for " + std::string(to_string(d)) +
                       " must be in (0, 0.5)");
    }
  }
}

std::size_t flag_count(double contamination, std::size_t n) {
  const double exact = contamination * static_cast<double>(n);
  const double rounded = std::round(exact);
  const double value =
      std::abs(exact - rounded) <= 1e-9 * std::max(1.0, exact) ? rounded
                                                               : std::ceil(exact);
  return std::min(n, static_cast<std::size_t>(value));
}

std::vector<std::size_t> rank_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  return order;
}

std::vector<std::size_t> score_ranks(std::span<const double> scores) {
  auto order = rank_order(scores);
  std::vector<std::size_t> ranks(scores.size());
  for (std::size_t r = 0; r < order.size(); ++r) ranks[order[r]] = r + 1;
  return ranks;
}

std::vector<std::size_t> top_flagged(std::span<const double> scores,
                                     double contamination) {
  auto order = rank_order(scores);
  order.resize(flag_count(contamination, scores.size()));
  std::sort(order.begin(), order.end());
  return order;
}

double rbf_kernel(std::span<const double> a, std::span<const double> b,
                  double gamma) {
  return std::exp(-gamma * squared_distance(a, b));
}

}  // namespace loglake
