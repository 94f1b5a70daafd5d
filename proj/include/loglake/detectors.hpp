#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "loglake/matrix.hpp"

namespace loglake {

enum class Detector { kKnn = 0, kKMeans = 1, kIForest = 2, kLof = 3, kOcsvm = 4 };
enum class Category { kDistance, kDensity, kClassification };

inline constexpr std::array<Detector, 5> kAllDetectors = {
    Detector::kKnn, Detector::kKMeans, Detector::kIForest, Detector::kLof,
    Detector::kOcsvm};

std::string_view to_string(Detector d);
std::string_view to_string(Category c);
Category category_of(Detector d);
std::optional<Detector> parse_detector(std::string_view name);

struct DetectorConfig {
  std::size_t knn_k = 5;
  std::size_t kmeans_k = 8;
  std::size_t kmeans_max_iter = 100;
  std::size_t iforest_trees = 100;
  std::size_t iforest_sample = 256;
  std::size_t lof_k = 20;
  double ocsvm_nu = 0.02;
  // Non-positive means 1 / column count.
  double ocsvm_gamma = 0.0;
  double ocsvm_tolerance = 1e-6;
  std::size_t ocsvm_max_sweeps = 10000;
  std::uint64_t seed = 0;
  // 0 = hardware concurrency. Results do not depend on it.
  unsigned threads = 0;
  std::map<Detector, double> contaminations = {
      {Detector::kKnn, 0.02},     {Detector::kKMeans, 0.02},
      {Detector::kIForest, 0.03}, {Detector::kLof, 0.05},
      {Detector::kOcsvm, 0.02}};

  double contamination(Detector d) const;
  double gamma_for(std::size_t cols) const;
  // Throws UsageError on a count of zero or a parameter out of range.
  void validate() const;
};

struct DetectorResult {
  Detector detector = Detector::kKnn;
  Category category = Category::kDistance;
  std::vector<double> scores;       // higher = more anomalous
  std::vector<std::size_t> flagged; // ascending row indices
  double contamination = 0.0;
  bool converged = true;
  std::string warning;

  bool operator==(const DetectorResult&) const = default;
};

// ceil(contamination * n), guarded against representation error in the
// product (0.03 * 1000 must give 30, not 31).
std::size_t flag_count(double contamination, std::size_t n);

// Rows ordered most anomalous first: descending score, ascending index.
std::vector<std::size_t> rank_order(std::span<const double> scores);

// 1-based rank of every row under rank_order.
std::vector<std::size_t> score_ranks(std::span<const double> scores);

// The first flag_count(contamination, n) rows of rank_order, sorted by index.
std::vector<std::size_t> top_flagged(std::span<const double> scores,
                                     double contamination);

// --- K nearest neighbours ---------------------------------------------------

// Distance from every row to its k-th nearest other row.
std::vector<double> knn_scores(const Matrix& x, std::size_t k, unsigned threads = 0);
DetectorResult knn_detect(const Matrix& x, const DetectorConfig& cfg);

// --- K-means ----------------------------------------------------------------

struct KMeansModel {
  Matrix centroids;
  std::vector<std::size_t> assignment;
  std::size_t iterations = 0;
  bool converged = false;  // assignment fixpoint reached
};

// Lloyd's algorithm from greedy k-means++ seeding.
KMeansModel kmeans_fit(const Matrix& x, std::size_t k, std::size_t max_iter,
                       std::uint64_t seed, unsigned threads = 0);
DetectorResult kmeans_detect(const Matrix& x, const DetectorConfig& cfg);

// --- Isolation forest -------------------------------------------------------

// c(n) = 2 H(n-1) - 2 (n-1) / n, with c(0) = c(1) = 0.
double average_path_length(std::size_t n);
double harmonic_number(std::size_t n);

// Mean isolation depth E[h(x)] of every row over the forest.
std::vector<double> isolation_path_lengths(const Matrix& x, std::size_t trees,
                                           std::size_t sample, std::uint64_t seed,
                                           unsigned threads = 0);
DetectorResult iforest_detect(const Matrix& x, const DetectorConfig& cfg);

// --- Local outlier factor ---------------------------------------------------

std::vector<double> lof_scores(const Matrix& x, std::size_t k, unsigned threads = 0);
DetectorResult lof_detect(const Matrix& x, const DetectorConfig& cfg);

// --- One-class SVM ----------------------------------------------------------

struct OneClassSvmOptions {
  double nu = 0.02;
  double gamma = 0.125;
  double tolerance = 1e-6;
  std::size_t max_sweeps = 10000;  // one sweep = N pair updates
  unsigned threads = 0;
};

struct OneClassSvmSolution {
  std::vector<double> alpha;
  double rho = 0.0;
  std::vector<double> decision;  // sum_j alpha_j K(j, i) - rho
  double upper_bound = 0.0;      // 1 / (nu N)
  double kkt_gap = 0.0;
  std::size_t updates = 0;
  bool converged = false;
};

double rbf_kernel(std::span<const double> a, std::span<const double> b,
                  double gamma);

OneClassSvmSolution solve_one_class_svm(const Matrix& x,
                                        const OneClassSvmOptions& options);
DetectorResult ocsvm_detect(const Matrix& x, const DetectorConfig& cfg);

// --- All five ---------------------------------------------------------------

// Results in kAllDetectors order. Each detector draws from the substream
// seed XOR ordinal. Errors are rethrown with the detector name prefixed.
std::vector<DetectorResult> run_all(const Matrix& x, const DetectorConfig& cfg);

DetectorResult detect(Detector d, const Matrix& x, const DetectorConfig& cfg);

}  // namespace loglake
