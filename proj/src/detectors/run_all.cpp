#include "loglake/detectors.hpp"
#include "loglake/errors.hpp"

namespace loglake {
namespace {

template <typename E>
[[noreturn]] void rethrow_named(Detector d, const E& e) {
  throw E(std::string(to_string(d)) + ": " + e.what());
}

}  // namespace

DetectorResult detect(Detector d, const Matrix& x, const DetectorConfig& cfg) {
  switch (d) {
    case Detector::kKnn: return knn_detect(x, cfg);
    case Detector::kKMeans: return kmeans_detect(x, cfg);
    case Detector::kIForest: return iforest_detect(x, cfg);
    case Detector::kLof: return lof_detect(x, cfg);
    case Detector::kOcsvm: return ocsvm_detect(x, cfg);
  }
  throw UsageError("unknown detector");
}

std::vector<DetectorResult> run_all(const Matrix& x, const DetectorConfig& cfg) {
  cfg.validate();
  std::vector<DetectorResult> results;
  results.reserve(kAllDetectors.size());
  for (Detector d : kAllDetectors) {
    try {
      results.push_back(detect(d, x, cfg));
    } catch (const TooFewRows& e) {
      rethrow_named(d, e);
    } catch (const UsageError& e) {
      rethrow_named(d, e);
    }
  }
  return results;
}

}  // namespace loglake
