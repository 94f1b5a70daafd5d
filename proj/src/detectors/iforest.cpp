#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "loglake/detectors.hpp"
#include "loglake/errors.hpp"
#include "loglake/parallel.hpp"
#include "loglake/random.hpp"

namespace loglake {
namespace {

struct Node {
  std::size_t feature = 0;
  double cut = 0.0;
  std::size_t left = 0;   // child indices; 0 on leaves (root is never a child)
  std::size_t right = 0;
  std::size_t size = 0;
  double adjust = 0.0;  // c(size), precomputed for leaves
  bool leaf = true;
};

class IsolationTree {
 public:
  IsolationTree(const Matrix& x, std::vector<std::size_t> sample,
                std::size_t depth_limit, Rng& rng)
      : x_(x), depth_limit_(depth_limit) {
    build(sample, 0, sample.size(), 0, rng);
  }

  double path_length(std::span<const double> row) const {
    std::size_t node = 0;
    std::size_t depth = 0;
    while (!nodes_[node].leaf) {
      node = row[nodes_[node].feature] < nodes_[node].cut ? nodes_[node].left
                                                         : nodes_[node].right;
      ++depth;
    }
    return static_cast<double>(depth) + nodes_[node].adjust;
  }

 private:
  std::size_t build(std::vector<std::size_t>& idx, std::size_t begin,
                    std::size_t end, std::size_t depth, Rng& rng) {
    const std::size_t id = nodes_.size();
    nodes_.push_back(Node{});
    nodes_[id].size = end - begin;
    nodes_[id].adjust = average_path_length(end - begin);
    if (depth >= depth_limit_ || end - begin <= 1) return id;

    // Only features that vary inside this node can split it.
    std::vector<std::size_t> candidates;
    std::vector<double> lo(x_.cols()), hi(x_.cols());
    for (std::size_t f = 0; f < x_.cols(); ++f) {
      lo[f] = hi[f] = x_(idx[begin], f);
      for (std::size_t i = begin + 1; i < end; ++i) {
        lo[f] = std::min(lo[f], x_(idx[i], f));
        hi[f] = std::max(hi[f], x_(idx[i], f));
      }
      if (hi[f] > lo[f]) candidates.push_back(f);
    }
    if (candidates.empty()) return id;  // all duplicates

    const std::size_t f = candidates[rng.below(candidates.size())];
    double cut = lo[f] + rng.uniform_open() * (hi[f] - lo[f]);
    if (cut <= lo[f]) cut = hi[f];

    auto mid = std::partition(idx.begin() + begin, idx.begin() + end,
                              [&](std::size_t i) { return x_(i, f) < cut; });
    const std::size_t split = static_cast<std::size_t>(mid - idx.begin());

    nodes_[id].leaf = false;
    nodes_[id].adjust = 0.0;
    nodes_[id].feature = f;
    nodes_[id].cut = cut;
    const std::size_t left = build(idx, begin, split, depth + 1, rng);
    const std::size_t right = build(idx, split, end, depth + 1, rng);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  const Matrix& x_;
  std::size_t depth_limit_;
  std::vector<Node> nodes_;
};

}  // namespace

double harmonic_number(std::size_t n) {
  double h = 0.0;
  for (std::size_t i = 1; i <= n; ++i) h += 1.0 / static_cast<double>(i);
  return h;
}

double average_path_length(std::size_t n) {
  if (n <= 1) return 0.0;
  const double dn = static_cast<double>(n);
  return 2.0 * harmonic_number(n - 1) - 2.0 * (dn - 1.0) / dn;
}

std::vector<double> isolation_path_lengths(const Matrix& x, std::size_t trees,
                                           std::size_t sample, std::uint64_t seed,
                                           unsigned threads) {
  const std::size_t n = x.rows();
  if (n < 2) throw TooFewRows("IForest needs at least 2 rows");
  const std::size_t psi = std::min(sample, n);
  const auto depth_limit =
      static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(psi))));

  std::vector<std::optional<IsolationTree>> forest(trees);
  parallel_for(trees, threads, [&](std::size_t t) {
    Rng rng(splitmix64(seed) + t);
    // Partial Fisher-Yates: the first psi slots become the subsample.
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    for (std::size_t i = 0; i < psi; ++i) {
      std::swap(all[i], all[i + rng.below(n - i)]);
    }
    all.resize(psi);
    forest[t].emplace(x, std::move(all), depth_limit, rng);
  });

  std::vector<double> mean_depth(n);
  parallel_for(n, threads, [&](std::size_t i) {
    double sum = 0.0;
    for (const auto& tree : forest) sum += tree->path_length(x.row(i));
    mean_depth[i] = sum / static_cast<double>(trees);
  });
  return mean_depth;
}

DetectorResult iforest_detect(const Matrix& x, const DetectorConfig& cfg) {
  DetectorResult r;
  r.detector = Detector::kIForest;
  r.category = category_of(r.detector);
  r.contamination = cfg.contamination(r.detector);
  auto depth = isolation_path_lengths(
      x, cfg.iforest_trees, cfg.iforest_sample,
      substream_seed(cfg.seed, static_cast<std::uint64_t>(r.detector)),
      cfg.threads);
  const double norm = average_path_length(std::min(cfg.iforest_sample, x.rows()));
  r.scores.resize(depth.size());
  for (std::size_t i = 0; i < depth.size(); ++i) {
    r.scores[i] = std::exp2(-depth[i] / norm);
  }
  r.flagged = top_flagged(r.scores, r.contamination);
  return r;
}

}  // namespace loglake
