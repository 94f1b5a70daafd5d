#include <algorithm>
#include <cmath>
#include <limits>
#include <list>
#include <unordered_map>

#include "loglake/detectors.hpp"
#include "loglake/errors.hpp"
#include "loglake/parallel.hpp"

namespace loglake {
namespace {

// LRU cache of kernel rows K(i, .).
class KernelRows {
 public:
  KernelRows(const Matrix& x, double gamma, std::size_t capacity)
      : x_(x), gamma_(gamma), capacity_(std::max<std::size_t>(capacity, 2)) {}

  const std::vector<double>& row(std::size_t i) {
    if (auto it = index_.find(i); it != index_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second);
      return it->second->second;
    }
    if (lru_.size() >= capacity_) {
      index_.erase(lru_.back().first);
      lru_.pop_back();
    }
    std::vector<double> values(x_.rows());
    const auto xi = x_.row(i);
    for (std::size_t j = 0; j < x_.rows(); ++j) {
      values[j] = rbf_kernel(xi, x_.row(j), gamma_);
    }
    lru_.emplace_front(i, std::move(values));
    index_[i] = lru_.begin();
    return lru_.front().second;
  }

 private:
  using Entry = std::pair<std::size_t, std::vector<double>>;
  const Matrix& x_;
  double gamma_;
  std::size_t capacity_;
  std::list<Entry> lru_;
  std::unordered_map<std::size_t, std::list<Entry>::iterator> index_;
};

// g0 + mean(g - g0): exact when every value is equal.
double stable_mean(const std::vector<double>& values) {
  const double g0 = values.front();
  double sum = 0.0;
  for (double v : values) sum += v - g0;
  return g0 + sum / static_cast<double>(values.size());
}

}  // namespace

OneClassSvmSolution solve_one_class_svm(const Matrix& x,
                                        const OneClassSvmOptions& options) {
  const std::size_t n = x.rows();
  if (n < 2) throw TooFewRows("OCSVM needs at least 2 rows");
  if (!(options.nu > 0.0 && options.nu < 1.0)) {
    throw UsageError("ocsvm nu must be in (0, 1)");
  }

  OneClassSvmSolution sol;
  const double c = 1.0 / (options.nu * static_cast<double>(n));
  sol.upper_bound = c;

  // Feasible start: fill the leading rows to the bound until the mass is 1.
  sol.alpha.assign(n, 0.0);
  {
    double remaining = 1.0;
    for (std::size_t i = 0; i < n && remaining > 0.0; ++i) {
      sol.alpha[i] = std::min(c, remaining);
      remaining -= sol.alpha[i];
    }
  }
  auto& alpha = sol.alpha;

  const std::size_t cache_rows = (std::size_t{64} << 20) / (sizeof(double) * n);
  KernelRows kernel(x, options.gamma, cache_rows);

  std::vector<double> grad(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    if (alpha[j] == 0.0) continue;
    const auto& kj = kernel.row(j);
    for (std::size_t i = 0; i < n; ++i) grad[i] += alpha[j] * kj[i];
  }

  const std::size_t max_updates = options.max_sweeps * n;
  constexpr double kTau = 1e-12;
  while (true) {
    // Second-order working set selection: i raises alpha, j lowers it.
    std::size_t i = n;
    double gmin = std::numeric_limits<double>::infinity();
    double gmax = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      if (alpha[t] < c && grad[t] < gmin) {
        gmin = grad[t];
        i = t;
      }
      if (alpha[t] > 0.0 && grad[t] > gmax) gmax = grad[t];
    }
    sol.kkt_gap = gmax - gmin;
    if (i == n || sol.kkt_gap < options.tolerance) {
      sol.converged = true;
      break;
    }
    if (sol.updates >= max_updates) break;

    const std::vector<double> ki = kernel.row(i);
    std::size_t j = n;
    double best_gain = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      if (alpha[t] <= 0.0 || grad[t] <= gmin) continue;
      const double diff = grad[t] - gmin;
      double eta = ki[i] + 1.0 - 2.0 * ki[t];  // K(t,t) = 1 for the RBF kernel
      if (eta <= 0.0) eta = kTau;
      const double gain = diff * diff / eta;
      if (gain > best_gain) {
        best_gain = gain;
        j = t;
      }
    }
    if (j == n) {
      sol.converged = true;
      break;
    }
    const auto& kj = kernel.row(j);

    double eta = ki[i] + kj[j] - 2.0 * ki[j];
    if (eta <= 0.0) eta = kTau;
    double delta = (grad[j] - grad[i]) / eta;
    delta = std::min({delta, c - alpha[i], alpha[j]});

    alpha[i] += delta;
    alpha[j] -= delta;
    if (alpha[i] > c) alpha[i] = c;
    if (c - alpha[i] < kTau * c) alpha[i] = c;
    if (alpha[j] < kTau * c) alpha[j] = 0.0;
    for (std::size_t t = 0; t < n; ++t) grad[t] += delta * (ki[t] - kj[t]);
    ++sol.updates;
  }

  // Recompute the gradient exactly; incremental updates drift.
  std::vector<std::size_t> support;
  for (std::size_t j = 0; j < n; ++j) {
    if (alpha[j] > 0.0) support.push_back(j);
  }
  std::vector<double> exact(n, 0.0);
  parallel_for(n, options.threads, [&](std::size_t i) {
    double sum = 0.0;
    for (std::size_t j : support) {
      sum += alpha[j] * rbf_kernel(x.row(j), x.row(i), options.gamma);
    }
    exact[i] = sum;
  });

  std::vector<double> free_grad;
  double lower = -std::numeric_limits<double>::infinity();  // max over alpha = C
  double upper = std::numeric_limits<double>::infinity();   // min over alpha = 0
  for (std::size_t t = 0; t < n; ++t) {
    if (alpha[t] > 0.0 && alpha[t] < c) {
      free_grad.push_back(exact[t]);
    } else if (alpha[t] >= c) {
      lower = std::max(lower, exact[t]);
    } else {
      upper = std::min(upper, exact[t]);
    }
  }
  if (!free_grad.empty()) {
    sol.rho = stable_mean(free_grad);
  } else if (std::isinf(lower)) {
    sol.rho = upper;
  } else if (std::isinf(upper)) {
    sol.rho = lower;
  } else {
    sol.rho = lower == upper ? lower : 0.5 * (lower + upper);
  }

  double gmin = std::numeric_limits<double>::infinity();
  double gmax = -std::numeric_limits<double>::infinity();
  sol.decision.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    sol.decision[t] = exact[t] - sol.rho;
    if (alpha[t] < c) gmin = std::min(gmin, exact[t]);
    if (alpha[t] > 0.0) gmax = std::max(gmax, exact[t]);
  }
  sol.kkt_gap = std::max(0.0, gmax - gmin);
  return sol;
}

DetectorResult ocsvm_detect(const Matrix& x, const DetectorConfig& cfg) {
  DetectorResult r;
  r.detector = Detector::kOcsvm;
  r.category = category_of(r.detector);
  r.contamination = cfg.contamination(r.detector);

  OneClassSvmOptions options;
  options.nu = cfg.ocsvm_nu;
  options.gamma = cfg.gamma_for(x.cols());
  options.tolerance = cfg.ocsvm_tolerance;
  options.max_sweeps = cfg.ocsvm_max_sweeps;
  options.threads = cfg.threads;
  auto sol = solve_one_class_svm(x, options);

  // Margin vectors solve to decision 0 only up to the KKT tolerance.
  r.scores.resize(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    r.scores[i] = -sol.decision[i];
    if (sol.decision[i] < -options.tolerance) r.flagged.push_back(i);
  }
  r.converged = sol.converged;
  if (!sol.converged) {
    r.warning = "OCSVM did not reach KKT tolerance (gap " +
                std::to_string(sol.kkt_gap) + " after " +
                std::to_string(sol.updates) + " updates)";
  }
  return r;
}

}  // namespace loglake
