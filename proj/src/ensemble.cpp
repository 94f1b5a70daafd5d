#include "loglake/ensemble.hpp"

#include <algorithm>
#include <array>
#include <limits>

#include "loglake/errors.hpp"

namespace loglake {

std::string_view to_string(VoteMode m) {
  return m == VoteMode::kVotes ? "votes" : "categories";
}

std::optional<VoteMode> parse_vote_mode(std::string_view name) {
  if (name == "votes") return VoteMode::kVotes;
  if (name == "categories") return VoteMode::kCategories;
  return std::nullopt;
}

std::vector<EnsembleVerdict> combine(std::span<const DetectorResult> results,
                                     std::size_t n, VoteMode mode) {
  std::vector<EnsembleVerdict> verdicts(n);
  for (std::size_t i = 0; i < n; ++i) verdicts[i].row = i;

  // Visit detectors in canonical order so voter lists are ordered.
  std::vector<const DetectorResult*> ordered(results.size());
  for (std::size_t r = 0; r < results.size(); ++r) ordered[r] = &results[r];
  std::stable_sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) {
    return static_cast<int>(a->detector) < static_cast<int>(b->detector);
  });

  for (const DetectorResult* result : ordered) {
    if (result->scores.size() != n) {
      throw MismatchedN(std::string(to_string(result->detector)) + " covers " +
                        std::to_string(result->scores.size()) + " rows, expected " +
                        std::to_string(n));
    }
    for (std::size_t row : result->flagged) {
      if (row >= n) throw MismatchedN("flagged row index out of range");
      verdicts[row].voters.push_back(result->detector);
    }
  }

  for (auto& v : verdicts) {
    v.votes = v.voters.size();
    std::array<bool, 3> seen{};
    for (Detector d : v.voters) seen[static_cast<std::size_t>(category_of(d))] = true;
    for (std::size_t c = 0; c < seen.size(); ++c) {
      if (seen[c]) v.categories.push_back(static_cast<Category>(c));
    }
    v.is_anomaly = mode == VoteMode::kVotes
                       ? v.votes >= kMajorityVotes
                       : v.categories.size() >= kMajorityCategories;
  }
  return verdicts;
}

std::size_t consensus_upper_bound(std::span<const std::size_t> flag_sizes,
                                  std::size_t min_votes) {
  if (min_votes == 0) return std::numeric_limits<std::size_t>::max();
  std::size_t total = 0;
  for (std::size_t s : flag_sizes) total += s;
  std::size_t best = 0;
  for (std::size_t a = 1; a * min_votes <= total; ++a) {
    std::size_t capacity = 0;
    for (std::size_t s : flag_sizes) capacity += std::min(s, a);
    if (capacity >= min_votes * a) best = a;
  }
  return best;
}

nlohmann::ordered_json make_report(std::span<const EnsembleVerdict> verdicts,
                                   std::span<const DetectorResult> results,
                                   const ReportContext& ctx) {
  using nlohmann::ordered_json;
  const std::size_t n = verdicts.size();
  if (!ctx.records.empty() && ctx.records.size() != n) {
    throw MismatchedN("report: " + std::to_string(ctx.records.size()) +
                      " records for " + std::to_string(n) + " verdicts");
  }

  ordered_json run;
  run["n"] = n;
  run["mode"] = std::string(to_string(ctx.mode));
  if (ctx.records.empty()) {
    run["timestamp"] = nullptr;
  } else {
    Timestamp newest = ctx.records.front().timestamp;
    for (const auto& r : ctx.records) newest = std::max(newest, r.timestamp);
    run["timestamp"] = format_timestamp(newest);
  }
  if (ctx.config != nullptr) {
    const auto& cfg = *ctx.config;
    run["seed"] = cfg.seed;
    ordered_json conf;
    conf["knn_k"] = cfg.knn_k;
    conf["kmeans_k"] = cfg.kmeans_k;
    conf["kmeans_max_iter"] = cfg.kmeans_max_iter;
    conf["iforest_trees"] = cfg.iforest_trees;
    conf["iforest_sample"] = cfg.iforest_sample;
    conf["lof_k"] = cfg.lof_k;
    conf["ocsvm_nu"] = cfg.ocsvm_nu;
    conf["ocsvm_gamma"] = cfg.gamma_for(ctx.columns);
    ordered_json cont = ordered_json::object();
    for (Detector d : kAllDetectors) cont[std::string(to_string(d))] = cfg.contamination(d);
    conf["contaminations"] = std::move(cont);
    run["config"] = std::move(conf);
  }

  ordered_json summary = ordered_json::array();
  std::vector<std::vector<std::size_t>> ranks;
  for (const auto& r : results) {
    ordered_json s;
    s["detector"] = std::string(to_string(r.detector));
    s["category"] = std::string(to_string(r.category));
    s["contamination"] = r.contamination;
    s["flagged"] = r.flagged.size();
    s["converged"] = r.converged;
    if (!r.warning.empty()) s["warning"] = r.warning;
    summary.push_back(std::move(s));
    ranks.push_back(score_ranks(r.scores));
  }

  std::vector<const EnsembleVerdict*> hits;
  for (const auto& v : verdicts) {
    if (v.is_anomaly) hits.push_back(&v);
  }
  std::stable_sort(hits.begin(), hits.end(),
                   [](auto* a, auto* b) { return a->votes > b->votes; });

  ordered_json anomalies = ordered_json::array();
  for (const EnsembleVerdict* v : hits) {
    ordered_json e;
    e["row"] = v->row;
    e["votes"] = v->votes;
    ordered_json voters = ordered_json::array();
    for (Detector d : v->voters) voters.push_back(std::string(to_string(d)));
    e["voters"] = std::move(voters);
    ordered_json cats = ordered_json::array();
    for (Category c : v->categories) cats.push_back(std::string(to_string(c)));
    e["categories"] = std::move(cats);
    ordered_json rank_json = ordered_json::object();
    for (std::size_t r = 0; r < results.size(); ++r) {
      rank_json[std::string(to_string(results[r].detector))] = ranks[r][v->row];
    }
    e["ranks"] = std::move(rank_json);
    if (!ctx.records.empty()) e["record"] = record_to_json(ctx.records[v->row]);
    anomalies.push_back(std::move(e));
  }

  ordered_json report;
  report["schema"] = "loglake.report/1";
  report["run"] = std::move(run);
  report["summary"] = std::move(summary);
  report["anomaly_count"] = hits.size();
  report["anomalies"] = std::move(anomalies);
  return report;
}

std::vector<std::size_t> report_anomaly_rows(const nlohmann::json& report) {
  std::vector<std::size_t> rows;
  try {
    for (const auto& e : report.at("anomalies")) {
      rows.push_back(e.at("row").get<std::size_t>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed report: ") + e.what());
  }
  return rows;
}

}  // namespace loglake
