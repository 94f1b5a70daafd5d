#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "loglake/detectors.hpp"
#include "loglake/record.hpp"

namespace loglake {

// kVotes: anomaly iff at least 3 of the 5 detectors flag the row.
// kCategories: anomaly iff at least 2 of the 3 categories hold a voter.
enum class VoteMode { kVotes, kCategories };

std::string_view to_string(VoteMode m);
std::optional<VoteMode> parse_vote_mode(std::string_view name);

inline constexpr std::size_t kMajorityVotes = 3;
inline constexpr std::size_t kMajorityCategories = 2;

struct EnsembleVerdict {
  std::size_t row = 0;
  std::size_t votes = 0;
  std::vector<Detector> voters;      // in kAllDetectors order
  std::vector<Category> categories;  // categories with at least one voter
  bool is_anomaly = false;

  bool operator==(const EnsembleVerdict&) const = default;
};

// One verdict per row. Throws MismatchedN when a result does not cover n rows.
std::vector<EnsembleVerdict> combine(std::span<const DetectorResult> results,
                                     std::size_t n,
                                     VoteMode mode = VoteMode::kVotes);

// Largest number of rows that can each sit in at least `min_votes` of the
// given flag sets: max { a : sum_i min(size_i, a) >= min_votes * a }.
std::size_t consensus_upper_bound(std::span<const std::size_t> flag_sizes,
                                  std::size_t min_votes = kMajorityVotes);

struct ReportContext {
  const DetectorConfig* config = nullptr;
  VoteMode mode = VoteMode::kVotes;
  std::size_t columns = 8;  // feature count, for the effective OCSVM gamma
  // Optional; when present each anomaly entry carries its record and the
  // run timestamp is the newest record time.
  std::span<const ConnectionLogRecord> records;
};

// JSON report; see docs/report-schema.md. Key order is fixed so identical
// inputs give identical bytes.
nlohmann::ordered_json make_report(std::span<const EnsembleVerdict> verdicts,
                                   std::span<const DetectorResult> results,
                                   const ReportContext& ctx);

// Row indices of the anomalies listed in a report.
std::vector<std::size_t> report_anomaly_rows(const nlohmann::json& report);

}  // namespace loglake
