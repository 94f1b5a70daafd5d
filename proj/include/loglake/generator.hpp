#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "loglake/record.hpp"
#include "loglake/store.hpp"

namespace loglake {

// Injected anomaly classes:
//   a  off-hours connection by a daytime user
//   b  known user from a never-seen host and address (stolen credentials)
//   c  burst from one unknown host at >= 50 connections per minute (spam)
//   d  a program string the user has never run (rogue software)
enum class Archetype { kOffHours, kNewHost, kBurst, kRareProgram };

inline constexpr std::array<Archetype, 4> kAllArchetypes = {
    Archetype::kOffHours, Archetype::kNewHost, Archetype::kBurst,
    Archetype::kRareProgram};

char archetype_code(Archetype a);  // 'a' .. 'd'
std::optional<Archetype> parse_archetype(std::string_view code);
std::string_view archetype_name(Archetype a);

struct WorkloadProfile {
  std::size_t users = 200;
  std::size_t days = 7;
  Date start = Date{std::chrono::year{2018} / 3 / 5};  // a Monday
  double anomaly_rate = 0.01;                          // in [0, 0.2)
  std::uint64_t seed = 42;
  std::size_t max_burst = 50;  // lines per burst
  // Share of accounts running scheduled jobs around the clock.
  double batch_share = 0.0;
  // Weekend rate of interactive users relative to a weekday.
  double weekend_activity = 0.0;
};

struct TruthLabel {
  std::size_t line = 0;  // 1-based line number in the records file
  Archetype archetype = Archetype::kOffHours;

  bool operator==(const TruthLabel&) const = default;
};

struct GeneratedLog {
  std::vector<ConnectionLogRecord> records;  // sorted by timestamp
  std::vector<TruthLabel> truth;             // ascending line numbers
};

// Throws UsageError when n < 100 or the profile is out of range.
GeneratedLog generate(const WorkloadProfile& profile, std::size_t n);

void write_records(std::ostream& out, std::span<const ConnectionLogRecord> records);
// Reads a JSON-lines file; throws ParseError/SchemaError with the line number.
std::vector<ConnectionLogRecord> read_records(std::istream& in);

nlohmann::ordered_json truth_to_json(std::span<const TruthLabel> truth,
                                     const WorkloadProfile& profile, std::size_t n);
std::vector<TruthLabel> truth_from_json(const nlohmann::json& j);

struct ArchetypeScore {
  std::size_t labeled = 0;
  std::size_t detected = 0;
  double recall = 0.0;
  // detected / (detected + false positives); other archetypes are ignored.
  double precision = 0.0;
};

struct Evaluation {
  std::size_t flagged = 0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  double precision = 0.0;  // over all archetypes
  double recall = 0.0;
  std::array<ArchetypeScore, 4> per_archetype{};
  // Archetypes a-c together.
  ArchetypeScore core{};
};

// Joins flagged rows (0-based) with truth labels (1-based lines).
Evaluation evaluate(std::span<const std::size_t> flagged_rows,
                    std::span<const TruthLabel> truth);

}  // namespace loglake
