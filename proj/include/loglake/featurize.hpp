#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "loglake/matrix.hpp"
#include "loglake/record.hpp"

namespace loglake {

inline constexpr std::size_t kFeatureCount = 8;
inline constexpr std::size_t kCategoricalCount = 6;

// Column order and names of the extracted feature table.
inline constexpr std::array<const char*, kFeatureCount> kFeatureColumns = {
    "hour_of_the_day", "day_of_the_week",   "client_user",
    "client_host",     "client_ip",         "client_program",
    "CONNECT_DATA_INST", "service_name"};

enum FeatureColumn : std::size_t {
  kHourOfDay = 0,
  kDayOfWeek,
  kUserEnc,
  kHostEnc,
  kIpEnc,
  kProgramEnc,
  kInstEnc,
  kServiceEnc,
};

using FeatureVector = std::array<double, kFeatureCount>;

// value -> share of rows carrying that value, per categorical column.
using Vocabulary = std::array<std::map<std::string, double>, kCategoricalCount>;

// Fractional UTC clock hour: h + m/60 + s/3600.
double hour_of_day(Timestamp t);

// ISO weekday, Monday = 1 ... Sunday = 7.
int day_of_week(Timestamp t);

// The six categorical source fields of a record, in column order.
std::array<const std::optional<std::string>*, kCategoricalCount>
categorical_fields(const ConnectionLogRecord& r);

// Unstandardized vector: temporal columns exact, categoricals looked up in
// the vocabulary (absent or unseen value -> 0).
FeatureVector raw_features(const ConnectionLogRecord& r, const Vocabulary& vocab);

struct FeatureMatrix {
  std::vector<FeatureVector> rows;  // standardized, input order
  FeatureVector means{};
  FeatureVector stds{};             // 0 marks a constant column
  Vocabulary vocab;

  Matrix to_matrix() const;

  nlohmann::json sidecar() const;
  // Restores means/stds/vocab; rows stay empty.
  static FeatureMatrix from_sidecar(const nlohmann::json& j);
};

// Throws EmptyInput when records is empty.
FeatureMatrix fit_featurizer(std::span<const ConnectionLogRecord> records);

std::vector<FeatureVector> transform(const FeatureMatrix& m,
                                     std::span<const ConnectionLogRecord> records);

// CSV with the column header row; values written with round-trip precision.
void write_feature_csv(std::ostream& out, std::span<const FeatureVector> rows);
// Throws UsageError on a bad header or ragged row.
Matrix read_feature_csv(std::istream& in);

}  // namespace loglake
