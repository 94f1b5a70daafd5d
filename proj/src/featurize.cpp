#include "loglake/featurize.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "loglake/errors.hpp"

namespace loglake {
namespace {

// Sorting first makes the statistic independent of row order, so permuted
// input yields bit-identical means and deviations.
std::pair<double, double> column_stats(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  if (values.front() == values.back()) return {values.front(), 0.0};
  double sum = 0.0;
  for (double v : values) sum += v;
  const double n = static_cast<double>(values.size());
  const double mean = sum / n;
  std::vector<double> sq(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    double d = values[i] - mean;
    sq[i] = d * d;
  }
  std::sort(sq.begin(), sq.end());
  double ss = 0.0;
  for (double v : sq) ss += v;
  return {mean, std::sqrt(ss / n)};
}

FeatureVector standardize(const FeatureVector& raw, const FeatureVector& means,
                          const FeatureVector& stds) {
  FeatureVector out{};
  for (std::size_t c = 0; c < kFeatureCount; ++c) {
    out[c] = stds[c] > 0.0 ? (raw[c] - means[c]) / stds[c] : 0.0;
  }
  return out;
}

}  // namespace

double hour_of_day(Timestamp t) {
  auto day = std::chrono::floor<std::chrono::days>(t);
  std::chrono::hh_mm_ss hms{t - day};
  return static_cast<double>(hms.hours().count()) +
         static_cast<double>(hms.minutes().count()) / 60.0 +
         static_cast<double>(hms.seconds().count()) / 3600.0;
}

int day_of_week(Timestamp t) {
  std::chrono::weekday wd{std::chrono::floor<std::chrono::days>(t)};
  return static_cast<int>(wd.iso_encoding());
}

std::array<const std::optional<std::string>*, kCategoricalCount>
categorical_fields(const ConnectionLogRecord& r) {
  return {&r.client_user,    &r.client_host,       &r.client_ip,
          &r.client_program, &r.connect_data_inst, &r.service_name};
}

FeatureVector raw_features(const ConnectionLogRecord& r, const Vocabulary& vocab) {
  FeatureVector v{};
  v[kHourOfDay] = hour_of_day(r.timestamp);
  v[kDayOfWeek] = static_cast<double>(day_of_week(r.timestamp));
  auto fields = categorical_fields(r);
  for (std::size_t c = 0; c < kCategoricalCount; ++c) {
    const auto& field = *fields[c];
    if (!field) continue;
    auto it = vocab[c].find(*field);
    if (it != vocab[c].end()) v[kUserEnc + c] = it->second;
  }
  return v;
}

FeatureMatrix fit_featurizer(std::span<const ConnectionLogRecord> records) {
  if (records.empty()) throw EmptyInput("fit_featurizer: no records");
  const double n = static_cast<double>(records.size());

  FeatureMatrix m;
  std::array<std::map<std::string, std::size_t>, kCategoricalCount> counts;
  for (const auto& r : records) {
    auto fields = categorical_fields(r);
    for (std::size_t c = 0; c < kCategoricalCount; ++c) {
      if (*fields[c]) ++counts[c][**fields[c]];
    }
  }
  for (std::size_t c = 0; c < kCategoricalCount; ++c) {
    for (const auto& [value, count] : counts[c]) {
      m.vocab[c][value] = static_cast<double>(count) / n;
    }
  }

  std::vector<FeatureVector> raw;
  raw.reserve(records.size());
  for (const auto& r : records) raw.push_back(raw_features(r, m.vocab));

  std::vector<double> column(records.size());
  for (std::size_t c = 0; c < kFeatureCount; ++c) {
    for (std::size_t i = 0; i < raw.size(); ++i) column[i] = raw[i][c];
    std::tie(m.means[c], m.stds[c]) = column_stats(column);
  }

  m.rows.reserve(raw.size());
  for (const auto& v : raw) m.rows.push_back(standardize(v, m.means, m.stds));
  return m;
}

std::vector<FeatureVector> transform(const FeatureMatrix& m,
                                     std::span<const ConnectionLogRecord> records) {
  std::vector<FeatureVector> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    out.push_back(standardize(raw_features(r, m.vocab), m.means, m.stds));
  }
  return out;
}

Matrix FeatureMatrix::to_matrix() const {
  Matrix x;
  for (const auto& row : rows) x.append_row(row);
  return x;
}

nlohmann::json FeatureMatrix::sidecar() const {
  nlohmann::json j;
  j["columns"] = kFeatureColumns;
  j["rows"] = rows.size();
  j["means"] = means;
  j["stds"] = stds;
  nlohmann::json vocab_json = nlohmann::json::object();
  for (std::size_t c = 0; c < kCategoricalCount; ++c) {
    vocab_json[kFeatureColumns[kUserEnc + c]] = vocab[c];
  }
  j["vocab"] = std::move(vocab_json);
  return j;
}

FeatureMatrix FeatureMatrix::from_sidecar(const nlohmann::json& j) {
  FeatureMatrix m;
  try {
    m.means = j.at("means").get<FeatureVector>();
    m.stds = j.at("stds").get<FeatureVector>();
    const auto& vocab_json = j.at("vocab");
    for (std::size_t c = 0; c < kCategoricalCount; ++c) {
      m.vocab[c] = vocab_json.at(kFeatureColumns[kUserEnc + c])
                       .get<std::map<std::string, double>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad featurizer sidecar: ") + e.what());
  }
  return m;
}

void write_feature_csv(std::ostream& out, std::span<const FeatureVector> rows) {
  for (std::size_t c = 0; c < kFeatureCount; ++c) {
    out << (c ? "," : "") << kFeatureColumns[c];
  }
  out << '\n';
  char buf[64];
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < kFeatureCount; ++c) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof buf, row[c]);
      (void)ec;
      if (c) out << ',';
      out.write(buf, end - buf);
    }
    out << '\n';
  }
}

Matrix read_feature_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw UsageError("feature CSV is empty");
  std::string expected;
  for (std::size_t c = 0; c < kFeatureCount; ++c) {
    expected += (c ? "," : "");
    expected += kFeatureColumns[c];
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != expected) throw UsageError("feature CSV header mismatch");

  Matrix x;
  std::vector<double> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    values.clear();
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (true) {
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc{}) {
        throw UsageError("feature CSV line " + std::to_string(line_no) +
                         ": bad number");
      }
      values.push_back(v);
      if (next == end) break;
      if (*next != ',') {
        throw UsageError("feature CSV line " + std::to_string(line_no) +
                         ": expected ','");
      }
      p = next + 1;
    }
    if (values.size() != kFeatureCount) {
      throw UsageError("feature CSV line " + std::to_string(line_no) +
                       ": expected 8 values");
    }
    x.append_row(values);
  }
  return x;
}

}  // namespace loglake
