#include "loglake/generator.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <map>
#include <set>

#include "loglake/errors.hpp"
#include "loglake/random.hpp"

namespace loglake {
namespace {

using std::chrono::hours;
using std::chrono::minutes;
using std::chrono::seconds;

struct Habit {
  std::string program;
  std::string instance;
  std::string service;
};

struct User {
  std::string name;
  std::string host;
  std::string ip;
  std::vector<Habit> habits;
  double activity = 1.0;
  // Batch accounts connect on a fixed schedule around the clock.
  bool batch = false;
  std::uint64_t period_minutes = 0;
  std::uint64_t offset_minutes = 0;
};

constexpr std::array<const char*, 4> kPrograms = {"python", "java", "sqlplus",
                                                  "JDBC Thin Client"};
constexpr std::array<double, 4> kProgramWeights = {0.35, 0.30, 0.20, 0.15};

constexpr std::array<const char*, 8> kInstances = {
    "INT11R1", "INT11R2", "INT6R1", "INT6R2", "ACCLOG1", "ACCLOG2", "CMSR1", "ATLR1"};

constexpr std::array<const char*, 12> kOnsets = {"b", "d", "f", "g", "k", "l",
                                                 "m", "n", "p", "r", "s", "t"};
constexpr std::array<const char*, 6> kNuclei = {"a", "e", "i", "o", "u", "ar"};

// Account names tried by password-spraying malware.
constexpr std::array<const char*, 16> kGuessedUsers = {
    "admin", "oracle", "system", "sys",   "scott",  "dbsnmp", "test", "guest",
    "root",  "user",   "dba",    "backup", "public", "demo",  "app",  "sa"};

constexpr std::array<const char*, 8> kRareTools = {
    "sqlmap", "hydra", "odat", "nc", "msfconsole", "tnscmd", "perl-dbi", "dbscan"};

// Mean session length 1 / (1 - p) = 3 connections.
constexpr double kSessionContinue = 2.0 / 3.0;

// Relative connection rate per hour for daytime users; zero outside 07-20.
constexpr std::array<double, 24> kDiurnal = {
    0, 0, 0, 0, 0, 0, 0, 0.3, 1.0, 1.0, 1.0, 1.0,
    0.6, 1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.2, 0, 0, 0, 0};

std::string service_for(std::string_view instance) {
  // INT11R2 -> int11r.cern.ch
  std::string s(instance.substr(0, instance.size() - 1));
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s + ".cern.ch";
}

std::size_t pick(std::span<const double> weights, Rng& rng) {
  double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double target = rng.uniform() * total;
  double cum = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    cum += weights[i];
    if (weights[i] > 0.0 && cum > target) return i;
  }
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  return 0;
}

std::string make_name(std::size_t i, Rng& rng, std::set<std::string>& used) {
  while (true) {
    std::string name;
    const std::size_t syllables = 2 + rng.below(2);
    for (std::size_t s = 0; s < syllables; ++s) {
      name += kOnsets[rng.below(kOnsets.size())];
      name += kNuclei[rng.below(kNuclei.size())];
    }
    if (used.insert(name).second) return name;
    name += std::to_string(i);
    if (used.insert(name).second) return name;
  }
}

std::vector<User> make_users(const WorkloadProfile& p, Rng& rng) {
  std::vector<User> users(p.users);
  std::set<std::string> names;
  for (std::size_t i = 0; i < users.size(); ++i) {
    User& u = users[i];
    u.name = make_name(i, rng, names);
    u.host = "pc" + u.name.substr(0, std::min<std::size_t>(4, u.name.size())) +
             std::to_string(i) + ".cern.ch";
    u.ip = "137.138." + std::to_string(i / 250 + 1) + "." + std::to_string(i % 250 + 1);
    u.activity = 0.7 + 0.6 * rng.uniform();
    u.batch = rng.uniform() < p.batch_share;
    if (u.batch) {
      static constexpr std::array<std::uint64_t, 3> kPeriods = {15, 30, 60};
      u.activity *= 4.0;
      u.period_minutes = kPeriods[rng.below(kPeriods.size())];
      u.offset_minutes = rng.below(u.period_minutes);
    }
    const std::size_t habits = 1 + rng.below(2);
    for (std::size_t h = 0; h < habits; ++h) {
      Habit habit;
      habit.program = kPrograms[pick(kProgramWeights, rng)];
      habit.instance = kInstances[rng.below(kInstances.size())];
      habit.service = service_for(habit.instance);
      u.habits.push_back(std::move(habit));
    }
  }
  return users;
}

Timestamp daytime_instant(const WorkloadProfile& p, Rng& rng) {
  // Weekends carry a fraction of weekday traffic.
  std::vector<double> day_weights(p.days);
  for (std::size_t d = 0; d < p.days; ++d) {
    std::chrono::weekday wd{p.start + std::chrono::days(static_cast<int>(d))};
    day_weights[d] = wd.iso_encoding() >= 6 ? p.weekend_activity : 1.0;
  }
  const std::size_t day = pick(day_weights, rng);
  const std::size_t hour = pick(kDiurnal, rng);
  return Timestamp{p.start + std::chrono::days(static_cast<int>(day))} + hours(static_cast<long>(hour)) +
         seconds(static_cast<long>(rng.below(3600)));
}

Timestamp scheduled_instant(const User& u, const WorkloadProfile& p, Rng& rng) {
  const auto day = std::chrono::days(static_cast<int>(rng.below(p.days)));
  const std::uint64_t slot = rng.below(1440 / u.period_minutes);
  return Timestamp{p.start + day} +
         minutes(static_cast<long>(slot * u.period_minutes + u.offset_minutes)) +
         seconds(static_cast<long>(rng.below(5)));
}

Timestamp uniform_instant(const WorkloadProfile& p, Rng& rng) {
  const auto span = static_cast<std::uint64_t>(p.days) * 86400;
  return Timestamp{p.start} + seconds(static_cast<long>(rng.below(span)));
}

ConnectionLogRecord base_record(const User& u, const Habit& h, Timestamp t, Rng& rng) {
  ConnectionLogRecord r;
  r.timestamp = t;
  r.client_user = u.name;
  r.client_host = u.host;
  r.client_ip = u.ip;
  r.client_port = static_cast<std::uint16_t>(32768 + rng.below(28232));
  r.client_protocol = "tcp";
  r.client_program = h.program;
  r.connect_data_inst = h.instance;
  r.service_name = h.service;
  r.outcome = Outcome::kEstablished;
  return r;
}

std::string unknown_ip(std::size_t k) {
  // Documentation ranges; never used by habitual traffic.
  static constexpr std::array<const char*, 3> kNets = {"198.51.100.", "203.0.113.",
                                                       "192.0.2."};
  return std::string(kNets[(k / 254) % 3]) + std::to_string(k % 254 + 1);
}

}  // namespace

char archetype_code(Archetype a) { return static_cast<char>('a' + static_cast<int>(a)); }

std::optional<Archetype> parse_archetype(std::string_view code) {
  if (code.size() != 1 || code[0] < 'a' || code[0] > 'd') return std::nullopt;
  return static_cast<Archetype>(code[0] - 'a');
}

std::string_view archetype_name(Archetype a) {
  switch (a) {
    case Archetype::kOffHours: return "off-hours";
    case Archetype::kNewHost: return "new-host";
    case Archetype::kBurst: return "burst";
    case Archetype::kRareProgram: return "rare-program";
  }
  return "?";
}

GeneratedLog generate(const WorkloadProfile& p, std::size_t n) {
  if (n < 100) throw UsageError("generate: need at least 100 records");
  if (p.users < 1 || p.days < 1 || p.max_burst < 1) {
    throw UsageError("generate: users, days and max_burst must be >= 1");
  }
  if (!(p.anomaly_rate >= 0.0 && p.anomaly_rate < 0.2)) {
    throw UsageError("generate: anomaly rate must be in [0, 0.2)");
  }
  if (!(p.batch_share >= 0.0 && p.batch_share <= 1.0) || !(p.weekend_activity >= 0.0)) {
    throw UsageError("generate: batch share must be in [0, 1], weekend activity >= 0");
  }
  Rng rng(p.seed);
  const auto users = make_users(p, rng);
  std::vector<std::size_t> daytime;
  for (std::size_t i = 0; i < users.size(); ++i) {
    if (!users[i].batch) daytime.push_back(i);
  }
  if (daytime.empty()) daytime.push_back(0);

  const auto anomalies = static_cast<std::size_t>(
      std::llround(p.anomaly_rate * static_cast<double>(n)));
  std::array<std::size_t, 4> per_kind{};
  for (std::size_t i = 0; i < anomalies; ++i) ++per_kind[rng.below(4)];

  std::vector<double> activity(users.size());
  for (std::size_t i = 0; i < users.size(); ++i) activity[i] = users[i].activity;

  // (record, label) pairs, sorted by time at the end.
  std::vector<std::pair<ConnectionLogRecord, std::optional<Archetype>>> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n - anomalies;) {
    const User& u = users[pick(activity, rng)];
    const Habit& h = u.habits[rng.below(u.habits.size())];
    Timestamp t = u.batch ? scheduled_instant(u, p, rng) : daytime_instant(p, rng);
    // A client opens a short run of connections within a few seconds.
    do {
      rows.emplace_back(base_record(u, h, t, rng), std::nullopt);
      ++i;
      t += seconds(static_cast<long>(rng.below(2)));
    } while (i < n - anomalies && rng.bernoulli(kSessionContinue));
  }

  std::size_t unknown = 0;
  for (std::size_t i = 0; i < per_kind[0]; ++i) {
    const User& u = users[daytime[rng.below(daytime.size())]];
    const Habit& h = u.habits[rng.below(u.habits.size())];
    const auto day = std::chrono::days(static_cast<int>(rng.below(p.days)));
    Timestamp t = Timestamp{p.start + day} + hours(static_cast<long>(rng.below(5))) + seconds(static_cast<long>(rng.below(3600)));
    rows.emplace_back(base_record(u, h, t, rng), Archetype::kOffHours);
  }
  for (std::size_t i = 0; i < per_kind[1]; ++i) {
    const User& u = users[daytime[rng.below(daytime.size())]];
    const Habit& h = u.habits[rng.below(u.habits.size())];
    auto r = base_record(u, h, daytime_instant(p, rng), rng);
    r.client_host = "ext-" + std::to_string(1000 + unknown) + ".dyn.example.net";
    r.client_ip = unknown_ip(unknown++);
    rows.emplace_back(std::move(r), Archetype::kNewHost);
  }
  for (std::size_t left = per_kind[2]; left > 0;) {
    const std::size_t size = std::min(left, p.max_burst);
    left -= size;
    const User& u = users[rng.below(users.size())];
    const Habit& h = u.habits[rng.below(u.habits.size())];
    const std::string host = "ext-" + std::to_string(1000 + unknown) + ".dyn.example.net";
    const std::string ip = unknown_ip(unknown++);
    Timestamp t = uniform_instant(p, rng);
    for (std::size_t k = 0; k < size; ++k) {
      // Sprays guessed account names across every instance.
      auto r = base_record(u, h, t, rng);
      r.client_user = kGuessedUsers[rng.below(kGuessedUsers.size())];
      r.client_host = host;
      r.client_ip = ip;
      r.connect_data_inst = kInstances[rng.below(kInstances.size())];
      r.service_name = service_for(*r.connect_data_inst);
      r.outcome = Outcome::kFailed;
      rows.emplace_back(std::move(r), Archetype::kBurst);
      t += seconds{1};  // 60 per minute
    }
  }
  for (std::size_t i = 0; i < per_kind[3]; ++i) {
    const User& u = users[daytime[rng.below(daytime.size())]];
    const Habit& h = u.habits[rng.below(u.habits.size())];
    auto r = base_record(u, h, daytime_instant(p, rng), rng);
    r.client_program = std::string(kRareTools[rng.below(kRareTools.size())]) + "/" +
                       std::to_string(1 + i);
    rows.emplace_back(std::move(r), Archetype::kRareProgram);
  }

  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.first.timestamp < b.first.timestamp;
  });

  GeneratedLog out;
  out.records.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.records.push_back(std::move(rows[i].first));
    if (rows[i].second) out.truth.push_back({i + 1, *rows[i].second});
  }
  return out;
}

void write_records(std::ostream& out, std::span<const ConnectionLogRecord> records) {
  for (const auto& r : records) out << serialize_record(r) << '\n';
}

std::vector<ConnectionLogRecord> read_records(std::istream& in) {
  std::vector<ConnectionLogRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      out.push_back(parse_record(line));
    } catch (const ParseError& e) {
      throw ParseError(e.position(), "line " + std::to_string(line_no) + ": " + e.what());
    } catch (const SchemaError& e) {
      throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

nlohmann::ordered_json truth_to_json(std::span<const TruthLabel> truth,
                                     const WorkloadProfile& profile, std::size_t n) {
  nlohmann::ordered_json j;
  j["records"] = n;
  j["seed"] = profile.seed;
  j["users"] = profile.users;
  j["rate"] = profile.anomaly_rate;
  j["days"] = profile.days;
  j["start"] = format_date(profile.start);
  j["batch_share"] = profile.batch_share;
  j["weekend_activity"] = profile.weekend_activity;
  nlohmann::ordered_json counts = nlohmann::ordered_json::object();
  for (Archetype a : kAllArchetypes) {
    counts[std::string(1, archetype_code(a))] =
        std::count_if(truth.begin(), truth.end(),
                      [&](const TruthLabel& t) { return t.archetype == a; });
  }
  j["counts"] = std::move(counts);
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const auto& t : truth) {
    list.push_back({{"line", t.line},
                    {"archetype", std::string(1, archetype_code(t.archetype))}});
  }
  j["anomalies"] = std::move(list);
  return j;
}

std::vector<TruthLabel> truth_from_json(const nlohmann::json& j) {
  std::vector<TruthLabel> out;
  try {
    for (const auto& e : j.at("anomalies")) {
      auto a = parse_archetype(e.at("archetype").get<std::string>());
      if (!a) throw UsageError("unknown archetype in truth file");
      const auto line = e.at("line").get<std::size_t>();
      if (line == 0) throw UsageError("truth line numbers start at 1");
      out.push_back({line, *a});
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed truth file: ") + e.what());
  }
  return out;
}

Evaluation evaluate(std::span<const std::size_t> flagged_rows,
                    std::span<const TruthLabel> truth) {
  std::map<std::size_t, Archetype> label;
  for (const auto& t : truth) label[t.line - 1] = t.archetype;

  Evaluation ev;
  const std::set<std::size_t> flagged(flagged_rows.begin(), flagged_rows.end());
  ev.flagged = flagged.size();
  for (std::size_t row : flagged) {
    auto it = label.find(row);
    if (it == label.end()) {
      ++ev.false_positives;
    } else {
      ++ev.true_positives;
      ++ev.per_archetype[static_cast<std::size_t>(it->second)].detected;
    }
  }
  for (const auto& t : truth) ++ev.per_archetype[static_cast<std::size_t>(t.archetype)].labeled;

  auto finish = [&](ArchetypeScore& s) {
    s.recall = s.labeled ? static_cast<double>(s.detected) / static_cast<double>(s.labeled) : 0.0;
    const std::size_t denom = s.detected + ev.false_positives;
    s.precision = denom ? static_cast<double>(s.detected) / static_cast<double>(denom) : 0.0;
  };
  for (std::size_t a = 0; a < 3; ++a) {
    ev.core.labeled += ev.per_archetype[a].labeled;
    ev.core.detected += ev.per_archetype[a].detected;
  }
  for (auto& s : ev.per_archetype) finish(s);
  finish(ev.core);
  ev.precision = ev.flagged ? static_cast<double>(ev.true_positives) / static_cast<double>(ev.flagged) : 0.0;
  ev.recall = truth.empty() ? 0.0
                            : static_cast<double>(ev.true_positives) / static_cast<double>(truth.size());
  return ev;
}

}  // namespace loglake
