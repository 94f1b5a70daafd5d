// loglake: generate, ship, store, featurize and score connection logs.

#include <csignal>
#include <pthread.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <condition_variable>
#include <cstdio>
#include <mutex>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "loglake/detectors.hpp"
#include "loglake/ensemble.hpp"
#include "loglake/errors.hpp"
#include "loglake/featurize.hpp"
#include "loglake/generator.hpp"
#include "loglake/store.hpp"
#include "loglake/transport.hpp"

namespace fs = std::filesystem;
using namespace loglake;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitAnomalies = 2;

// Every flag can also come from LOGLAKE_<FLAG>, e.g. --data-dir from
// LOGLAKE_DATA_DIR. Flags win over the environment.
std::string env_name(std::string flag) {
  std::string out = "LOGLAKE_";
  for (char c : flag) {
    out += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  return out;
}

template <typename T>
CLI::Option* flag(CLI::App* app, const std::string& name, T& target,
                  const std::string& help) {
  return app->add_option("--" + name, target, help)->envname(env_name(name));
}

std::ifstream open_in(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  return in;
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  return out;
}

void close_out(std::ofstream& out, const fs::path& p) {
  out.close();
  if (!out) throw IoError("write failed: " + p.string());
}

nlohmann::json read_json(const fs::path& p) {
  auto in = open_in(p);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(e.byte, p.string() + ": " + e.what());
  }
}

std::vector<ConnectionLogRecord> load_records(const fs::path& p) {
  auto in = open_in(p);
  try {
    return read_records(in);
  } catch (const ParseError& e) {
    throw ParseError(e.position(), p.string() + ": " + e.what());
  } catch (const SchemaError& e) {
    throw SchemaError(p.string() + ": " + e.what());
  }
}

std::chrono::seconds duration_arg(const std::string& text) {
  auto d = parse_duration(text);
  if (!d) throw UsageError("bad duration '" + text + "' (use e.g. 90s, 15m, 24h, 7d)");
  return *d;
}

net::Address address_arg(const std::string& text) {
  auto a = net::parse_address(text);
  if (!a) throw UsageError("bad address '" + text + "' (use host:port)");
  return *a;
}

// Blocks SIGINT/SIGTERM in every thread started afterwards and turns them
// into a stop request.
class SignalStop {
 public:
  SignalStop() {
    sigemptyset(&set_);
    sigaddset(&set_, SIGINT);
    sigaddset(&set_, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set_, nullptr);
    waiter_ = std::thread([this] {
      timespec tick{0, 200'000'000};
      while (!done_) {
        if (sigtimedwait(&set_, nullptr, &tick) > 0) {
          source_.request_stop();
          return;
        }
      }
    });
  }
  ~SignalStop() {
    done_ = true;
    waiter_.join();
  }
  std::stop_token token() const { return source_.get_token(); }

 private:
  sigset_t set_;
  std::stop_source source_;
  std::atomic<bool> done_{false};
  std::thread waiter_;
};

// --- generate ----------------------------------------------------------------

struct GenerateArgs {
  WorkloadProfile profile;
  std::size_t records = 10000;
  fs::path out;
  fs::path truth;
};

int run_generate(const GenerateArgs& a) {
  auto log = generate(a.profile, a.records);
  auto out = open_out(a.out);
  write_records(out, log.records);
  close_out(out, a.out);
  if (!a.truth.empty()) {
    auto t = open_out(a.truth);
    t << truth_to_json(log.truth, a.profile, a.records).dump(2) << '\n';
    close_out(t, a.truth);
  }
  std::cerr << "wrote " << log.records.size() << " records (" << log.truth.size()
            << " anomalous) to " << a.out.string() << '\n';
  return kExitOk;
}

// --- agent / collector ---------------------------------------------------------

struct AgentArgs {
  fs::path source;
  std::string collector = "127.0.0.1:9099";
  fs::path checkpoint;
  std::string id;
  bool exit_when_idle = false;
};

int run_agent(const AgentArgs& a) {
  AgentOptions opt;
  opt.source = a.source;
  opt.collector = address_arg(a.collector);
  opt.checkpoint = a.checkpoint;
  opt.source_id = a.id;
  opt.exit_when_idle = a.exit_when_idle;
  SignalStop signals;
  Agent agent(opt);
  agent.run(signals.token());
  auto st = agent.status();
  std::cerr << "agent: " << st.acknowledged << " acknowledged, " << st.rejected
            << " rejected, offset " << st.checkpoint.offset << '\n';
  return kExitOk;
}

struct CollectorArgs {
  std::string listen = ":9099";
  fs::path data_dir;
  std::string window = "24h";
};

int run_collector(const CollectorArgs& a) {
  CollectorOptions opt;
  opt.listen = address_arg(a.listen);
  SignalStop signals;
  StoreOptions store_opt;
  store_opt.sync_each_append = false;
  SegmentStore store(a.data_dir, store_opt);
  RecentIndex index(duration_arg(a.window));
  load_recent_index(a.data_dir, index);
  StoreSink store_sink(store);
  IndexSink index_sink(index);
  Collector collector(opt, {&store_sink, &index_sink}, &index);
  collector.start();
  std::cerr << "collector: listening on port " << collector.port() << ", data in "
            << a.data_dir.string() << '\n';
  std::mutex m;
  std::condition_variable_any cv;
  std::unique_lock lock(m);
  cv.wait(lock, signals.token(), [] { return false; });
  collector.stop();
  auto st = collector.stats();
  std::cerr << "collector: " << st.written << " written, " << st.duplicates
            << " duplicates, " << st.rejected << " rejected\n";
  return kExitOk;
}

// --- extract -------------------------------------------------------------------

struct ExtractArgs {
  fs::path in;
  fs::path data_dir;
  std::string from;
  std::string to;
  fs::path out = "features.csv";
  fs::path sidecar;
  fs::path model;
};

int run_extract(const ExtractArgs& a) {
  std::vector<ConnectionLogRecord> records;
  if (!a.in.empty()) {
    records = load_records(a.in);
  } else {
    DateRange range;
    if (!a.from.empty()) {
      auto d = parse_date(a.from);
      if (!d) throw UsageError("bad --from date '" + a.from + "'");
      range.first = *d;
    }
    if (!a.to.empty()) {
      auto d = parse_date(a.to);
      if (!d) throw UsageError("bad --to date '" + a.to + "'");
      range.last = *d;
    }
    ScanStats stats;
    records = scan(a.data_dir, range, &stats);
    for (const auto& w : stats.warnings) std::cerr << "warning: " << w << '\n';
  }

  FeatureMatrix m;
  if (!a.model.empty()) {
    m = FeatureMatrix::from_sidecar(read_json(a.model));
    m.rows = transform(m, records);
  } else {
    m = fit_featurizer(records);
  }
  auto out = open_out(a.out);
  write_feature_csv(out, m.rows);
  close_out(out, a.out);

  const fs::path sidecar = a.sidecar.empty() ? fs::path(a.out.string() + ".meta.json") : a.sidecar;
  auto meta = open_out(sidecar);
  meta << m.sidecar().dump(2) << '\n';
  close_out(meta, sidecar);
  std::cerr << "extracted " << m.rows.size() << " rows to " << a.out.string() << '\n';
  return kExitOk;
}

// --- detect --------------------------------------------------------------------

struct DetectArgs {
  fs::path features;
  fs::path records;
  fs::path out = "report.json";
  fs::path scores_dir;
  std::string mode = "votes";
  std::vector<std::string> contaminations;
  DetectorConfig cfg;
};

void apply_contaminations(DetectorConfig& cfg, const std::vector<std::string>& specs) {
  for (const auto& s : specs) {
    auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--contamination expects name=value");
    auto det = parse_detector(s.substr(0, eq));
    if (!det) throw UsageError("unknown detector '" + s.substr(0, eq) + "'");
    try {
      cfg.contaminations[*det] = std::stod(s.substr(eq + 1));
    } catch (const std::exception&) {
      throw UsageError("bad contamination value in '" + s + "'");
    }
  }
}

void write_scores(const fs::path& dir, const DetectorResult& r) {
  const fs::path p = dir / (std::string(to_string(r.detector)) + ".csv");
  auto out = open_out(p);
  const auto ranks = score_ranks(r.scores);
  std::vector<bool> flagged(r.scores.size(), false);
  for (auto row : r.flagged) flagged[row] = true;
  out << "row,score,rank,flagged\n";
  char buf[64];
  for (std::size_t i = 0; i < r.scores.size(); ++i) {
    auto res = std::to_chars(buf, buf + sizeof buf, r.scores[i]);
    out << i << ',' << std::string_view(buf, res.ptr - buf) << ',' << ranks[i] << ','
        << (flagged[i] ? 1 : 0) << '\n';
  }
  close_out(out, p);
}

int run_detect(DetectArgs a) {
  auto mode = parse_vote_mode(a.mode);
  if (!mode) throw UsageError("--mode must be votes or categories");
  apply_contaminations(a.cfg, a.contaminations);

  auto in = open_in(a.features);
  const Matrix x = read_feature_csv(in);
  std::vector<ConnectionLogRecord> records;
  if (!a.records.empty()) {
    records = load_records(a.records);
    if (records.size() != x.rows()) {
      throw MismatchedN("records file has " + std::to_string(records.size()) +
                        " lines but the feature matrix has " + std::to_string(x.rows()) +
                        " rows");
    }
  }

  const auto results = run_all(x, a.cfg);
  const auto verdicts = combine(results, x.rows(), *mode);
  ReportContext ctx{&a.cfg, *mode, x.cols(), records};
  const auto report = make_report(verdicts, results, ctx);

  auto out = open_out(a.out);
  out << report.dump(2) << '\n';
  close_out(out, a.out);
  if (!a.scores_dir.empty()) {
    for (const auto& r : results) write_scores(a.scores_dir, r);
  }
  for (const auto& r : results) {
    if (!r.warning.empty()) std::cerr << "warning: " << to_string(r.detector) << ": " << r.warning << '\n';
  }
  const std::size_t count = report["anomaly_count"].get<std::size_t>();
  std::cerr << count << " anomalies in " << x.rows() << " rows\n";
  return count > 0 ? kExitAnomalies : kExitOk;
}

// --- query ---------------------------------------------------------------------

struct QueryArgs {
  std::string field;
  std::string value;
  std::string window = "24h";
  fs::path data_dir;
  std::string collector;
};

int run_query(const QueryArgs& a) {
  const auto window = duration_arg(a.window);
  if (!parse_indexed_field(a.field)) {
    throw UsageError("--field must be one of user, host, ip, program, instance, service");
  }
  std::vector<ConnectionLogRecord> hits;
  if (!a.collector.empty()) {
    hits = query_collector(address_arg(a.collector), a.field, a.value, window);
  } else {
    if (a.data_dir.empty()) throw UsageError("query needs --data-dir or --collector");
    RecentIndex index(window);
    load_recent_index(a.data_dir, index);
    hits = index.query(a.field, a.value, window);
  }
  for (const auto& r : hits) std::cout << serialize_record(r) << '\n';
  return kExitOk;
}

// --- eval ----------------------------------------------------------------------

struct EvalArgs {
  fs::path report;
  fs::path truth;
};

int run_eval(const EvalArgs& a) {
  const auto rows = report_anomaly_rows(read_json(a.report));
  const auto truth = truth_from_json(read_json(a.truth));
  const auto ev = evaluate(rows, truth);

  auto line = [](std::string_view name, const ArchetypeScore& s) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-16.*s %8zu %9zu %7.3f %10.3f\n",
                  static_cast<int>(name.size()), name.data(), s.labeled, s.detected,
                  s.recall, s.precision);
    std::cout << buf;
  };
  std::cout << "archetype         labeled  detected  recall  precision\n";
  for (Archetype arch : kAllArchetypes) {
    std::string name = std::string(1, archetype_code(arch)) + " " + std::string(archetype_name(arch));
    line(name, ev.per_archetype[static_cast<std::size_t>(arch)]);
  }
  line("a-c", ev.core);
  std::cout << "flagged " << ev.flagged << ", true positives " << ev.true_positives
            << ", false positives " << ev.false_positives << ", precision "
            << ev.precision << ", recall " << ev.recall << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"loglake: database connection-log pipeline and anomaly detection"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "write a synthetic log with labeled anomalies");
  flag(g, "users", gen.profile.users, "user population")->capture_default_str();
  flag(g, "records", gen.records, "record count (>= 100)")->capture_default_str();
  flag(g, "rate", gen.profile.anomaly_rate, "anomaly rate in [0, 0.2)")->capture_default_str();
  flag(g, "seed", gen.profile.seed, "random seed")->capture_default_str();
  flag(g, "days", gen.profile.days, "days covered, starting 2018-03-05")->capture_default_str();
  flag(g, "batch-share", gen.profile.batch_share, "share of round-the-clock batch accounts")
      ->capture_default_str();
  flag(g, "weekend", gen.profile.weekend_activity, "weekend rate of interactive users")
      ->capture_default_str();
  flag(g, "out", gen.out, "records file (JSON lines)")->required();
  flag(g, "truth", gen.truth, "truth file (JSON)");

  AgentArgs agent;
  auto* ag = app.add_subcommand("agent", "tail a log file and ship it to a collector");
  flag(ag, "source", agent.source, "log file to tail")->required();
  flag(ag, "collector", agent.collector, "collector host:port")->capture_default_str();
  flag(ag, "checkpoint", agent.checkpoint, "checkpoint file");
  flag(ag, "id", agent.id, "source id (default: absolute source path)");
  ag->add_flag("--exit-when-idle", agent.exit_when_idle, "exit once the file is fully acknowledged")
      ->envname(env_name("exit-when-idle"));

  CollectorArgs coll;
  auto* co = app.add_subcommand("collector", "receive records into the store and recent index");
  flag(co, "listen", coll.listen, "listen address")->capture_default_str();
  flag(co, "data-dir", coll.data_dir, "store directory")->required();
  flag(co, "window", coll.window, "recent index window")->capture_default_str();

  ExtractArgs ext;
  auto* ex = app.add_subcommand("extract", "build the feature matrix");
  auto* ex_in = flag(ex, "in", ext.in, "records file (JSON lines)");
  auto* ex_dir = flag(ex, "data-dir", ext.data_dir, "store directory");
  ex_in->excludes(ex_dir);
  flag(ex, "from", ext.from, "first partition date (YYYY-MM-DD)")->needs(ex_dir);
  flag(ex, "to", ext.to, "last partition date (YYYY-MM-DD)")->needs(ex_dir);
  flag(ex, "out", ext.out, "feature CSV")->capture_default_str();
  flag(ex, "sidecar", ext.sidecar, "sidecar JSON (default: <out>.meta.json)");
  flag(ex, "model", ext.model, "reuse the vocabulary and scaling of this sidecar");

  DetectArgs det;
  auto* de = app.add_subcommand("detect", "score rows with five detectors and vote");
  flag(de, "features", det.features, "feature CSV")->required();
  flag(de, "records", det.records, "records the rows came from, embedded in the report");
  flag(de, "out", det.out, "report file")->capture_default_str();
  flag(de, "scores-dir", det.scores_dir, "write per-detector score CSVs here");
  flag(de, "mode", det.mode, "votes or categories")->capture_default_str();
  flag(de, "seed", det.cfg.seed, "random seed")->capture_default_str();
  flag(de, "threads", det.cfg.threads, "worker threads (0 = all cores)")->capture_default_str();
  flag(de, "knn-k", det.cfg.knn_k, "KNN neighbour rank")->capture_default_str();
  flag(de, "kmeans-k", det.cfg.kmeans_k, "k-means cluster count")->capture_default_str();
  flag(de, "trees", det.cfg.iforest_trees, "isolation forest trees")->capture_default_str();
  flag(de, "sample", det.cfg.iforest_sample, "isolation forest subsample")->capture_default_str();
  flag(de, "lof-k", det.cfg.lof_k, "LOF neighbourhood size")->capture_default_str();
  flag(de, "nu", det.cfg.ocsvm_nu, "one-class SVM nu")->capture_default_str();
  flag(de, "gamma", det.cfg.ocsvm_gamma, "RBF gamma (<= 0: 1/columns)")->capture_default_str();
  flag(de, "contamination", det.contaminations, "override, e.g. lof=0.05 (repeatable)")
      ->delimiter(',');

  QueryArgs q;
  auto* qu = app.add_subcommand("query", "look up recent records by field");
  flag(qu, "field", q.field, "user, host, ip, program, instance or service")->required();
  flag(qu, "value", q.value, "value to match")->required();
  flag(qu, "window", q.window, "how far back from the newest record")->capture_default_str();
  auto* q_dir = flag(qu, "data-dir", q.data_dir, "store directory");
  auto* q_col = flag(qu, "collector", q.collector, "ask a running collector instead");
  q_dir->excludes(q_col);

  EvalArgs ev;
  auto* eva = app.add_subcommand("eval", "score a report against a truth file");
  flag(eva, "report", ev.report, "detect report")->required();
  flag(eva, "truth", ev.truth, "generate truth file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitError;
  }

  try {
    if (*g) return run_generate(gen);
    if (*ag) return run_agent(agent);
    if (*co) return run_collector(coll);
    if (*ex) {
      if (ext.in.empty() && ext.data_dir.empty()) throw UsageError("extract needs --in or --data-dir");
      return run_extract(ext);
    }
    if (*de) return run_detect(det);
    if (*qu) return run_query(q);
    if (*eva) return run_eval(ev);
  } catch (const std::exception& e) {
    std::cerr << "loglake " << app.get_subcommands().front()->get_name() << ": " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
