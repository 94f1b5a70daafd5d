#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <list>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "loglake/net.hpp"
#include "loglake/record.hpp"
#include "loglake/store.hpp"

namespace loglake {

inline constexpr std::uint16_t kDefaultCollectorPort = 9099;

// Wire protocol, one '\n'-terminated line per message:
//   agent -> collector   HELLO<TAB>source-id
//                        <seq><TAB><json record line>
//   collector -> agent   ACK<TAB><seq>
//                        REJECT<TAB><seq><TAB><reason>   (unparseable record)
//   client -> collector  QUERY<TAB>field<TAB>value<TAB>window-seconds
//   collector -> client  <json record line>... END
struct Frame {
  std::uint64_t seq = 0;
  std::string payload;

  bool operator==(const Frame&) const = default;
};

std::string encode_frame(const Frame& f);  // includes the trailing newline
std::optional<Frame> decode_frame(std::string_view line);
std::string encode_ack(std::uint64_t seq);
std::optional<std::uint64_t> decode_ack(std::string_view line);

// Destination of accepted records. write() returns false for a duplicate;
// commit() makes all writes since the last commit durable. Both throw on
// failure, which stops acknowledgement.
class RecordSink {
 public:
  virtual ~RecordSink() = default;
  virtual bool write(const ConnectionLogRecord& r, std::string_view line,
                     const DedupKey& key) = 0;
  virtual void commit() {}
};

class StoreSink : public RecordSink {
 public:
  explicit StoreSink(SegmentStore& store) : store_(store) {}
  bool write(const ConnectionLogRecord& r, std::string_view line,
             const DedupKey& key) override {
    return store_.append(r, line, &key);
  }
  void commit() override { store_.sync(); }

 private:
  SegmentStore& store_;
};

class IndexSink : public RecordSink {
 public:
  explicit IndexSink(RecentIndex& index) : index_(index) {}
  bool write(const ConnectionLogRecord& r, std::string_view,
             const DedupKey&) override {
    index_.insert(r);
    return true;
  }

 private:
  RecentIndex& index_;
};

struct CollectorOptions {
  net::Address listen{"0.0.0.0", kDefaultCollectorPort};
  std::size_t max_batch = 100;
};

struct CollectorStats {
  std::uint64_t connections = 0;
  std::uint64_t frames = 0;
  std::uint64_t written = 0;
  std::uint64_t duplicates = 0;
  std::uint64_t rejected = 0;
  std::uint64_t sink_failures = 0;
};

// Central collector. Each frame is offered to the sinks in order; the first
// sink decides whether it is a duplicate (later sinks then skip it). A batch
// is acknowledged only after every sink has committed it.
class Collector {
 public:
  Collector(CollectorOptions options, std::vector<RecordSink*> sinks,
            const RecentIndex* query_index = nullptr);
  ~Collector();

  // Binds and starts accepting in the background.
  void start();
  // Stops accepting, disconnects every agent and joins all threads.
  void stop();
  std::uint16_t port() const { return port_; }
  CollectorStats stats() const;

 private:
  void accept_loop();
  void serve(net::Socket& socket);
  void answer_query(net::Socket& socket, std::string_view request);

  CollectorOptions options_;
  std::vector<RecordSink*> sinks_;
  const RecentIndex* query_index_;
  net::Socket listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  struct Connection {
    net::Socket socket;
    std::thread thread;
    std::atomic<bool> done{false};
  };
  void reap_finished();

  mutable std::mutex mutex_;  // guards connections_ and stats_
  std::mutex sink_mutex_;     // one batch at a time through the sinks
  std::list<Connection> connections_;
  CollectorStats stats_;
};

// Sends a QUERY to a running collector and returns the matching lines.
std::vector<ConnectionLogRecord> query_collector(const net::Address& collector,
                                                 std::string_view field,
                                                 std::string_view value,
                                                 std::chrono::seconds window);

struct Checkpoint {
  std::uint64_t offset = 0;    // bytes of the source acknowledged so far
  std::uint64_t next_seq = 1;  // 1-based line number of the next line

  bool operator==(const Checkpoint&) const = default;
};

std::optional<Checkpoint> load_checkpoint(const std::filesystem::path& path);
// Atomic (write to a temporary file, fsync, rename).
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& cp);

enum class AgentConnection { kConnected, kBackingOff, kDraining };

struct AgentOptions {
  std::filesystem::path source;
  net::Address collector{"127.0.0.1", kDefaultCollectorPort};
  std::filesystem::path checkpoint;  // empty = keep progress in memory only
  std::string source_id;             // default: absolute source path
  std::size_t batch_records = 100;
  std::chrono::milliseconds poll_interval{200};
  std::chrono::milliseconds backoff_initial{100};
  std::chrono::milliseconds backoff_max{30000};  // clamped to 30 s
  std::chrono::milliseconds ack_timeout{10000};
  std::chrono::milliseconds connect_timeout{2000};
  // Return from run() once everything in the source has been acknowledged.
  bool exit_when_idle = false;
};

struct AgentStatus {
  Checkpoint checkpoint;
  AgentConnection connection = AgentConnection::kBackingOff;
  std::uint64_t acknowledged = 0;
  std::uint64_t rejected = 0;
  std::uint64_t reconnects = 0;
  std::chrono::milliseconds backoff{0};
};

// Tails one file and ships each complete line to the collector. The offset
// moves only past acknowledged lines; after a disconnect the agent backs off
// and resends from there (at-least-once).
class Agent {
 public:
  explicit Agent(AgentOptions options);

  // Service loop; returns when stop is requested (or when idle, if asked).
  void run(std::stop_token stop);
  AgentStatus status() const;

  // Exponential schedule: initial * 2^attempt, capped at backoff_max.
  static std::chrono::milliseconds backoff_delay(const AgentOptions& options,
                                                 std::size_t attempt);

 private:
  struct Pending {
    std::uint64_t seq;
    std::uint64_t end_offset;
  };

  bool connect();
  std::size_t read_batch(std::vector<std::string>& lines,
                         std::vector<Pending>& pending, bool& caught_up);
  bool ship(const std::vector<std::string>& lines,
            const std::vector<Pending>& pending);
  void persist();
  void sleep_for(std::chrono::milliseconds d, const std::stop_token& stop);

  AgentOptions options_;
  std::optional<net::Socket> socket_;
  std::optional<net::LineReader> reader_;
  mutable std::mutex mutex_;
  AgentStatus status_;
  std::size_t failures_ = 0;
};

}  // namespace loglake
