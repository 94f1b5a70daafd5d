#include "loglake/transport.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iostream>

#include "json.hpp"
#include "loglake/errors.hpp"

namespace fs = std::filesystem;

namespace loglake {
namespace {

constexpr std::string_view kHello = "HELLO\t";
constexpr std::string_view kAck = "ACK\t";
constexpr std::string_view kReject = "REJECT\t";
constexpr std::string_view kQuery = "QUERY\t";
constexpr std::string_view kEnd = "END";

std::optional<std::uint64_t> parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || end != s.data() + s.size()) return std::nullopt;
  return v;
}

std::vector<std::string_view> split_tabs(std::string_view s) {
  std::vector<std::string_view> out;
  while (true) {
    auto tab = s.find('\t');
    out.push_back(s.substr(0, tab));
    if (tab == std::string_view::npos) break;
    s.remove_prefix(tab + 1);
  }
  return out;
}

}  // namespace

std::string encode_frame(const Frame& f) {
  std::string out = std::to_string(f.seq);
  out.push_back('\t');
  out += f.payload;
  out.push_back('\n');
  return out;
}

std::optional<Frame> decode_frame(std::string_view line) {
  auto tab = line.find('\t');
  if (tab == std::string_view::npos) return std::nullopt;
  auto seq = parse_u64(line.substr(0, tab));
  if (!seq) return std::nullopt;
  return Frame{*seq, std::string(line.substr(tab + 1))};
}

std::string encode_ack(std::uint64_t seq) {
  return std::string(kAck) + std::to_string(seq) + "\n";
}

std::optional<std::uint64_t> decode_ack(std::string_view line) {
  if (!line.starts_with(kAck)) return std::nullopt;
  return parse_u64(line.substr(kAck.size()));
}

// ---------------------------------------------------------------------------

Collector::Collector(CollectorOptions options, std::vector<RecordSink*> sinks,
                     const RecentIndex* query_index)
    : options_(std::move(options)), sinks_(std::move(sinks)),
      query_index_(query_index) {}

Collector::~Collector() { stop(); }

void Collector::start() {
  listener_ = net::listen_tcp(options_.listen);
  port_ = net::local_port(listener_);
  stopping_ = false;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void Collector::stop() {
  if (stopping_.exchange(true)) return;
  listener_.shutdown();
  if (acceptor_.joinable()) acceptor_.join();
  {
    std::lock_guard lock(mutex_);
    for (auto& c : connections_) c.socket.shutdown();
  }
  // Workers only touch their own entry, so joining outside the lock is safe.
  for (auto& c : connections_) {
    if (c.thread.joinable()) c.thread.join();
  }
  connections_.clear();
  listener_.close();
}

CollectorStats Collector::stats() const {
  std::lock_guard lock(mutex_);
  return stats_;
}

void Collector::reap_finished() {
  std::lock_guard lock(mutex_);
  for (auto it = connections_.begin(); it != connections_.end();) {
    if (it->done) {
      it->thread.join();
      it = connections_.erase(it);
    } else {
      ++it;
    }
  }
}

void Collector::accept_loop() {
  while (!stopping_) {
    net::Socket s = net::accept_tcp(listener_);
    if (!s.valid()) break;
    reap_finished();
    std::lock_guard lock(mutex_);
    if (stopping_) break;
    ++stats_.connections;
    auto& conn = connections_.emplace_back();
    conn.socket = std::move(s);
    conn.thread = std::thread([this, &conn] {
      try {
        serve(conn.socket);
      } catch (const std::exception& e) {
        std::cerr << "collector: connection error: " << e.what() << "\n";
      }
      conn.socket.shutdown();
      conn.done = true;
    });
  }
}

void Collector::answer_query(net::Socket& socket, std::string_view request) {
  auto parts = split_tabs(request);
  std::string reply;
  auto window = parts.size() == 4 ? parse_u64(parts[3]) : std::nullopt;
  if (query_index_ == nullptr || !window) {
    reply = "ERR\tbad query\n";
  } else {
    try {
      for (const auto& r : query_index_->query(parts[1], parts[2],
                                               std::chrono::seconds(*window))) {
        reply += serialize_record(r);
        reply.push_back('\n');
      }
      reply += std::string(kEnd) + "\n";
    } catch (const Error& e) {
      reply = std::string("ERR\t") + e.what() + "\n";
    }
  }
  net::send_all(socket, reply);
}

void Collector::serve(net::Socket& socket) {
  net::LineReader reader(socket);
  std::string line;
  if (reader.read_line(line, std::chrono::milliseconds{-1}) !=
      net::LineReader::Status::kLine) {
    return;
  }
  if (line.starts_with(kQuery)) {
    answer_query(socket, line);
    return;
  }
  if (!line.starts_with(kHello) || line.size() == kHello.size()) {
    net::send_all(socket, "ERR\texpected HELLO\n");
    return;
  }
  const std::string source = line.substr(kHello.size());
  std::uint64_t last_seq = 0;

  std::vector<Frame> batch;
  while (!stopping_) {
    batch.clear();
    auto status = reader.read_line(line, std::chrono::milliseconds{-1});
    while (status == net::LineReader::Status::kLine) {
      auto frame = decode_frame(line);
      if (!frame || frame->seq <= last_seq) {
        net::send_all(socket, "ERR\tbad frame\n");
        return;
      }
      last_seq = frame->seq;
      batch.push_back(std::move(*frame));
      if (batch.size() >= options_.max_batch) break;
      status = reader.read_line(line, std::chrono::milliseconds{0});
    }
    if (batch.empty()) return;  // peer closed

    std::string replies;
    std::uint64_t written = 0, duplicates = 0, rejected = 0;
    try {
      std::lock_guard sink_lock(sink_mutex_);
      for (const auto& f : batch) {
        ConnectionLogRecord r;
        try {
          r = parse_record(f.payload);
        } catch (const Error& e) {
          ++rejected;
          std::string reason = e.what();
          std::replace_if(reason.begin(), reason.end(),
                          [](char c) { return c == '\n' || c == '\t'; }, ' ');
          replies += std::string(kReject) + std::to_string(f.seq) + "\t" + reason + "\n";
          continue;
        }
        const DedupKey key{source, f.seq};
        bool fresh = true;
        for (std::size_t s = 0; s < sinks_.size() && fresh; ++s) {
          fresh = sinks_[s]->write(r, f.payload, key);
        }
        fresh ? ++written : ++duplicates;
        replies += encode_ack(f.seq);
      }
      for (auto* sink : sinks_) sink->commit();
    } catch (const std::exception& e) {
      // No acknowledgement: the agent resends after reconnecting.
      std::lock_guard lock(mutex_);
      ++stats_.sink_failures;
      std::cerr << "collector: sink failure, dropping connection: " << e.what() << "\n";
      return;
    }
    {
      std::lock_guard lock(mutex_);
      stats_.frames += batch.size();
      stats_.written += written;
      stats_.duplicates += duplicates;
      stats_.rejected += rejected;
    }
    if (!net::send_all(socket, replies)) return;
  }
}

std::vector<ConnectionLogRecord> query_collector(const net::Address& collector,
                                                 std::string_view field,
                                                 std::string_view value,
                                                 std::chrono::seconds window) {
  auto socket = net::connect_tcp(collector, std::chrono::milliseconds{5000});
  if (!socket) throw IoError("cannot connect to collector");
  std::string request = std::string(kQuery) + std::string(field) + "\t" +
                        std::string(value) + "\t" + std::to_string(window.count()) +
                        "\n";
  if (!net::send_all(*socket, request)) throw IoError("query send failed");
  net::LineReader reader(*socket);
  std::vector<ConnectionLogRecord> out;
  std::string line;
  while (reader.read_line(line, std::chrono::milliseconds{30000}) ==
         net::LineReader::Status::kLine) {
    if (line == kEnd) return out;
    if (line.starts_with("ERR\t")) throw UsageError(line.substr(4));
    out.push_back(parse_record(line));
  }
  throw IoError("collector closed the query connection early");
}

// ---------------------------------------------------------------------------

std::optional<Checkpoint> load_checkpoint(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    auto j = nlohmann::json::parse(in);
    return Checkpoint{j.at("offset").get<std::uint64_t>(),
                      j.at("next_seq").get<std::uint64_t>()};
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad checkpoint " + path.string() + ": " + e.what());
  }
}

void save_checkpoint(const fs::path& path, const Checkpoint& cp) {
  const fs::path tmp = path.string() + ".tmp";
  const std::string body = nlohmann::json{{"offset", cp.offset},
                                          {"next_seq", cp.next_seq}}
                               .dump() + "\n";
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("open " + tmp.string() + ": " + std::strerror(errno));
  bool ok = ::write(fd, body.data(), body.size()) == static_cast<ssize_t>(body.size());
  ok = ::fsync(fd) == 0 && ok;
  ::close(fd);
  if (!ok) throw IoError("write " + tmp.string() + " failed");
  fs::rename(tmp, path);
}

Agent::Agent(AgentOptions options) : options_(std::move(options)) {
  options_.backoff_max = std::min(options_.backoff_max, std::chrono::milliseconds{30000});
  if (options_.source_id.empty()) {
    options_.source_id = fs::absolute(options_.source).lexically_normal().string();
  }
  if (options_.source_id.find_first_of("\t\n") != std::string::npos) {
    throw UsageError("source id must not contain tabs or newlines");
  }
  if (!options_.checkpoint.empty()) {
    if (auto cp = load_checkpoint(options_.checkpoint)) status_.checkpoint = *cp;
  }
}

AgentStatus Agent::status() const {
  std::lock_guard lock(mutex_);
  return status_;
}

std::chrono::milliseconds Agent::backoff_delay(const AgentOptions& options,
                                               std::size_t attempt) {
  const auto cap = std::min(options.backoff_max, std::chrono::milliseconds{30000});
  auto delay = options.backoff_initial;
  for (std::size_t i = 0; i < attempt && delay < cap; ++i) delay *= 2;
  return std::min(delay, cap);
}

void Agent::sleep_for(std::chrono::milliseconds d, const std::stop_token& stop) {
  const auto deadline = std::chrono::steady_clock::now() + d;
  while (!stop.stop_requested() && std::chrono::steady_clock::now() < deadline) {
    auto left = deadline - std::chrono::steady_clock::now();
    std::this_thread::sleep_for(std::min<std::chrono::steady_clock::duration>(
        left, std::chrono::milliseconds{10}));
  }
}

bool Agent::connect() {
  reader_.reset();
  socket_ = net::connect_tcp(options_.collector, options_.connect_timeout);
  if (!socket_) return false;
  if (!net::send_all(*socket_, "HELLO\t" + options_.source_id + "\n")) {
    socket_.reset();
    return false;
  }
  reader_.emplace(*socket_);
  return true;
}

std::size_t Agent::read_batch(std::vector<std::string>& lines,
                              std::vector<Pending>& pending, bool& caught_up) {
  lines.clear();
  pending.clear();
  caught_up = false;
  std::ifstream in(options_.source, std::ios::binary);
  if (!in) throw IoError("cannot open source " + options_.source.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::uint64_t>(in.tellg());
  Checkpoint cp = status().checkpoint;
  if (size < cp.offset) {
    throw IoError("source " + options_.source.string() + " shrank below the checkpoint");
  }
  in.seekg(static_cast<std::streamoff>(cp.offset));
  std::uint64_t offset = cp.offset;
  std::uint64_t seq = cp.next_seq;
  std::string line;
  while (lines.size() < options_.batch_records && std::getline(in, line)) {
    if (in.eof()) break;  // incomplete trailing line: wait for the writer
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    pending.push_back({seq++, offset});
  }
  caught_up = lines.empty();
  return lines.size();
}

void Agent::persist() {
  if (options_.checkpoint.empty()) return;
  save_checkpoint(options_.checkpoint, status().checkpoint);
}

bool Agent::ship(const std::vector<std::string>& lines,
                 const std::vector<Pending>& pending) {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    out += encode_frame(Frame{pending[i].seq, lines[i]});
  }
  if (!net::send_all(*socket_, out)) return false;

  std::size_t acked = 0;
  std::string reply;
  while (acked < pending.size()) {
    if (reader_->read_line(reply, options_.ack_timeout) !=
        net::LineReader::Status::kLine) {
      return false;
    }
    std::optional<std::uint64_t> seq = decode_ack(reply);
    bool rejected = false;
    if (!seq && reply.starts_with(kReject)) {
      auto parts = split_tabs(reply);
      if (parts.size() >= 2) seq = parse_u64(parts[1]);
      rejected = true;
      std::cerr << "agent: collector rejected line " << (seq ? *seq : 0) << ": "
                << (parts.size() >= 3 ? parts[2] : "") << "\n";
    }
    if (!seq) return false;
    // Acks arrive in order; anything else means a confused peer.
    if (*seq != pending[acked].seq) return false;
    std::lock_guard lock(mutex_);
    status_.checkpoint.offset = pending[acked].end_offset;
    status_.checkpoint.next_seq = pending[acked].seq + 1;
    ++status_.acknowledged;
    if (rejected) ++status_.rejected;
    ++acked;
  }
  return true;
}

void Agent::run(std::stop_token stop) {
  std::vector<std::string> lines;
  std::vector<Pending> pending;
  auto set_state = [&](AgentConnection c) {
    std::lock_guard lock(mutex_);
    status_.connection = c;
  };
  auto back_off = [&] {
    set_state(AgentConnection::kBackingOff);
    reader_.reset();
    socket_.reset();
    const auto delay = backoff_delay(options_, failures_++);
    {
      std::lock_guard lock(mutex_);
      status_.backoff = delay;
    }
    sleep_for(delay, stop);
  };

  while (!stop.stop_requested()) {
    bool caught_up = false;
    try {
      read_batch(lines, pending, caught_up);
    } catch (const IoError& e) {
      std::cerr << "agent: " << e.what() << "\n";
      back_off();
      continue;
    }
    if (caught_up) {
      if (options_.exit_when_idle) break;
      sleep_for(options_.poll_interval, stop);
      continue;
    }
    if (!socket_) {
      if (!connect()) {
        back_off();
        continue;
      }
      std::lock_guard lock(mutex_);
      ++status_.reconnects;
      status_.connection = AgentConnection::kConnected;
    }
    const bool ok = ship(lines, pending);
    try {
      persist();
    } catch (const IoError& e) {
      std::cerr << "agent: checkpoint: " << e.what() << "\n";
    }
    if (!ok) {
      back_off();
      continue;
    }
    failures_ = 0;
  }
  set_state(AgentConnection::kDraining);
  try {
    persist();
  } catch (const IoError&) {
  }
  reader_.reset();
  socket_.reset();
}

}  // namespace loglake
