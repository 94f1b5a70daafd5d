#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "loglake/record.hpp"

namespace loglake {

using Date = std::chrono::sys_days;

Date date_of(Timestamp t);
std::string format_date(Date d);                       // YYYY-MM-DD
std::optional<Date> parse_date(std::string_view text);

// Inclusive range of partition dates.
struct DateRange {
  Date first = Date::min();
  Date last = Date::max();

  static DateRange all() { return {}; }
  bool contains(Date d) const { return first <= d && d <= last; }
};

// <root>/dt=YYYY-MM-DD/part-<n>.jsonl
std::filesystem::path segment_path(const std::filesystem::path& root, Date date,
                                   std::size_t part);

struct SegmentInfo {
  Date date{};
  std::size_t part = 0;
  std::filesystem::path path;
  std::size_t records = 0;
  std::uint64_t bytes = 0;
  bool sealed = false;  // a higher part exists in the same partition
};

// Lists every segment, ordered by (date, part). Counts lines in each file.
std::vector<SegmentInfo> list_segments(const std::filesystem::path& root);

struct StoreOptions {
  std::size_t rotate_records = 10000;
  std::uint64_t rotate_bytes = std::uint64_t{64} << 20;
  // fsync segment and journal on every append. The collector turns this off
  // and calls sync() once per batch instead.
  bool sync_each_append = true;
};

// Identifies a frame for at-least-once dedup: seq is strictly increasing per
// source.
struct DedupKey {
  std::string source;
  std::uint64_t seq = 0;
};

// Long-term store: date-partitioned, append-only JSON-lines segments.
//
// Every append is recorded in <root>/_commit.log (segment, end offset, dedup
// key). On open, bytes past the last committed offset of each segment are cut
// off and the per-source high-water marks are rebuilt, so a writer killed at
// any point leaves neither torn lines nor forgotten dedup state behind.
class SegmentStore {
 public:
  explicit SegmentStore(std::filesystem::path root, StoreOptions options = {});
  ~SegmentStore();

  SegmentStore(const SegmentStore&) = delete;
  SegmentStore& operator=(const SegmentStore&) = delete;

  // Appends `line` (which must not contain a newline) to the open segment
  // of the record's date. Returns false, writing nothing, when `key` is at or
  // below its source's high-water mark. Throws IoError on write failure.
  bool append(const ConnectionLogRecord& r, std::string_view line,
              const DedupKey* key = nullptr);
  bool append(const ConnectionLogRecord& r);

  // Makes every append so far durable.
  void sync();

  std::optional<std::uint64_t> high_water(const std::string& source) const;
  const std::filesystem::path& root() const { return root_; }

  // Bytes removed from segment tails during recovery at open.
  std::uint64_t recovered_bytes() const { return recovered_bytes_; }

 private:
  struct OpenSegment {
    int fd = -1;
    std::size_t part = 0;
    std::size_t records = 0;
    std::uint64_t bytes = 0;
    bool dirty = false;
  };

  void recover();
  void sync_locked();
  OpenSegment& segment_for(Date d, std::size_t line_bytes);
  OpenSegment open_segment(Date d, std::size_t part, bool fresh);
  void write_journal(const std::string& rel, std::uint64_t end,
                     const DedupKey* key);

  std::filesystem::path root_;
  StoreOptions options_;
  mutable std::mutex mutex_;
  std::map<Date, OpenSegment> open_;
  std::set<std::filesystem::path> new_dirs_;
  int journal_fd_ = -1;
  bool journal_dirty_ = false;
  std::unordered_map<std::string, std::uint64_t> high_water_;
  std::uint64_t recovered_bytes_ = 0;
};

struct ScanStats {
  std::size_t records = 0;
  std::size_t torn_lines = 0;       // unterminated trailing line, skipped
  std::size_t malformed_lines = 0;  // complete line that failed to parse
  std::size_t partitions_visited = 0;
  std::size_t files_opened = 0;     // IO counter for partition pruning
  std::vector<std::string> warnings;

  std::size_t warning_count() const { return warnings.size(); }
};

struct ScannedRecord {
  ConnectionLogRecord record;
  std::string line;
};

// Streams the records of every partition intersecting a date range in
// (partition, file, offset) order. Partitions outside the range are never
// opened.
class Scanner {
 public:
  Scanner(std::filesystem::path root, DateRange range);

  std::optional<ScannedRecord> next();
  const ScanStats& stats() const { return stats_; }

 private:
  bool open_next_file();

  std::vector<std::filesystem::path> files_;
  std::size_t next_file_ = 0;
  std::ifstream current_;
  std::filesystem::path current_path_;
  ScanStats stats_;
};

std::vector<ConnectionLogRecord> scan(const std::filesystem::path& root,
                                      DateRange range = DateRange::all(),
                                      ScanStats* stats = nullptr);

enum class IndexedField { kUser, kHost, kIp, kProgram, kInstance, kService };

std::optional<IndexedField> parse_indexed_field(std::string_view name);
std::string_view to_string(IndexedField f);

// Short-term store: the records within `window` of the newest record seen,
// with an inverted map per indexed field. Safe for concurrent readers and a
// writer; every query sees a consistent snapshot.
class RecentIndex {
 public:
  explicit RecentIndex(std::chrono::seconds window = std::chrono::hours{24});

  void insert(const ConnectionLogRecord& r);

  // Matching records no older than min(window, index window) relative to the
  // newest record, newest first (insertion order breaks equal timestamps).
  std::vector<ConnectionLogRecord> query(IndexedField field, std::string_view value,
                                         std::chrono::seconds window) const;
  // Throws UsageError for a field name that is not indexed.
  std::vector<ConnectionLogRecord> query(std::string_view field,
                                         std::string_view value,
                                         std::chrono::seconds window) const;

  std::size_t size() const;
  std::optional<Timestamp> newest() const;
  std::chrono::seconds window() const { return window_; }

 private:
  void evict_locked();

  std::chrono::seconds window_;
  mutable std::shared_mutex mutex_;
  std::uint64_t next_id_ = 0;
  std::optional<Timestamp> newest_;
  std::map<std::uint64_t, ConnectionLogRecord> records_;
  std::multimap<Timestamp, std::uint64_t> by_time_;
  std::array<std::unordered_map<std::string, std::set<std::uint64_t>>, 6> fields_;
};

// Fills an index from the newest partitions of a store directory.
void load_recent_index(const std::filesystem::path& root, RecentIndex& index);

// Parses durations such as "90s", "15m", "24h", "7d".
std::optional<std::chrono::seconds> parse_duration(std::string_view text);

}  // namespace loglake
