#include "loglake/store.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <sstream>

#include "loglake/errors.hpp"

namespace fs = std::filesystem;

namespace loglake {
namespace {

constexpr const char* kJournalName = "_commit.log";
constexpr std::string_view kDirPrefix = "dt=";
constexpr std::string_view kPartPrefix = "part-";
constexpr std::string_view kPartSuffix = ".jsonl";

std::optional<Date> partition_date(const fs::path& dir) {
  const std::string name = dir.filename().string();
  if (!name.starts_with(kDirPrefix)) return std::nullopt;
  return parse_date(std::string_view(name).substr(kDirPrefix.size()));
}

std::optional<std::size_t> part_number(const fs::path& file) {
  const std::string name = file.filename().string();
  if (!name.starts_with(kPartPrefix) || !name.ends_with(kPartSuffix)) {
    return std::nullopt;
  }
  std::string_view digits(name);
  digits = digits.substr(kPartPrefix.size(),
                         name.size() - kPartPrefix.size() - kPartSuffix.size());
  std::size_t n = 0;
  auto [end, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), n);
  if (ec != std::errc{} || end != digits.data() + digits.size()) return std::nullopt;
  return n;
}

// Partition directories sorted by date.
std::vector<std::pair<Date, fs::path>> partitions(const fs::path& root) {
  std::vector<std::pair<Date, fs::path>> out;
  std::error_code ec;
  for (fs::directory_iterator it(root, ec), end; !ec && it != end; it.increment(ec)) {
    if (!it->is_directory()) continue;
    if (auto d = partition_date(it->path())) out.emplace_back(*d, it->path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Segment files of one partition sorted by part number.
std::vector<std::pair<std::size_t, fs::path>> parts(const fs::path& dir) {
  std::vector<std::pair<std::size_t, fs::path>> out;
  std::error_code ec;
  for (fs::directory_iterator it(dir, ec), end; !ec && it != end; it.increment(ec)) {
    if (!it->is_regular_file()) continue;
    if (auto n = part_number(it->path())) out.emplace_back(*n, it->path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::size_t lines = 0;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    lines += static_cast<std::size_t>(std::count(buf, buf + in.gcount(), '\n'));
  }
  return lines;
}

void write_all(int fd, std::string_view data, const fs::path& what) {
  while (!data.empty()) {
    ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("write " + what.string() + ": " + std::strerror(errno));
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

void fsync_path(const fs::path& p) {
  int fd = ::open(p.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

std::string relative_name(Date d, std::size_t part) {
  return std::string(kDirPrefix) + format_date(d) + "/" + std::string(kPartPrefix) +
         std::to_string(part) + std::string(kPartSuffix);
}

}  // namespace

Date date_of(Timestamp t) { return std::chrono::floor<std::chrono::days>(t); }

std::string format_date(Date d) {
  std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

std::optional<Date> parse_date(std::string_view text) {
  auto t = parse_timestamp(std::string(text) + "T00:00:00Z");
  if (!t) return std::nullopt;
  return date_of(*t);
}

fs::path segment_path(const fs::path& root, Date date, std::size_t part) {
  return root / relative_name(date, part);
}

std::vector<SegmentInfo> list_segments(const fs::path& root) {
  std::vector<SegmentInfo> out;
  for (const auto& [date, dir] : partitions(root)) {
    auto files = parts(dir);
    for (std::size_t i = 0; i < files.size(); ++i) {
      SegmentInfo info;
      info.date = date;
      info.part = files[i].first;
      info.path = files[i].second;
      info.bytes = fs::file_size(info.path);
      info.records = count_lines(info.path);
      info.sealed = i + 1 < files.size();
      out.push_back(std::move(info));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

SegmentStore::SegmentStore(fs::path root, StoreOptions options)
    : root_(std::move(root)), options_(options) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec) throw IoError("create " + root_.string() + ": " + ec.message());
  recover();
}

SegmentStore::~SegmentStore() {
  try {
    sync();
  } catch (...) {
  }
  for (auto& [date, seg] : open_) {
    if (seg.fd >= 0) ::close(seg.fd);
  }
  if (journal_fd_ >= 0) ::close(journal_fd_);
}

void SegmentStore::recover() {
  struct Entry {
    std::string rel;
    std::uint64_t end;
    std::string source;
    std::uint64_t seq;
  };
  const fs::path journal = root_ / kJournalName;
  const bool had_journal = fs::exists(journal);

  std::vector<Entry> entries;
  std::map<std::string, std::uint64_t> committed;
  if (had_journal) {
    std::string content = read_file(journal);
    const auto last_nl = content.rfind('\n');
    const std::size_t keep = last_nl == std::string::npos ? 0 : last_nl + 1;
    if (keep < content.size()) {
      fs::resize_file(journal, keep);
      content.resize(keep);
    }
    std::istringstream in(content);
    std::string line;
    while (std::getline(in, line)) {
      Entry e;
      std::istringstream fields(line);
      std::string end, seq;
      if (!std::getline(fields, e.rel, '\t') || !std::getline(fields, end, '\t') ||
          !std::getline(fields, e.source, '\t') || !std::getline(fields, seq)) {
        continue;
      }
      e.end = std::stoull(end);
      e.seq = std::stoull(seq);
      committed[e.rel] = std::max(committed[e.rel], e.end);
      entries.push_back(std::move(e));
    }
  }

  std::map<std::string, std::uint64_t> valid;
  for (const auto& [date, dir] : partitions(root_)) {
    for (const auto& [part, path] : parts(dir)) {
      const std::string rel = relative_name(date, part);
      const std::uint64_t size = fs::file_size(path);
      std::uint64_t target = size;
      if (had_journal) {
        auto it = committed.find(rel);
        target = it == committed.end() ? 0 : std::min(it->second, size);
      }
      if (target > 0) {
        std::string content = read_file(path);
        content.resize(target);
        if (content.back() != '\n') {
          auto nl = content.rfind('\n');
          target = nl == std::string::npos ? 0 : nl + 1;
        }
      }
      if (target < size) {
        fs::resize_file(path, target);
        recovered_bytes_ += size - target;
      }
      valid[rel] = target;
    }
  }

  for (const auto& e : entries) {
    auto it = valid.find(e.rel);
    if (it == valid.end() || e.end > it->second || e.source == "-") continue;
    auto& hw = high_water_[e.source];
    hw = std::max(hw, e.seq);
  }

  journal_fd_ = ::open(journal.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (journal_fd_ < 0) {
    throw IoError("open " + journal.string() + ": " + std::strerror(errno));
  }
  if (!had_journal) {
    ::fsync(journal_fd_);
    fsync_path(root_);
  }
}

SegmentStore::OpenSegment SegmentStore::open_segment(Date d, std::size_t part,
                                                     bool fresh) {
  const fs::path path = segment_path(root_, d, part);
  std::error_code ec;
  if (fs::create_directories(path.parent_path(), ec)) {
    new_dirs_.insert(path.parent_path());
  }
  if (ec) throw IoError("create " + path.parent_path().string() + ": " + ec.message());
  OpenSegment seg;
  seg.part = part;
  if (!fresh && fs::exists(path)) {
    seg.bytes = fs::file_size(path);
    seg.records = count_lines(path);
  } else {
    new_dirs_.insert(path.parent_path());
  }
  seg.fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (seg.fd < 0) throw IoError("open " + path.string() + ": " + std::strerror(errno));
  return seg;
}

SegmentStore::OpenSegment& SegmentStore::segment_for(Date d, std::size_t line_bytes) {
  auto it = open_.find(d);
  if (it == open_.end()) {
    auto existing = parts(root_ / (std::string(kDirPrefix) + format_date(d)));
    const std::size_t part = existing.empty() ? 0 : existing.back().first;
    it = open_.emplace(d, open_segment(d, part, existing.empty())).first;
  }
  OpenSegment& seg = it->second;
  const bool full = seg.records >= options_.rotate_records ||
                    (seg.records > 0 && seg.bytes + line_bytes > options_.rotate_bytes);
  if (full) {
    if (seg.dirty && ::fsync(seg.fd) != 0) {
      throw IoError(std::string("fsync: ") + std::strerror(errno));
    }
    ::close(seg.fd);
    seg = open_segment(d, seg.part + 1, true);
  }
  return seg;
}

void SegmentStore::write_journal(const std::string& rel, std::uint64_t end,
                                 const DedupKey* key) {
  std::string entry = rel + "\t" + std::to_string(end) + "\t" +
                      (key ? key->source : std::string("-")) + "\t" +
                      std::to_string(key ? key->seq : 0) + "\n";
  write_all(journal_fd_, entry, root_ / kJournalName);
  journal_dirty_ = true;
}

bool SegmentStore::append(const ConnectionLogRecord& r, std::string_view line,
                          const DedupKey* key) {
  if (line.find('\n') != std::string_view::npos) {
    throw UsageError("record line contains a newline");
  }
  if (key && (key->source.empty() || key->source == "-" ||
              key->source.find_first_of("\t\n") != std::string::npos)) {
    throw UsageError("invalid dedup source id");
  }
  std::lock_guard lock(mutex_);
  if (key) {
    auto it = high_water_.find(key->source);
    if (it != high_water_.end() && key->seq <= it->second) return false;
  }
  const Date d = date_of(r.timestamp);
  OpenSegment& seg = segment_for(d, line.size() + 1);
  std::string buf(line);
  buf.push_back('\n');
  try {
    write_all(seg.fd, buf, segment_path(root_, d, seg.part));
  } catch (...) {
    if (::ftruncate(seg.fd, static_cast<off_t>(seg.bytes)) != 0) {
      // best effort; recovery at open trims the tail anyway
    }
    throw;
  }
  seg.bytes += buf.size();
  ++seg.records;
  seg.dirty = true;
  try {
    write_journal(relative_name(d, seg.part), seg.bytes, key);
  } catch (...) {
    seg.bytes -= buf.size();
    --seg.records;
    if (::ftruncate(seg.fd, static_cast<off_t>(seg.bytes)) != 0) {
      // best effort; recovery at open trims the tail anyway
    }
    throw;
  }
  if (key) high_water_[key->source] = key->seq;
  if (options_.sync_each_append) sync_locked();
  return true;
}

bool SegmentStore::append(const ConnectionLogRecord& r) {
  return append(r, serialize_record(r));
}

void SegmentStore::sync() {
  std::lock_guard lock(mutex_);
  sync_locked();
}

void SegmentStore::sync_locked() {
  // Segments before the journal: a durable journal entry implies durable data.
  for (auto& [date, seg] : open_) {
    if (!seg.dirty) continue;
    if (::fsync(seg.fd) != 0) {
      throw IoError(std::string("fsync segment: ") + std::strerror(errno));
    }
    seg.dirty = false;
  }
  if (!new_dirs_.empty()) {
    for (const auto& dir : new_dirs_) fsync_path(dir);
    fsync_path(root_);
    new_dirs_.clear();
  }
  if (journal_dirty_) {
    if (::fsync(journal_fd_) != 0) {
      throw IoError(std::string("fsync journal: ") + std::strerror(errno));
    }
    journal_dirty_ = false;
  }
}

std::optional<std::uint64_t> SegmentStore::high_water(const std::string& source) const {
  std::lock_guard lock(mutex_);
  auto it = high_water_.find(source);
  if (it == high_water_.end()) return std::nullopt;
  return it->second;
}

// ---------------------------------------------------------------------------

Scanner::Scanner(fs::path root, DateRange range) {
  if (!fs::is_directory(root)) {
    stats_.warnings.push_back("data directory " + root.string() + " does not exist");
    return;
  }
  for (const auto& [date, dir] : partitions(root)) {
    if (!range.contains(date)) continue;
    ++stats_.partitions_visited;
    for (auto& [part, path] : parts(dir)) files_.push_back(path);
  }
}

bool Scanner::open_next_file() {
  if (current_.is_open()) current_.close();
  if (next_file_ >= files_.size()) return false;
  current_path_ = files_[next_file_++];
  current_.clear();
  current_.open(current_path_, std::ios::binary);
  ++stats_.files_opened;
  if (!current_) {
    stats_.warnings.push_back("cannot open " + current_path_.string());
  }
  return true;
}

std::optional<ScannedRecord> Scanner::next() {
  std::string line;
  while (true) {
    if (!current_.is_open() || !current_) {
      if (!open_next_file()) return std::nullopt;
      continue;
    }
    if (!std::getline(current_, line)) continue;
    if (current_.eof()) {
      // getline stopped at end of file, not at a newline.
      if (!line.empty()) {
        ++stats_.torn_lines;
        stats_.warnings.push_back("torn trailing line in " + current_path_.string());
      }
      continue;
    }
    if (line.empty()) continue;
    try {
      ScannedRecord out{parse_record(line), line};
      ++stats_.records;
      return out;
    } catch (const Error& e) {
      ++stats_.malformed_lines;
      stats_.warnings.push_back("malformed line in " + current_path_.string() +
                                ": " + e.what());
    }
  }
}

std::vector<ConnectionLogRecord> scan(const fs::path& root, DateRange range,
                                      ScanStats* stats) {
  Scanner scanner(root, range);
  std::vector<ConnectionLogRecord> out;
  while (auto item = scanner.next()) out.push_back(std::move(item->record));
  if (stats) *stats = scanner.stats();
  return out;
}

// ---------------------------------------------------------------------------

std::optional<IndexedField> parse_indexed_field(std::string_view name) {
  if (name == "user") return IndexedField::kUser;
  if (name == "host") return IndexedField::kHost;
  if (name == "ip") return IndexedField::kIp;
  if (name == "program") return IndexedField::kProgram;
  if (name == "instance") return IndexedField::kInstance;
  if (name == "service") return IndexedField::kService;
  return std::nullopt;
}

std::string_view to_string(IndexedField f) {
  switch (f) {
    case IndexedField::kUser: return "user";
    case IndexedField::kHost: return "host";
    case IndexedField::kIp: return "ip";
    case IndexedField::kProgram: return "program";
    case IndexedField::kInstance: return "instance";
    case IndexedField::kService: return "service";
  }
  return "?";
}

namespace {

const std::optional<std::string>& field_value(const ConnectionLogRecord& r,
                                              std::size_t f) {
  switch (static_cast<IndexedField>(f)) {
    case IndexedField::kUser: return r.client_user;
    case IndexedField::kHost: return r.client_host;
    case IndexedField::kIp: return r.client_ip;
    case IndexedField::kProgram: return r.client_program;
    case IndexedField::kInstance: return r.connect_data_inst;
    case IndexedField::kService: return r.service_name;
  }
  return r.client_user;
}

}  // namespace

RecentIndex::RecentIndex(std::chrono::seconds window) : window_(window) {}

void RecentIndex::insert(const ConnectionLogRecord& r) {
  std::unique_lock lock(mutex_);
  if (newest_ && r.timestamp < *newest_ - window_) return;
  const std::uint64_t id = next_id_++;
  records_.emplace(id, r);
  by_time_.emplace(r.timestamp, id);
  for (std::size_t f = 0; f < fields_.size(); ++f) {
    if (const auto& v = field_value(r, f)) fields_[f][*v].insert(id);
  }
  if (!newest_ || r.timestamp > *newest_) newest_ = r.timestamp;
  evict_locked();
}

void RecentIndex::evict_locked() {
  const Timestamp cutoff = *newest_ - window_;
  while (!by_time_.empty() && by_time_.begin()->first < cutoff) {
    const std::uint64_t id = by_time_.begin()->second;
    const auto& r = records_.at(id);
    for (std::size_t f = 0; f < fields_.size(); ++f) {
      const auto& v = field_value(r, f);
      if (!v) continue;
      auto it = fields_[f].find(*v);
      it->second.erase(id);
      if (it->second.empty()) fields_[f].erase(it);
    }
    records_.erase(id);
    by_time_.erase(by_time_.begin());
  }
}

std::vector<ConnectionLogRecord> RecentIndex::query(IndexedField field,
                                                    std::string_view value,
                                                    std::chrono::seconds window) const {
  std::shared_lock lock(mutex_);
  std::vector<ConnectionLogRecord> out;
  if (!newest_) return out;
  const Timestamp cutoff = *newest_ - std::min(window, window_);
  const auto& map = fields_[static_cast<std::size_t>(field)];
  auto it = map.find(std::string(value));
  if (it == map.end()) return out;
  std::vector<std::pair<Timestamp, std::uint64_t>> hits;
  for (std::uint64_t id : it->second) {
    const auto& r = records_.at(id);
    if (r.timestamp >= cutoff) hits.emplace_back(r.timestamp, id);
  }
  std::sort(hits.begin(), hits.end(), std::greater<>());
  out.reserve(hits.size());
  for (const auto& [t, id] : hits) out.push_back(records_.at(id));
  return out;
}

std::vector<ConnectionLogRecord> RecentIndex::query(std::string_view field,
                                                    std::string_view value,
                                                    std::chrono::seconds window) const {
  auto f = parse_indexed_field(field);
  if (!f) {
    throw UsageError("unknown field '" + std::string(field) +
                     "' (expected user, host, ip, program, instance or service)");
  }
  return query(*f, value, window);
}

std::size_t RecentIndex::size() const {
  std::shared_lock lock(mutex_);
  return records_.size();
}

std::optional<Timestamp> RecentIndex::newest() const {
  std::shared_lock lock(mutex_);
  return newest_;
}

void load_recent_index(const fs::path& root, RecentIndex& index) {
  auto dirs = partitions(root);
  if (dirs.empty()) return;
  const Date newest = dirs.back().first;
  const auto days = std::chrono::ceil<std::chrono::days>(index.window());
  Scanner scanner(root, DateRange{newest - days, newest});
  while (auto item = scanner.next()) index.insert(item->record);
}

std::optional<std::chrono::seconds> parse_duration(std::string_view text) {
  if (text.empty()) return std::nullopt;
  std::int64_t value = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || value < 0) return std::nullopt;
  std::string_view unit(end, text.data() + text.size() - end);
  if (unit.empty() || unit == "s") return std::chrono::seconds{value};
  if (unit == "m") return std::chrono::minutes{value};
  if (unit == "h") return std::chrono::hours{value};
  if (unit == "d") return std::chrono::days{value};
  return std::nullopt;
}

}  // namespace loglake
