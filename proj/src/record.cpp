#include "loglake/record.hpp"

#include <arpa/inet.h>

#include <charconv>
#include <limits>

#include "loglake/errors.hpp"

namespace loglake {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr const char* kTimestamp = "timestamp";
constexpr const char* kProgram = "client_program";
constexpr const char* kHost = "client_host";
constexpr const char* kIp = "client_ip";
constexpr const char* kPort = "client_port";
constexpr const char* kProtocol = "client_protocol";
constexpr const char* kUser = "client_user";
constexpr const char* kInst = "connect_data_inst";
constexpr const char* kService = "service_name";
constexpr const char* kOutcome = "outcome";

bool is_known_key(std::string_view k) {
  for (const char* known : {kTimestamp, kProgram, kHost, kIp, kPort, kProtocol,
                            kUser, kInst, kService, kOutcome}) {
    if (k == known) return true;
  }
  return false;
}

// Reads exactly `width` decimal digits at `pos`.
bool read_digits(std::string_view s, std::size_t& pos, int width, int& out) {
  if (pos + width > s.size()) return false;
  int value = 0;
  for (int i = 0; i < width; ++i) {
    char c = s[pos + i];
    if (c < '0' || c > '9') return false;
    value = value * 10 + (c - '0');
  }
  pos += width;
  out = value;
  return true;
}

bool expect(std::string_view s, std::size_t& pos, char c) {
  if (pos >= s.size() || s[pos] != c) return false;
  ++pos;
  return true;
}

std::optional<std::string> text_field(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) {
    throw SchemaError(std::string(key) + " must be a string");
  }
  auto value = it->get<std::string>();
  if (value.empty()) return std::nullopt;
  return value;
}

bool valid_ip(const std::string& text) {
  unsigned char buf[16];
  return inet_pton(AF_INET, text.c_str(), buf) == 1 ||
         inet_pton(AF_INET6, text.c_str(), buf) == 1;
}

}  // namespace

std::string_view to_string(Outcome o) {
  return o == Outcome::kEstablished ? "established" : "failed";
}

std::string format_timestamp(Timestamp t) {
  auto day = std::chrono::floor<std::chrono::days>(t);
  std::chrono::year_month_day ymd{day};
  std::chrono::hh_mm_ss hms{t - day};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ",
                static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()),
                static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buf;
}

std::optional<Timestamp> parse_timestamp(std::string_view s) {
  std::size_t pos = 0;
  int y, mo, d, h, mi, sec;
  if (!read_digits(s, pos, 4, y) || !expect(s, pos, '-') ||
      !read_digits(s, pos, 2, mo) || !expect(s, pos, '-') ||
      !read_digits(s, pos, 2, d)) {
    return std::nullopt;
  }
  if (pos >= s.size() || (s[pos] != 'T' && s[pos] != 't' && s[pos] != ' ')) {
    return std::nullopt;
  }
  ++pos;
  if (!read_digits(s, pos, 2, h) || !expect(s, pos, ':') ||
      !read_digits(s, pos, 2, mi) || !expect(s, pos, ':') ||
      !read_digits(s, pos, 2, sec)) {
    return std::nullopt;
  }
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    std::size_t start = pos;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
    if (pos == start) return std::nullopt;
  }
  int offset_minutes = 0;
  if (pos < s.size() && (s[pos] == 'Z' || s[pos] == 'z')) {
    ++pos;
  } else if (pos < s.size() && (s[pos] == '+' || s[pos] == '-')) {
    int sign = s[pos] == '+' ? 1 : -1;
    ++pos;
    int oh, om;
    if (!read_digits(s, pos, 2, oh) || !expect(s, pos, ':') ||
        !read_digits(s, pos, 2, om) || oh > 23 || om > 59) {
      return std::nullopt;
    }
    offset_minutes = sign * (oh * 60 + om);
  } else {
    return std::nullopt;
  }
  if (pos != s.size()) return std::nullopt;

  std::chrono::year_month_day ymd{std::chrono::year{y},
                                  std::chrono::month{static_cast<unsigned>(mo)},
                                  std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 59) return std::nullopt;
  auto t = std::chrono::sys_days{ymd} + std::chrono::hours{h} +
           std::chrono::minutes{mi} + std::chrono::seconds{sec} -
           std::chrono::minutes{offset_minutes};
  return std::chrono::time_point_cast<std::chrono::seconds>(t);
}

ConnectionLogRecord record_from_json(const json& obj) {
  if (!obj.is_object()) throw SchemaError("record must be a JSON object");

  ConnectionLogRecord r;
  auto ts = obj.find(kTimestamp);
  if (ts == obj.end() || !ts->is_string()) {
    throw SchemaError("missing timestamp");
  }
  auto parsed = parse_timestamp(ts->get_ref<const std::string&>());
  if (!parsed) throw SchemaError("unparseable timestamp");
  r.timestamp = *parsed;

  r.client_program = text_field(obj, kProgram);
  r.client_host = text_field(obj, kHost);
  r.client_ip = text_field(obj, kIp);
  r.client_protocol = text_field(obj, kProtocol);
  r.client_user = text_field(obj, kUser);
  r.connect_data_inst = text_field(obj, kInst);
  r.service_name = text_field(obj, kService);

  if (r.client_ip && !valid_ip(*r.client_ip)) {
    throw SchemaError("client_ip is not an IPv4/IPv6 address");
  }

  if (auto it = obj.find(kPort); it != obj.end() && !it->is_null()) {
    if (!it->is_number_integer()) {
      throw SchemaError("client_port must be an integer");
    }
    bool in_range = it->is_number_unsigned()
                        ? it->get<std::uint64_t>() <= 65535
                        : it->get<std::int64_t>() >= 0 &&
                              it->get<std::int64_t>() <= 65535;
    if (!in_range) throw SchemaError("client_port out of range");
    r.client_port = static_cast<std::uint16_t>(it->get<std::int64_t>());
  }

  if (auto value = text_field(obj, kOutcome)) {
    if (*value == "established") {
      r.outcome = Outcome::kEstablished;
    } else if (*value == "failed") {
      r.outcome = Outcome::kFailed;
    } else {
      throw SchemaError("outcome must be established or failed");
    }
  }

  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!is_known_key(it.key())) r.extras.emplace(it.key(), it.value());
  }
  return r;
}

ConnectionLogRecord parse_record(std::string_view line) {
  json obj;
  try {
    obj = json::parse(line.begin(), line.end());
  } catch (const json::parse_error& e) {
    throw ParseError(e.byte, e.what());
  }
  return record_from_json(obj);
}

ordered_json record_to_json(const ConnectionLogRecord& r) {
  ordered_json out = ordered_json::object();
  out[kTimestamp] = format_timestamp(r.timestamp);
  auto put = [&](const char* key, const std::optional<std::string>& v) {
    if (v && !v->empty()) out[key] = *v;
  };
  put(kUser, r.client_user);
  put(kHost, r.client_host);
  put(kIp, r.client_ip);
  if (r.client_port) out[kPort] = *r.client_port;
  put(kProtocol, r.client_protocol);
  put(kProgram, r.client_program);
  put(kInst, r.connect_data_inst);
  put(kService, r.service_name);
  if (r.outcome) out[kOutcome] = std::string(to_string(*r.outcome));
  for (const auto& [key, value] : r.extras) {
    out[key] = ordered_json::parse(
        value.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace));
  }
  return out;
}

std::string serialize_record(const ConnectionLogRecord& r) {
  // dump() escapes control characters, so the result never holds a newline.
  return record_to_json(r).dump(-1, ' ', false,
                                nlohmann::json::error_handler_t::replace);
}

}  // namespace loglake
