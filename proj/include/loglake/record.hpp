#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"

namespace loglake {

using Timestamp = std::chrono::sys_seconds;

enum class Outcome { kEstablished, kFailed };

std::string_view to_string(Outcome o);

// One connection event as emitted by a database listener. Only the timestamp
// is mandatory; any client field may be missing from a real log line.
struct ConnectionLogRecord {
  Timestamp timestamp{};
  std::optional<std::string> client_program;
  std::optional<std::string> client_host;
  std::optional<std::string> client_ip;
  std::optional<std::uint16_t> client_port;
  std::optional<std::string> client_protocol;
  std::optional<std::string> client_user;
  std::optional<std::string> connect_data_inst;
  std::optional<std::string> service_name;
  std::optional<Outcome> outcome;
  // Keys this version does not understand, kept verbatim.
  std::map<std::string, nlohmann::json> extras;

  bool operator==(const ConnectionLogRecord&) const = default;
};

// RFC 3339 in UTC with second precision, e.g. "2018-03-05T11:49:16Z".
// Parsing also accepts fractional seconds (truncated) and numeric offsets.
std::string format_timestamp(Timestamp t);
std::optional<Timestamp> parse_timestamp(std::string_view text);

// Throws ParseError for malformed JSON and SchemaError for a missing or bad
// timestamp, an out-of-range port, or a field of the wrong type.
ConnectionLogRecord parse_record(std::string_view line);

// Single line without the trailing newline. Keys are written in a fixed
// order: timestamp, the known fields, then extras sorted by key.
std::string serialize_record(const ConnectionLogRecord& r);

nlohmann::ordered_json record_to_json(const ConnectionLogRecord& r);
ConnectionLogRecord record_from_json(const nlohmann::json& obj);

}  // namespace loglake
