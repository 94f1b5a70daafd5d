#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "loglake/errors.hpp"
#include "loglake/record.hpp"

namespace loglake {
namespace {

using testing::at;

constexpr const char* kRowOne =
    R"({"timestamp":"2018-03-05T11:49:16Z","client_user":"merge","client_host":"pcamsj2.cern.ch","client_ip":"137.138.188.167","client_program":"python","connect_data_inst":"INT11R2","service_name":"int11r.cern.ch"})";

TEST(ParseRecord, FeatureTableRowOne) {
  auto r = parse_record(kRowOne);
  EXPECT_EQ(r.timestamp, at(2018, 3, 5, 11, 49, 16));
  EXPECT_EQ(r.client_user, "merge");
  EXPECT_EQ(r.client_host, "pcamsj2.cern.ch");
  EXPECT_EQ(r.client_ip, "137.138.188.167");
  EXPECT_EQ(r.client_program, "python");
  EXPECT_EQ(r.connect_data_inst, "INT11R2");
  EXPECT_EQ(r.service_name, "int11r.cern.ch");
  EXPECT_FALSE(r.client_port);
  EXPECT_FALSE(r.client_protocol);
  EXPECT_FALSE(r.outcome);
  EXPECT_TRUE(r.extras.empty());
}

TEST(ParseRecord, MinimalRecord) {
  auto r = parse_record(R"({"timestamp":"2018-03-05T00:00:00Z"})");
  ConnectionLogRecord expected;
  expected.timestamp = at(2018, 3, 5, 0, 0, 0);
  EXPECT_EQ(r, expected);
}

TEST(ParseRecord, MissingTimestampIsSchemaError) {
  EXPECT_THROW(parse_record(R"({"client_user":"merge"})"), SchemaError);
  EXPECT_THROW(parse_record(R"({"timestamp":"yesterday"})"), SchemaError);
  EXPECT_THROW(parse_record(R"({"timestamp":12})"), SchemaError);
}

TEST(ParseRecord, PortRange) {
  EXPECT_EQ(parse_record(R"({"timestamp":"2018-03-05T00:00:00Z","client_port":0})").client_port, 0);
  EXPECT_EQ(parse_record(R"({"timestamp":"2018-03-05T00:00:00Z","client_port":65535})").client_port,
            65535);
  EXPECT_THROW(parse_record(R"({"timestamp":"2018-03-05T00:00:00Z","client_port":65536})"),
               SchemaError);
  EXPECT_THROW(parse_record(R"({"timestamp":"2018-03-05T00:00:00Z","client_port":-1})"),
               SchemaError);
  EXPECT_THROW(parse_record(R"({"timestamp":"2018-03-05T00:00:00Z","client_port":1.5})"),
               SchemaError);
}

TEST(ParseRecord, MalformedJsonIsParseError) {
  try {
    parse_record(R"({"timestamp": "2018-03-05T00:00:00Z",)");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_GT(e.position(), 0u);
  }
  EXPECT_THROW(parse_record("[1,2]"), SchemaError);
}

TEST(ParseRecord, EmptyStringsAreAbsent) {
  auto r = parse_record(R"({"timestamp":"2018-03-05T00:00:00Z","client_user":"","client_host":null})");
  EXPECT_FALSE(r.client_user);
  EXPECT_FALSE(r.client_host);
}

TEST(ParseRecord, BadAddressIsSchemaError) {
  EXPECT_THROW(parse_record(R"({"timestamp":"2018-03-05T00:00:00Z","client_ip":"999.1.1.1"})"),
               SchemaError);
  EXPECT_EQ(parse_record(R"({"timestamp":"2018-03-05T00:00:00Z","client_ip":"2001:db8::1"})").client_ip,
            "2001:db8::1");
}

TEST(ParseRecord, TimestampForms) {
  EXPECT_EQ(parse_timestamp("2018-03-05T11:49:16Z"), at(2018, 3, 5, 11, 49, 16));
  EXPECT_EQ(parse_timestamp("2018-03-05 11:49:16.750Z"), at(2018, 3, 5, 11, 49, 16));
  EXPECT_EQ(parse_timestamp("2018-03-05T12:49:16+01:00"), at(2018, 3, 5, 11, 49, 16));
  EXPECT_FALSE(parse_timestamp("2018-03-05T11:49:60Z"));
  EXPECT_FALSE(parse_timestamp("2018-02-30T00:00:00Z"));
  EXPECT_FALSE(parse_timestamp("2018-03-05"));
  EXPECT_EQ(format_timestamp(at(2018, 3, 5, 11, 49, 16)), "2018-03-05T11:49:16Z");
}

TEST(SerializeRecord, MinimalHasOnlyTimestamp) {
  ConnectionLogRecord r;
  r.timestamp = at(2018, 3, 5, 0, 0, 0);
  EXPECT_EQ(serialize_record(r), R"({"timestamp":"2018-03-05T00:00:00Z"})");
}

TEST(SerializeRecord, RowOneKeepsAllSevenKeys) {
  const auto line = serialize_record(parse_record(kRowOne));
  for (const char* key : {"timestamp", "client_user", "client_host", "client_ip", "client_program",
                          "connect_data_inst", "service_name"}) {
    EXPECT_NE(line.find(std::string("\"") + key + "\""), std::string::npos) << key;
  }
  EXPECT_EQ(line.find('\n'), std::string::npos);
  EXPECT_EQ(parse_record(line), parse_record(kRowOne));
}

TEST(SerializeRecord, ExtrasPreserved) {
  auto r = parse_record(
      R"({"timestamp":"2018-03-05T00:00:00Z","listener":"LISTENER_A","pid":{"n":[1,2]}})");
  ASSERT_EQ(r.extras.size(), 2u);
  const auto line = serialize_record(r);
  EXPECT_NE(line.find("\"listener\":\"LISTENER_A\""), std::string::npos);
  EXPECT_EQ(parse_record(line), r);
}

std::optional<std::string> maybe_text(std::mt19937_64& gen, bool allow_newline) {
  if (gen() % 3 == 0) return std::nullopt;
  std::string s;
  const std::size_t len = 1 + gen() % 12;
  for (std::size_t i = 0; i < len; ++i) {
    char c = static_cast<char>(32 + gen() % 95);
    if (allow_newline && gen() % 10 == 0) c = '\n';
    s.push_back(c);
  }
  return s;
}

TEST(SerializeRecord, RoundTripProperty) {
  std::mt19937_64 gen(7);
  for (int iter = 0; iter < 2000; ++iter) {
    ConnectionLogRecord r;
    r.timestamp = Timestamp{std::chrono::seconds{static_cast<std::int64_t>(gen() % 4'000'000'000ULL)}};
    r.client_program = maybe_text(gen, true);
    r.client_host = maybe_text(gen, false);
    if (gen() % 2) {
      r.client_ip = std::to_string(gen() % 256) + "." + std::to_string(gen() % 256) + ".0." +
                    std::to_string(gen() % 256);
    }
    if (gen() % 2) r.client_port = static_cast<std::uint16_t>(gen());
    r.client_protocol = maybe_text(gen, false);
    r.client_user = maybe_text(gen, true);
    r.connect_data_inst = maybe_text(gen, false);
    r.service_name = maybe_text(gen, false);
    if (gen() % 3) r.outcome = gen() % 2 ? Outcome::kEstablished : Outcome::kFailed;
    if (gen() % 4 == 0) r.extras["x_" + std::to_string(gen() % 50)] = static_cast<int>(gen() % 1000);
    const auto line = serialize_record(r);
    ASSERT_EQ(line.find('\n'), std::string::npos);
    ASSERT_EQ(parse_record(line), r) << line;
  }
}

TEST(ParseRecord, FuzzNeverCrashes) {
  std::mt19937_64 gen(11);
  const std::string seed_line = kRowOne;
  std::size_t parsed = 0;
  for (int iter = 0; iter < 20000; ++iter) {
    std::string s = seed_line;
    const int edits = 1 + static_cast<int>(gen() % 6);
    for (int e = 0; e < edits; ++e) {
      const std::size_t pos = gen() % (s.size() + 1);
      switch (gen() % 3) {
        case 0: s.insert(s.begin() + static_cast<std::ptrdiff_t>(pos), static_cast<char>(gen())); break;
        case 1: if (pos < s.size()) s.erase(pos, 1); break;
        default: if (pos < s.size()) s[pos] = static_cast<char>(gen()); break;
      }
    }
    if (iter % 5 == 0) {
      s.resize(gen() % 64);
      for (auto& c : s) c = static_cast<char>(gen());
    }
    try {
      parse_record(s);
      ++parsed;
    } catch (const Error&) {
    }
  }
  SUCCEED() << parsed << " mutants parsed";
}

}  // namespace
}  // namespace loglake
