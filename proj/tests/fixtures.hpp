#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "loglake/matrix.hpp"
#include "loglake/record.hpp"

namespace loglake::testing {

inline Timestamp at(int y, unsigned mo, unsigned d, int h, int mi, int s) {
  using namespace std::chrono;
  return sys_days{year{y} / month{mo} / day{d}} + hours{h} + minutes{mi} + seconds{s};
}

// The fourteen rows of the published feature-extraction table, as records.
// Blank rows carry only the trailing service/SID column.
inline std::vector<ConnectionLogRecord> feature_table_records() {
  auto full = [](int sec) {
    ConnectionLogRecord r;
    r.timestamp = at(2018, 3, 5, 11, 49, sec);
    r.client_user = "merge";
    r.client_host = "pcamsj2.cern.ch";
    r.client_ip = "137.138.188.167";
    r.client_program = "python";
    r.connect_data_inst = "INT11R2";
    r.service_name = "int11r.cern.ch";
    return r;
  };
  auto blank = [](int sec, const char* service) {
    ConnectionLogRecord r;
    r.timestamp = at(2018, 3, 5, 11, 49, sec);
    r.service_name = service;
    return r;
  };
  auto no_inst = full(34);
  no_inst.connect_data_inst.reset();
  return {full(16),  blank(34, "INT6R1"),  full(16), blank(36, "INT11R2"),
          full(16),  no_inst,              full(16), blank(34, "INT6R1"),
          full(16),  blank(35, "INT11R1"), full(16), blank(35, "INT11R1"),
          full(16),  full(17)};
}

inline Matrix random_matrix(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> dist;
  Matrix m(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) m(i, j) = dist(gen);
  return m;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("loglake-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace loglake::testing
