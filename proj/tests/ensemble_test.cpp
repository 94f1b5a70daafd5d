#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "loglake/ensemble.hpp"
#include "loglake/errors.hpp"

namespace loglake {
namespace {

DetectorResult fake(Detector d, std::size_t n, std::vector<std::size_t> flagged) {
  DetectorResult r;
  r.detector = d;
  r.category = category_of(d);
  r.contamination = 0.02;
  r.scores.assign(n, 0.0);
  for (auto row : flagged) r.scores[row] = 1.0 + static_cast<double>(row);
  std::sort(flagged.begin(), flagged.end());
  r.flagged = std::move(flagged);
  return r;
}

std::vector<DetectorResult> five(std::size_t n, std::array<std::vector<std::size_t>, 5> sets) {
  std::vector<DetectorResult> out;
  for (std::size_t d = 0; d < 5; ++d) out.push_back(fake(kAllDetectors[d], n, sets[d]));
  return out;
}

TEST(Combine, Counting) {
  // Row 0: KNN, LOF, OCSVM. Row 1: nobody. Row 2: KNN, KMeans. Row 3: all five.
  const auto rs = five(4, {{{0, 2, 3}, {2, 3}, {3}, {0, 3}, {0, 3}}});
  const auto v = combine(rs, 4);
  ASSERT_EQ(v.size(), 4u);
  EXPECT_EQ(v[0].votes, 3u);
  EXPECT_TRUE(v[0].is_anomaly);
  EXPECT_EQ(v[0].voters, (std::vector{Detector::kKnn, Detector::kLof, Detector::kOcsvm}));
  EXPECT_EQ(v[0].categories,
            (std::vector{Category::kDistance, Category::kDensity, Category::kClassification}));
  EXPECT_EQ(v[1].votes, 0u);
  EXPECT_FALSE(v[1].is_anomaly);
  EXPECT_TRUE(v[1].categories.empty());
  EXPECT_EQ(v[2].votes, 2u);
  EXPECT_FALSE(v[2].is_anomaly);
  EXPECT_EQ(v[2].categories, (std::vector{Category::kDistance}));
  EXPECT_EQ(v[3].votes, 5u);
}

TEST(Combine, CategoriesMode) {
  // Row 0: two distance voters only. Row 1: KNN + IForest (two categories).
  const auto rs = five(2, {{{0, 1}, {0}, {1}, {}, {}}});
  const auto v = combine(rs, 2, VoteMode::kCategories);
  EXPECT_FALSE(v[0].is_anomaly);
  EXPECT_TRUE(v[1].is_anomaly);
  EXPECT_EQ(v[1].votes, 2u);
}

TEST(Combine, MismatchedN) {
  auto rs = five(10, {{{1}, {1}, {1}, {1}, {1}}});
  EXPECT_THROW(combine(rs, 11), MismatchedN);
  rs[2].scores.resize(9);
  EXPECT_THROW(combine(rs, 10), MismatchedN);
}

std::array<std::vector<std::size_t>, 5> random_sets(std::size_t n, std::mt19937_64& gen) {
  std::array<std::vector<std::size_t>, 5> sets;
  for (auto& s : sets) {
    for (std::size_t i = 0; i < n; ++i)
      if (gen() % 4 == 0) s.push_back(i);
  }
  return sets;
}

TEST(Combine, MonotoneInFlags) {
  std::mt19937_64 gen(3);
  for (int iter = 0; iter < 200; ++iter) {
    auto sets = random_sets(30, gen);
    const auto before = combine(five(30, sets), 30);
    auto& s = sets[gen() % 5];
    const std::size_t row = gen() % 30;
    if (std::find(s.begin(), s.end(), row) == s.end()) s.push_back(row);
    const auto after = combine(five(30, sets), 30);
    for (std::size_t i = 0; i < 30; ++i) {
      if (before[i].is_anomaly) EXPECT_TRUE(after[i].is_anomaly);
    }
  }
}

TEST(Combine, PermutationEquivariant) {
  std::mt19937_64 gen(4);
  const std::size_t n = 40;
  auto sets = random_sets(n, gen);
  const auto base = combine(five(n, sets), n);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), gen);
  // Row i moves to position inv[i].
  std::vector<std::size_t> inv(n);
  for (std::size_t k = 0; k < n; ++k) inv[perm[k]] = k;
  for (auto& s : sets)
    for (auto& row : s) row = inv[row];
  const auto moved = combine(five(n, sets), n);
  for (std::size_t k = 0; k < n; ++k) {
    EXPECT_EQ(moved[k].votes, base[perm[k]].votes);
    EXPECT_EQ(moved[k].voters, base[perm[k]].voters);
    EXPECT_EQ(moved[k].is_anomaly, base[perm[k]].is_anomaly);
  }
}

// Largest a with sum min(s_i, a) >= 3a, by direct search.
std::size_t bound_oracle(const std::vector<std::size_t>& sizes) {
  std::size_t best = 0;
  for (std::size_t a = 0; a <= 10000; ++a) {
    std::size_t total = 0;
    for (auto s : sizes) total += std::min(s, a);
    if (total >= 3 * a) best = a;
  }
  return best;
}

TEST(ConsensusBound, MatchesSearch) {
  EXPECT_EQ(consensus_upper_bound(std::vector<std::size_t>{20, 20, 30, 50, 20}), 45u);
  EXPECT_EQ(bound_oracle({20, 20, 30, 50, 20}), 45u);
  std::mt19937_64 gen(8);
  for (int iter = 0; iter < 100; ++iter) {
    std::vector<std::size_t> sizes(5);
    for (auto& s : sizes) s = gen() % 300;
    EXPECT_EQ(consensus_upper_bound(sizes), bound_oracle(sizes));
  }
}

TEST(ConsensusBound, HoldsOnRandomFlags) {
  std::mt19937_64 gen(9);
  for (int iter = 0; iter < 200; ++iter) {
    const auto sets = random_sets(50, gen);
    const auto v = combine(five(50, sets), 50);
    std::vector<std::size_t> sizes;
    for (const auto& s : sets) sizes.push_back(s.size());
    const auto count = static_cast<std::size_t>(
        std::count_if(v.begin(), v.end(), [](const auto& e) { return e.is_anomaly; }));
    EXPECT_LE(count, consensus_upper_bound(sizes));
  }
}

std::vector<ConnectionLogRecord> records(std::size_t n) {
  std::vector<ConnectionLogRecord> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].timestamp = testing::at(2018, 3, 5, 9, 0, static_cast<int>(i));
    out[i].client_user = "u" + std::to_string(i);
  }
  return out;
}

TEST(Report, ZeroAnomalies) {
  const auto rs = five(6, {{{0}, {1}, {2}, {3}, {4}}});
  const auto v = combine(rs, 6);
  DetectorConfig cfg;
  const auto recs = records(6);
  const auto rep = make_report(v, rs, {&cfg, VoteMode::kVotes, 8, recs});
  EXPECT_EQ(rep["schema"], "loglake.report/1");
  EXPECT_EQ(rep["anomaly_count"], 0);
  EXPECT_TRUE(rep["anomalies"].empty());
  ASSERT_EQ(rep["summary"].size(), 5u);
  EXPECT_EQ(rep["summary"][3]["detector"], "LOF");
  EXPECT_EQ(rep["summary"][3]["flagged"], 1);
  EXPECT_EQ(rep["run"]["n"], 6);
  EXPECT_EQ(rep["run"]["timestamp"], "2018-03-05T09:00:05Z");
  EXPECT_TRUE(report_anomaly_rows(rep).empty());
}

TEST(Report, FiveVoteRow) {
  // Row 2 is flagged by all five and carries the top score of each detector.
  const std::size_t n = 8;
  auto rs = five(n, {{{2, 5}, {2}, {2, 6}, {2, 1, 3}, {2}}});
  for (auto& r : rs) r.scores[2] = 100.0;
  const auto v = combine(rs, n);
  DetectorConfig cfg;
  const auto recs = records(n);
  const auto rep = make_report(v, rs, {&cfg, VoteMode::kVotes, 8, recs});
  ASSERT_EQ(rep["anomaly_count"], 1);
  const auto& e = rep["anomalies"][0];
  EXPECT_EQ(e["row"], 2);
  EXPECT_EQ(e["votes"], 5);
  EXPECT_EQ(e["voters"], nlohmann::json({"KNN", "KMeans", "IForest", "LOF", "OCSVM"}));
  for (const char* d : {"KNN", "KMeans", "IForest", "LOF", "OCSVM"}) EXPECT_EQ(e["ranks"][d], 1) << d;
  EXPECT_EQ(record_from_json(e["record"]), recs[2]);
  EXPECT_EQ(report_anomaly_rows(rep), std::vector<std::size_t>{2});

  // Valid JSON that re-parses to the same document.
  const auto text = rep.dump(2);
  EXPECT_EQ(nlohmann::ordered_json::parse(text), rep);
}

TEST(Report, DeterministicBytes) {
  const auto rs = five(8, {{{1, 2, 3}, {2, 3}, {3, 2}, {1, 3}, {2}}});
  const auto v = combine(rs, 8);
  DetectorConfig cfg;
  const auto recs = records(8);
  const ReportContext ctx{&cfg, VoteMode::kVotes, 8, recs};
  EXPECT_EQ(make_report(v, rs, ctx).dump(), make_report(v, rs, ctx).dump());
  const auto rep = make_report(v, rs, ctx);
  // Sorted by votes, then row.
  EXPECT_EQ(report_anomaly_rows(rep), (std::vector<std::size_t>{2, 3}));
}

}  // namespace
}  // namespace loglake
