#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <random>

#include "placekd/errors.h"
#include "placekd/partition.h"
#include "support.h"

namespace placekd {
namespace {

// Written from the group definitions, not from assign_group.
Group truth_table(int x, int y, int nt) {
  const bool seg_hit = x <= nt;
  const bool rgb_hit = y <= nt;
  if (!seg_hit) return Group::kD4;
  if (!rgb_hit) return Group::kD1;
  if (y >= x) return Group::kD2;
  return Group::kD3;
}

TEST(AssignGroup, MatchesTruthTableOnRandomPairs) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> rank(1, 200);
  std::uniform_int_distribution<int> thresh(1, 50);
  for (int i = 0; i < 20000; ++i) {
    PartitionConfig cfg;
    cfg.n_t = thresh(rng);
    cfg.n_m = cfg.n_t + thresh(rng);
    const int x = rank(rng), y = rank(rng);
    ASSERT_EQ(assign_group(x, y, cfg), truth_table(x, y, cfg.n_t)) << x << "," << y << " N_t=" << cfg.n_t;
  }
}

TEST(AssignGroup, ExhaustiveSmallGrid) {
  const PartitionConfig cfg{10, 20};
  for (int x = 1; x <= 30; ++x) {
    for (int y = 1; y <= 30; ++y) EXPECT_EQ(assign_group(x, y, cfg), truth_table(x, y, 10));
  }
  EXPECT_EQ(assign_group(10, 10, cfg), Group::kD2);
  EXPECT_EQ(assign_group(10, 11, cfg), Group::kD1);
  EXPECT_EQ(assign_group(11, 1, cfg), Group::kD4);
  EXPECT_EQ(assign_group(3, 2, cfg), Group::kD3);
}

TEST(PartitionConfig, Validation) {
  EXPECT_THROW((PartitionConfig{0, 5}.validate()), ConfigError);
  EXPECT_THROW((PartitionConfig{6, 5}.validate()), ConfigError);
  EXPECT_NO_THROW((PartitionConfig{5, 5}.validate()));
}

struct Fixture {
  std::vector<PlaceRecord> records;
  std::map<std::string, std::vector<float>> desc;
  std::vector<SamplePair> pairs;

  explicit Fixture(std::uint64_t seed, bool quantized) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n(0.f, 1.f);
    std::uniform_int_distribution<int> q(-2, 2);
    for (int i = 0; i < 30; ++i) {
      PlaceRecord r;
      r.id = (i < 20 ? "db" : "q") + std::to_string(1000 + i);
      r.split = i < 20 ? Split::kDatabase : Split::kQuery;
      std::vector<float> v(4);
      // Quantized coordinates force many exact distance ties.
      for (auto& x : v) x = quantized ? static_cast<float>(q(rng)) : n(rng);
      desc[r.id] = v;
      records.push_back(r);
    }
    std::shuffle(records.begin(), records.end(), rng);
    for (const auto& r : records) {
      if (r.split != Split::kQuery) continue;
      for (const auto& d : records) {
        if (d.split == Split::kDatabase && rng() % 4 == 0) pairs.push_back({r.id, d.id});
      }
    }
  }

  DescriptorProvider provider() const {
    return [this](const PlaceRecord& r) { return desc.at(r.id); };
  }

  // Full sort of the database by (distance, id); rank is the 1-based position.
  int oracle_rank(const SamplePair& p) const {
    std::vector<std::pair<double, std::string>> order;
    const auto& qv = desc.at(p.query_id);
    for (const auto& r : records) {
      if (r.split != Split::kDatabase) continue;
      double s = 0;
      for (std::size_t k = 0; k < qv.size(); ++k) {
        const double d = static_cast<double>(qv[k]) - desc.at(r.id)[k];
        s += d * d;
      }
      order.emplace_back(s, r.id);
    }
    std::sort(order.begin(), order.end());
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (order[i].second == p.positive_id) return static_cast<int>(i) + 1;
    }
    return -1;
  }
};

TEST(ComputeRankings, MatchesFullSortOracle) {
  for (bool quantized : {false, true}) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      Fixture f(seed, quantized);
      ASSERT_FALSE(f.pairs.empty());
      const RecallRanking r = compute_rankings(f.provider(), f.records, f.pairs, Branch::kSeg);
      ASSERT_EQ(r.ranks.size(), f.pairs.size());
      for (const auto& p : f.pairs) EXPECT_EQ(r.ranks.at(p), f.oracle_rank(p)) << p.query_id << "->" << p.positive_id;
    }
  }
}

TEST(ComputeRankings, PositiveOutsideDatabaseIsDataError) {
  Fixture f(4, false);
  std::vector<SamplePair> bad{{"q1020", "q1021"}};
  EXPECT_THROW(compute_rankings(f.provider(), f.records, bad, Branch::kRgb), DataError);
}

RecallRanking ranking_of(const std::map<SamplePair, int>& ranks, Branch b) {
  RecallRanking r;
  r.branch = b;
  r.ranks = ranks;
  return r;
}

TEST(Partition, CombinesBranchesAndCounts) {
  const std::map<SamplePair, int> seg{{{"a", "x"}, 1}, {{"b", "x"}, 3}, {{"c", "x"}, 2}, {{"d", "x"}, 40}};
  const std::map<SamplePair, int> rgb{{{"a", "x"}, 30}, {{"b", "x"}, 5}, {{"c", "x"}, 1}, {{"d", "x"}, 1}};
  const PartitionTable t = partition(ranking_of(seg, Branch::kSeg), ranking_of(rgb, Branch::kRgb), {10, 20});
  ASSERT_EQ(t.rows.size(), 4u);
  EXPECT_EQ(t.find({"a", "x"})->group, Group::kD1);
  EXPECT_EQ(t.find({"b", "x"})->group, Group::kD2);
  EXPECT_EQ(t.find({"c", "x"})->group, Group::kD3);
  EXPECT_EQ(t.find({"d", "x"})->group, Group::kD4);
  EXPECT_EQ(t.find({"e", "x"}), nullptr);
  for (const auto& [g, n] : t.group_counts()) EXPECT_EQ(n, 1u) << to_string(g);
}

TEST(Partition, PairSetMismatchIsDataError) {
  const std::map<SamplePair, int> seg{{{"a", "x"}, 1}, {{"b", "x"}, 3}};
  const std::map<SamplePair, int> rgb{{{"a", "x"}, 1}, {{"c", "x"}, 3}};
  try {
    partition(ranking_of(seg, Branch::kSeg), ranking_of(rgb, Branch::kRgb), {});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("(b,x)"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("(c,x)"), std::string::npos);
  }
}

PartitionTable random_table(int rows, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> rank(1, 60);
  std::map<SamplePair, int> seg, rgb;
  for (int i = 0; i < rows; ++i) {
    const SamplePair p{"q" + std::to_string(i), "d" + std::to_string(i % 97)};
    seg[p] = rank(rng);
    rgb[p] = rank(rng);
  }
  return partition(ranking_of(seg, Branch::kSeg), ranking_of(rgb, Branch::kRgb), {10, 20}, {"segdig", "rgbdig"});
}

TEST(PartitionIo, RoundTripThousandRows) {
  testing::TempDir dir("partition");
  const PartitionTable t = random_table(1000, 5);
  save_partition(t, dir / "p.csv");
  const PartitionTable back = load_partition(dir / "p.csv");
  EXPECT_EQ(back.rows, t.rows);
  EXPECT_EQ(back.provenance, t.provenance);
  EXPECT_EQ(back.cfg.n_t, 10);
  EXPECT_EQ(back.cfg.n_m, 20);
  EXPECT_TRUE(std::filesystem::exists(dir / "p.csv.json"));
}

TEST(PartitionIo, ProvenanceStrictAndWarn) {
  testing::TempDir dir("partition");
  save_partition(random_table(20, 6), dir / "p.csv");
  const PartitionProvenance other{"segdig", "different"};
  EXPECT_THROW(load_partition(dir / "p.csv", other, true), ProvenanceError);
  std::vector<std::string> warnings;
  EXPECT_NO_THROW(load_partition(dir / "p.csv", other, false, &warnings));
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_NO_THROW(load_partition(dir / "p.csv", PartitionProvenance{"segdig", "rgbdig"}, true));
}

TEST(PartitionIo, InconsistentGroupIsFormatError) {
  testing::TempDir dir("partition");
  save_partition(random_table(5, 7), dir / "p.csv");
  std::ofstream(dir / "p.csv") << "query_id,positive_id,x,y,group\nq,d,1,2,D4\n";
  EXPECT_THROW(load_partition(dir / "p.csv"), FormatError);
  std::ofstream(dir / "p.csv") << "query_id,positive_id,x,y\n";
  EXPECT_THROW(load_partition(dir / "p.csv"), FormatError);
}

TEST(PartitionTable, StrategyViews) {
  const PartitionTable t = random_table(300, 8);
  for (const auto& r : t.rows) {
    EXPECT_NE(t.in_s1(r), t.in_s2(r));
    EXPECT_NE(t.in_r1(r), t.in_r2(r));
    EXPECT_EQ(t.in_gpd(r), t.in_s1(r));
    if (r.group == Group::kD1) EXPECT_TRUE(t.in_s1(r) && t.in_r2(r));
  }
}

}  // namespace
}  // namespace placekd
