#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "placekd/dataset.h"
#include "placekd/model.h"

namespace placekd {

// Rank of each pair's positive in the query's retrieval list (1 = first).
struct RecallRanking {
  Branch branch = Branch::kSeg;
  std::map<SamplePair, int> ranks;
};

struct PartitionConfig {
  int n_t = 10;  // rank threshold
  int n_m = 20;  // rank cap used by the D1 weight

  void validate() const;
};

enum class Group { kD1 = 1, kD2 = 2, kD3 = 3, kD4 = 4 };
std::string to_string(Group g);
Group parse_group(const std::string& name);

// Rank = 1 + #database records strictly closer to the query than the positive
// + #records at exactly the same distance whose id sorts before the positive.
RecallRanking compute_rankings(const DescriptorProvider& provider, const std::vector<PlaceRecord>& records,
                               const std::vector<SamplePair>& pairs, Branch branch);

// x: seg-branch rank, y: rgb-branch rank.
Group assign_group(int x, int y, const PartitionConfig& cfg);

struct PartitionRow {
  SamplePair pair;
  int x = 0;
  int y = 0;
  Group group = Group::kD4;

  bool operator==(const PartitionRow&) const = default;
};

struct PartitionProvenance {
  std::string seg_ckpt_digest;
  std::string rgb_ckpt_digest;

  bool operator==(const PartitionProvenance&) const = default;
};

struct PartitionTable {
  PartitionConfig cfg;
  PartitionProvenance provenance;
  std::vector<PartitionRow> rows;  // sorted by pair

  const PartitionRow* find(const SamplePair& pair) const;
  std::map<Group, std::size_t> group_counts() const;

  // Strategy views. GP-D uses {D1, D2, D3}; GP-S uses S1 = {x <= N_t};
  // GP-R uses R1 = {y <= N_t}.
  bool in_s1(const PartitionRow& row) const { return row.x <= cfg.n_t; }
  bool in_s2(const PartitionRow& row) const { return row.x > cfg.n_t; }
  bool in_r1(const PartitionRow& row) const { return row.y <= cfg.n_t; }
  bool in_r2(const PartitionRow& row) const { return row.y > cfg.n_t; }
  bool in_gpd(const PartitionRow& row) const { return row.group != Group::kD4; }
};

PartitionTable partition(const RecallRanking& seg, const RecallRanking& rgb, const PartitionConfig& cfg,
                         PartitionProvenance provenance = {});

// CSV `query_id,positive_id,x,y,group` plus a JSON sidecar at `<path>.json`
// holding {N_t, N_m, seg_ckpt_digest, rgb_ckpt_digest}.
void save_partition(const PartitionTable& table, const std::filesystem::path& path);

// When `expected` is given and the stored digests differ: strict mode throws
// ProvenanceError, otherwise a warning is appended to `warnings`.
PartitionTable load_partition(const std::filesystem::path& path,
                              const std::optional<PartitionProvenance>& expected = std::nullopt, bool strict = true,
                              std::vector<std::string>* warnings = nullptr);

}  // namespace placekd
