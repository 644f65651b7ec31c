#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "placekd/config.h"
#include "placekd/retrieval.h"

namespace placekd {

// Recall on all test queries and, when corruption metadata exists, on the
// corrupted and clean query subsets.
struct EvalSummary {
  RecallReport all;
  std::optional<RecallReport> corrupted;
  std::optional<RecallReport> clean;

  nlohmann::json to_json() const;
};

// Evaluates `model` on the records of one split: database rows form the index,
// queries are ranked against it.
EvalSummary evaluate_model(const Model<float>& model, const std::vector<PlaceRecord>& records,
                           const GroundTruthConfig& gt_cfg, const std::vector<int>& ns,
                           const std::set<std::string>* corrupted = nullptr, const InputCache* cache = nullptr);

// Ground truth restricted to a subset of query ids.
GroundTruth restrict_queries(const GroundTruth& gt, const std::set<std::string>& ids, bool keep);

struct ExperimentResult {
  std::map<std::string, EvalSummary> models;  // stage1_rgb, stage1_seg, stage2_<scheme>
  std::map<Group, std::size_t> group_counts;
  std::filesystem::path report_json, report_csv;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

// Runs dataset generation, stage I for both branches, partitioning, stage II
// for every configured weight scheme and test evaluation. All artifacts go
// under `out_dir`; synthetic data is reused from PLACEKD_CACHE_DIR when set.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                bool verbose = false);

// Directory holding the synthetic dataset for a config, honoring PLACEKD_CACHE_DIR.
std::filesystem::path synth_data_dir(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace placekd
