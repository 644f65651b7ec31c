#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "placekd/dataset.h"
#include "placekd/model.h"
#include "placekd/partition.h"
#include "placekd/synth.h"
#include "placekd/training.h"

namespace placekd {

struct DatasetSection {
  // Either a synthetic dataset is generated, or three manifests are given.
  std::optional<SynthConfig> synth;
  std::filesystem::path train_manifest, val_manifest, test_manifest;
  GroundTruthConfig ground_truth;
};

struct ModelSection {
  BackboneConfig rgb = BackboneConfig::rgb_like();
  BackboneConfig seg = BackboneConfig::seg_light();
  bool transform_bias = true;
  bool transform_renormalize = false;
  int input_height = 32;
  int input_width = 32;
};

struct Stage2Section {
  StageConfig stage;
  std::vector<std::string> schemes{"eq4"};
  bool init_from_rgb = false;
  // D1/D2/D3 denominator factors of eq4 and proto.
  std::array<double, 3> eq4_factors{4.0, 5.0, 4.0};

  WeightScheme scheme(const std::string& name, const PartitionConfig& partition) const;
};

struct EvalSection {
  std::vector<int> ns{1, 5, 10};
};

// One JSON document with sections {dataset, slme, model, stage1, partition,
// stage2, eval} plus a top-level seed. Unknown keys are rejected by name.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  DatasetSection dataset;
  SlmeScheme slme = default_scheme();
  ModelSection model;
  StageConfig stage1;
  PartitionConfig partition;
  Stage2Section stage2;
  EvalSection eval;

  InputSpec input_spec() const;
  // Stage configs with seeds derived from the top-level seed.
  StageConfig stage1_config() const;
  StageConfig stage2_config() const;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);
};

GroundTruthConfig ground_truth_from_json(const nlohmann::json& j);
nlohmann::json ground_truth_to_json(const GroundTruthConfig& gt);

}  // namespace placekd
