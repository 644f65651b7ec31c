#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "placekd/dataset.h"
#include "placekd/inputs.h"
#include "placekd/losses.h"
#include "placekd/model.h"
#include "placekd/retrieval.h"

namespace placekd {

struct StageConfig {
  double lr = 2e-3;
  double weight_decay = 1e-4;
  bool cosine = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 6;
  int batch_size = 8;           // triplets per step
  int negatives_per_query = 1;  // triplets per (q, p) pair
  int negative_pool = 1000;     // random candidate pool for hard negatives
  double margin = 0.1;
  std::uint64_t seed = 0;
  bool select_best = true;  // keep the epoch with the best validation Recall@5
  PositiveMining positives = PositiveMining::kFovBest;

  void validate() const;
  nlohmann::json to_json() const;
  static StageConfig from_json(const nlohmann::json& j, StageConfig defaults);
  static StageConfig from_json(const nlohmann::json& j) { return from_json(j, StageConfig{}); }
};

// Training and validation records, their ground truth and a shared input cache.
struct TrainingData {
  std::vector<PlaceRecord> train;
  std::vector<PlaceRecord> val;
  GroundTruthConfig gt;
  InputCache* cache = nullptr;
};

struct MetricsRow {
  int epoch = 0;
  int step = 0;
  double lr = 0;
  double vpr = 0;
  double kd = 0;
  double total = 0;
  // Filled on the last step of an epoch, NaN elsewhere.
  double val_r1 = 0, val_r5 = 0, val_r10 = 0;
};

std::string metrics_csv(const std::vector<MetricsRow>& rows);

struct TrainResult {
  Model<float> model;
  std::vector<MetricsRow> metrics;
  int best_epoch = 0;
  double best_val_r5 = 0;
  // Teacher forward passes performed during each epoch (stage II only).
  std::vector<std::size_t> teacher_forwards_per_epoch;
};

// Teacher descriptors computed once and served from memory afterwards.
class TeacherCache {
 public:
  TeacherCache(const Model<float>& teacher, const InputCache& inputs) : teacher_(teacher), inputs_(inputs) {}

  void fill(const std::vector<PlaceRecord>& records);
  const std::vector<float>& get(const std::string& id) const;
  std::size_t forward_passes() const { return forward_passes_; }
  int dim() const { return teacher_.descriptor_dim(); }

 private:
  const Model<float>& teacher_;
  const InputCache& inputs_;
  DescriptorTable table_;
  std::size_t forward_passes_ = 0;
};

// Distillation state for stage II.
struct KdSetup {
  TeacherCache* teacher = nullptr;
  std::map<SamplePair, double> weights;
};

// Optimizes `model` on mined triplets; with `kd` the loss adds the weighted
// feature-mimic terms. Shared by every training entry point.
TrainResult train_model(Model<float> model, const TrainingData& data, const StageConfig& cfg, KdSetup* kd = nullptr);

TrainResult train_stage1(Branch branch, const TrainingData& data, const StageConfig& cfg, const InputSpec& input,
                         const BackboneConfig& rgb_cfg, const BackboneConfig& seg_cfg);

struct Stage2Options {
  bool transform_bias = true;
  bool transform_renormalize = false;
  // Start the student from these weights instead of a fresh initialization.
  const Model<float>* init_from = nullptr;
};

TrainResult train_stage2(const TrainingData& data, const Model<float>& teacher,
                         const std::map<SamplePair, double>& weights, const StageConfig& cfg, const InputSpec& input,
                         const BackboneConfig& rgb_cfg, const Stage2Options& options = {});

enum class BaselineMode { kConcatInput, kConcatFeat };
BaselineMode parse_baseline_mode(const std::string& name);

TrainResult train_baseline(BaselineMode mode, const TrainingData& data, const StageConfig& cfg,
                           const InputSpec& input, const BackboneConfig& rgb_cfg, const BackboneConfig& seg_cfg);

// Mean triplet loss over every mined training pair against its hardest
// in-pool negative under the current model.
double mean_training_loss(const Model<float>& model, const TrainingData& data, const StageConfig& cfg);

// Validation Recall@{1,5,10} of a model.
RecallReport validation_recall(const Model<float>& model, const std::vector<PlaceRecord>& records,
                               const GroundTruthConfig& gt, const InputCache* cache);

// Decoupled-weight-decay Adam over a list of parameter tensors.
class AdamW {
 public:
  AdamW(const std::vector<std::vector<float>*>& params, double beta1, double beta2, double eps, double weight_decay);
  void step(const ParamSet<float>& grads, double lr);
  long steps() const { return t_; }

 private:
  std::vector<std::vector<float>*> params_;
  ParamSet<float> m_, v_;
  double beta1_, beta2_, eps_, weight_decay_;
  long t_ = 0;
};

}  // namespace placekd
