#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "placekd/dataset.h"
#include "placekd/slme.h"
#include "placekd/tensor.h"

namespace placekd {

inline constexpr int kNumStages = 5;
inline constexpr double kNormEpsilon = 1e-12;

// Which network produced a descriptor.
enum class Branch { kRgb, kSeg, kStudent };
std::string to_string(Branch branch);

struct BackboneConfig {
  int input_channels = 3;
  std::array<int, kNumStages> stage_channels{16, 24, 32, 96, 320};
  std::array<int, kNumStages> stage_strides{2, 2, 2, 2, 2};
  std::string preset = "rgb_like";

  static BackboneConfig rgb_like(int input_channels = 3);
  static BackboneConfig seg_light(int input_channels = kNumStructureClasses);

  void validate() const;
  nlohmann::json to_json() const;
  static BackboneConfig from_json(const nlohmann::json& j);
  bool operator==(const BackboneConfig&) const = default;
};

template <typename T>
using FeaturePyramid = std::array<Tensor3<T>, kNumStages>;

// Flat parameter tensors; the model and its gradients share this layout.
template <typename T>
using ParamSet = std::vector<std::vector<T>>;

template <typename T>
ParamSet<T> zeros_like(const ParamSet<T>& params) {
  ParamSet<T> out(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) out[i].assign(params[i].size(), T(0));
  return out;
}

// Five stages of 3x3 convolution (padding 1) followed by ReLU.
// Tensors are stored as [stage0.weight, stage0.bias, stage1.weight, ...].
template <typename T>
class Backbone {
 public:
  Backbone() = default;
  explicit Backbone(BackboneConfig cfg);

  void init(std::uint64_t seed);
  const BackboneConfig& config() const { return cfg_; }

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  static std::vector<std::string> param_names();

  FeaturePyramid<T> forward(const Tensor3<T>& input) const;

  // grad_pyramid holds dL/d(stage outputs) and is consumed. grads has the
  // params() layout and is accumulated into.
  void backward(const Tensor3<T>& input, const FeaturePyramid<T>& pyramid, FeaturePyramid<T>& grad_pyramid,
                ParamSet<T>& grads) const;

  template <typename U>
  Backbone<U> cast() const {
    Backbone<U> out(cfg_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.params()[i].assign(params_[i].begin(), params_[i].end());
    }
    return out;
  }

 private:
  BackboneConfig cfg_;
  ParamSet<T> params_;
};

// L2Norm(v) = v / max(||v||, 1e-12).
template <typename T>
std::vector<T> l2_normalize(std::span<const T> v, T* norm_out = nullptr);

// dL/dv of L2Norm at v, given the normalized output y, ||v|| and dL/dy.
template <typename T>
std::vector<T> l2_normalize_backward(std::span<const T> y, T norm, std::span<const T> grad_y);

template <typename T>
struct AggregateTrace {
  std::vector<int> levels;
  std::vector<std::vector<T>> pooled;
  std::vector<std::vector<std::size_t>> argmax;
  std::vector<T> pooled_norms;
  std::vector<T> concat;  // per-level normalized vectors, concatenated
  T concat_norm = 0;
  std::vector<T> output;
};

// Global max pooling per selected level (1-based), per-level L2 normalization,
// concatenation and a final L2 normalization.
template <typename T>
std::vector<T> mc_aggregate(const FeaturePyramid<T>& pyramid, std::span<const int> levels,
                            AggregateTrace<T>* trace = nullptr);

// Scatters dL/d(descriptor) back to the argmax positions of grad_pyramid,
// which must already be shaped like the forward pyramid.
template <typename T>
void mc_aggregate_backward(const AggregateTrace<T>& trace, std::span<const T> grad_output,
                           FeaturePyramid<T>& grad_pyramid);

// Affine map from the student descriptor space into the teacher's: y = W x + b,
// optionally rescaled to unit norm.
template <typename T>
class Transformation {
 public:
  Transformation() = default;
  Transformation(int in_dim, int out_dim, bool use_bias = true, bool renormalize = false);

  void init(std::uint64_t seed);
  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  bool use_bias() const { return use_bias_; }
  bool renormalize() const { return renormalize_; }

  // [matrix (out x in, row-major), bias (out)]
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  std::vector<T> apply(std::span<const T> x) const;
  // Accumulates dL/dW, dL/db into grads (params() layout); returns dL/dx.
  std::vector<T> backward(std::span<const T> x, std::span<const T> grad_y, ParamSet<T>& grads) const;

  // W x + b before any rescaling.
  std::vector<T> affine(std::span<const T> x) const;

  template <typename U>
  Transformation<U> cast() const {
    Transformation<U> out(in_dim_, out_dim_, use_bias_, renormalize_);
    for (std::size_t i = 0; i < params_.size(); ++i) out.params()[i].assign(params_[i].begin(), params_[i].end());
    return out;
  }

 private:
  int in_dim_ = 0;
  int out_dim_ = 0;
  bool use_bias_ = true;
  bool renormalize_ = false;
  ParamSet<T> params_;
};

// A descriptor with the branch that produced it.
struct GlobalDescriptor {
  std::vector<float> values;
  Branch branch = Branch::kRgb;

  int dim() const { return static_cast<int>(values.size()); }
};

enum class ModelKind { kRgb, kSeg, kStudent, kConcatInput, kConcatFeat };
std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

// How raw records become network inputs.
struct InputSpec {
  int height = 32;
  int width = 32;
  SlmeScheme scheme = default_scheme();

  nlohmann::json to_json() const;
  static InputSpec from_json(const nlohmann::json& j);
  bool operator==(const InputSpec&) const = default;
};

struct ModelInput {
  Tensor3<float> rgb;  // empty when not needed
  Tensor3<float> seg;
};

bool needs_rgb(ModelKind kind);
bool needs_seg(ModelKind kind);

// Loads and preprocesses only the modalities `kind` consumes. Segmentation
// files are never opened for RGB-only kinds.
ModelInput load_input(const PlaceRecord& record, const InputSpec& spec, ModelKind kind);

template <typename T>
struct ModelTrace {
  std::vector<Tensor3<T>> inputs;
  std::vector<FeaturePyramid<T>> pyramids;
  std::vector<AggregateTrace<T>> aggregates;
  // concat_feat only: the concatenated branch descriptors and their norm.
  std::vector<T> fused;
  T fused_norm = 0;
  std::vector<T> descriptor;
};

// A descriptor extractor: one backbone (rgb, seg, student, concat_input) or two
// (concat_feat: rgb then seg), plus the transformation T for students.
template <typename T>
struct Model {
  ModelKind kind = ModelKind::kRgb;
  std::vector<Backbone<T>> nets;
  std::optional<Transformation<T>> transform;
  std::vector<int> levels{3, 4, 5};
  InputSpec input;

  int descriptor_dim() const;
  Branch branch() const;

  // Parameter tensors of the backbones (in order), then of T if present.
  std::size_t num_param_tensors() const;
  std::vector<std::vector<T>*> param_tensors();
  std::vector<const std::vector<T>*> param_tensors() const;
  ParamSet<T> zero_grads() const;

  std::vector<T> describe(const ModelInput& in, ModelTrace<T>* trace = nullptr) const;
  // Accumulates backbone gradients (not T's) for dL/d(descriptor).
  void backward(const ModelTrace<T>& trace, std::span<const T> grad_descriptor, ParamSet<T>& grads) const;

  template <typename U>
  Model<U> cast() const {
    Model<U> out;
    out.kind = kind;
    for (const auto& n : nets) out.nets.push_back(n.template cast<U>());
    if (transform) out.transform = transform->template cast<U>();
    out.levels = levels;
    out.input = input;
    return out;
  }
};

// Builds a freshly initialized model; `student_teacher_dim` > 0 adds T.
Model<float> make_model(ModelKind kind, const InputSpec& input, const BackboneConfig& rgb_cfg,
                        const BackboneConfig& seg_cfg, std::uint64_t seed, int student_teacher_dim = 0,
                        bool transform_bias = true, bool transform_renormalize = false);

GlobalDescriptor describe_record(const Model<float>& model, const PlaceRecord& record);

}  // namespace placekd
