#include "placekd/model.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "placekd/errors.h"
#include "placekd/image_io.h"
#include "placekd/kernels.h"
#include "placekd/random.h"

namespace placekd {

std::string to_string(Branch branch) {
  switch (branch) {
    case Branch::kRgb: return "rgb";
    case Branch::kSeg: return "seg";
    case Branch::kStudent: return "student";
  }
  return "?";
}

BackboneConfig BackboneConfig::rgb_like(int input_channels) {
  BackboneConfig c;
  c.input_channels = input_channels;
  c.stage_channels = {16, 24, 32, 96, 320};
  c.preset = "rgb_like";
  return c;
}

BackboneConfig BackboneConfig::seg_light(int input_channels) {
  BackboneConfig c;
  c.input_channels = input_channels;
  c.stage_channels = {8, 16, 24, 96, 360};
  c.preset = "seg_light";
  return c;
}

void BackboneConfig::validate() const {
  if (input_channels < 1) throw ModelError("backbone input_channels must be >= 1");
  for (int i = 0; i < kNumStages; ++i) {
    if (stage_channels[i] < 1) throw ModelError("backbone stage widths must be > 0");
    if (stage_strides[i] < 1) throw ModelError("backbone strides must be >= 1");
  }
}

nlohmann::json BackboneConfig::to_json() const {
  return {{"input_channels", input_channels},
          {"stage_channels", stage_channels},
          {"stage_strides", stage_strides},
          {"preset", preset}};
}

BackboneConfig BackboneConfig::from_json(const nlohmann::json& j) {
  BackboneConfig c = j.value("preset", std::string("rgb_like")) == "seg_light" ? seg_light() : rgb_like();
  try {
    if (j.contains("input_channels")) c.input_channels = j.at("input_channels").get<int>();
    if (j.contains("stage_channels")) {
      auto v = j.at("stage_channels").get<std::vector<int>>();
      if (v.size() != kNumStages) throw ModelError("stage_channels needs exactly 5 entries");
      std::copy(v.begin(), v.end(), c.stage_channels.begin());
    }
    if (j.contains("stage_strides")) {
      auto v = j.at("stage_strides").get<std::vector<int>>();
      if (v.size() != kNumStages) throw ModelError("stage_strides needs exactly 5 entries");
      std::copy(v.begin(), v.end(), c.stage_strides.begin());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("backbone config: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename T>
Backbone<T>::Backbone(BackboneConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  int in = cfg_.input_channels;
  for (int s = 0; s < kNumStages; ++s) {
    const int out = cfg_.stage_channels[s];
    params_.emplace_back(static_cast<std::size_t>(out) * in * 9, T(0));
    params_.emplace_back(static_cast<std::size_t>(out), T(0));
    in = out;
  }
}

template <typename T>
void Backbone<T>::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  int in = cfg_.input_channels;
  for (int s = 0; s < kNumStages; ++s) {
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / (in * 9)));
    for (auto& w : params_[2 * s]) w = static_cast<T>(normal(rng));
    std::fill(params_[2 * s + 1].begin(), params_[2 * s + 1].end(), T(0));
    in = cfg_.stage_channels[s];
  }
}

template <typename T>
std::vector<std::string> Backbone<T>::param_names() {
  std::vector<std::string> names;
  for (int s = 0; s < kNumStages; ++s) {
    names.push_back("stage" + std::to_string(s + 1) + ".weight");
    names.push_back("stage" + std::to_string(s + 1) + ".bias");
  }
  return names;
}

template <typename T>
FeaturePyramid<T> Backbone<T>::forward(const Tensor3<T>& input) const {
  if (input.channels != cfg_.input_channels) {
    throw ModelError("backbone expects " + std::to_string(cfg_.input_channels) + " input channels, got " +
                     std::to_string(input.channels));
  }
  if (input.height < 1 || input.width < 1) throw ModelError("backbone input is empty");
  FeaturePyramid<T> out;
  const Tensor3<T>* x = &input;
  for (int s = 0; s < kNumStages; ++s) {
    kernels::parallel::conv3x3_forward<T>(*x, params_[2 * s], params_[2 * s + 1], cfg_.stage_strides[s], out[s]);
    for (auto& v : out[s].data) v = v > T(0) ? v : T(0);
    x = &out[s];
  }
  return out;
}

template <typename T>
void Backbone<T>::backward(const Tensor3<T>& input, const FeaturePyramid<T>& pyramid, FeaturePyramid<T>& grad_pyramid,
                           ParamSet<T>& grads) const {
  Tensor3<T> grad_in;
  for (int s = kNumStages - 1; s >= 0; --s) {
    Tensor3<T>& g = grad_pyramid[s];
    if (g.size() != pyramid[s].size()) throw ModelError("backbone backward: gradient shape mismatch");
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (!(pyramid[s].data[k] > T(0))) g.data[k] = T(0);
    }
    const Tensor3<T>& stage_input = s == 0 ? input : pyramid[s - 1];
    kernels::parallel::conv3x3_backward<T>(stage_input, params_[2 * s], g, cfg_.stage_strides[s],
                                           s == 0 ? nullptr : &grad_in, grads[2 * s], grads[2 * s + 1]);
    if (s > 0) {
      Tensor3<T>& below = grad_pyramid[s - 1];
      if (below.size() != grad_in.size()) below = Tensor3<T>(grad_in.channels, grad_in.height, grad_in.width);
      for (std::size_t k = 0; k < below.size(); ++k) below.data[k] += grad_in.data[k];
    }
  }
}

template <typename T>
std::vector<T> l2_normalize(std::span<const T> v, T* norm_out) {
  T sq = 0;
  for (T x : v) sq += x * x;
  const T norm = std::sqrt(sq);
  const T denom = std::max(norm, static_cast<T>(kNormEpsilon));
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / denom;
  if (norm_out) *norm_out = norm;
  return out;
}

template <typename T>
std::vector<T> l2_normalize_backward(std::span<const T> y, T norm, std::span<const T> grad_y) {
  std::vector<T> out(y.size());
  if (norm <= static_cast<T>(kNormEpsilon)) {
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = grad_y[i] / static_cast<T>(kNormEpsilon);
    return out;
  }
  T dot = 0;
  for (std::size_t i = 0; i < y.size(); ++i) dot += y[i] * grad_y[i];
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = (grad_y[i] - y[i] * dot) / norm;
  return out;
}

template <typename T>
std::vector<T> mc_aggregate(const FeaturePyramid<T>& pyramid, std::span<const int> levels, AggregateTrace<T>* trace) {
  AggregateTrace<T> local;
  AggregateTrace<T>& t = trace ? *trace : local;
  t = AggregateTrace<T>{};
  t.levels.assign(levels.begin(), levels.end());
  if (levels.empty()) throw ModelError("mc_aggregate: no levels requested");
  for (int level : levels) {
    if (level < 1 || level > kNumStages) {
      throw ModelError("mc_aggregate: level " + std::to_string(level) + " does not exist");
    }
    const Tensor3<T>& f = pyramid[level - 1];
    if (f.plane() == 0) throw ModelError("mc_aggregate: level " + std::to_string(level) + " is empty");
    std::vector<T> pooled(static_cast<std::size_t>(f.channels));
    std::vector<std::size_t> arg(static_cast<std::size_t>(f.channels));
    for (int c = 0; c < f.channels; ++c) {
      const T* p = f.channel(c);
      std::size_t best = 0;
      for (std::size_t k = 1; k < f.plane(); ++k) {
        if (p[k] > p[best]) best = k;
      }
      pooled[c] = p[best];
      arg[c] = best;
    }
    T norm = 0;
    std::vector<T> unit = l2_normalize<T>(pooled, &norm);
    t.concat.insert(t.concat.end(), unit.begin(), unit.end());
    t.pooled.push_back(std::move(pooled));
    t.argmax.push_back(std::move(arg));
    t.pooled_norms.push_back(norm);
  }
  t.output = l2_normalize<T>(t.concat, &t.concat_norm);
  return t.output;
}

template <typename T>
void mc_aggregate_backward(const AggregateTrace<T>& trace, std::span<const T> grad_output,
                           FeaturePyramid<T>& grad_pyramid) {
  if (grad_output.size() != trace.output.size()) throw ModelError("mc_aggregate backward: dim mismatch");
  const std::vector<T> grad_concat = l2_normalize_backward<T>(trace.output, trace.concat_norm, grad_output);
  std::size_t offset = 0;
  for (std::size_t li = 0; li < trace.levels.size(); ++li) {
    const std::size_t n = trace.pooled[li].size();
    std::span<const T> unit(trace.concat.data() + offset, n);
    std::span<const T> g(grad_concat.data() + offset, n);
    const std::vector<T> grad_pooled = l2_normalize_backward<T>(unit, trace.pooled_norms[li], g);
    Tensor3<T>& gp = grad_pyramid[trace.levels[li] - 1];
    for (std::size_t c = 0; c < n; ++c) gp.data[c * gp.plane() + trace.argmax[li][c]] += grad_pooled[c];
    offset += n;
  }
}

template <typename T>
Transformation<T>::Transformation(int in_dim, int out_dim, bool use_bias, bool renormalize)
    : in_dim_(in_dim), out_dim_(out_dim), use_bias_(use_bias), renormalize_(renormalize) {
  if (in_dim < 1 || out_dim < 1) throw ModelError("transformation dims must be >= 1");
  params_.emplace_back(static_cast<std::size_t>(in_dim) * out_dim, T(0));
  params_.emplace_back(static_cast<std::size_t>(out_dim), T(0));
}

template <typename T>
void Transformation<T>::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim_));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  for (auto& w : params_[0]) w = static_cast<T>(uniform(rng));
  for (auto& b : params_[1]) b = use_bias_ ? static_cast<T>(uniform(rng)) : T(0);
}

template <typename T>
std::vector<T> Transformation<T>::affine(std::span<const T> x) const {
  if (static_cast<int>(x.size()) != in_dim_) {
    throw ModelError("transformation expects dim " + std::to_string(in_dim_) + ", got " + std::to_string(x.size()));
  }
  std::vector<T> y(static_cast<std::size_t>(out_dim_));
  for (int r = 0; r < out_dim_; ++r) {
    const T* row = params_[0].data() + static_cast<std::size_t>(r) * in_dim_;
    T acc = use_bias_ ? params_[1][r] : T(0);
    for (int c = 0; c < in_dim_; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
  return y;
}

template <typename T>
std::vector<T> Transformation<T>::apply(std::span<const T> x) const {
  std::vector<T> z = affine(x);
  return renormalize_ ? l2_normalize<T>(z) : z;
}

template <typename T>
std::vector<T> Transformation<T>::backward(std::span<const T> x, std::span<const T> grad_y, ParamSet<T>& grads) const {
  if (static_cast<int>(x.size()) != in_dim_ || static_cast<int>(grad_y.size()) != out_dim_) {
    throw ModelError("transformation backward: dim mismatch");
  }
  std::vector<T> grad_z(grad_y.begin(), grad_y.end());
  if (renormalize_) {
    T norm = 0;
    const std::vector<T> y = l2_normalize<T>(affine(x), &norm);
    grad_z = l2_normalize_backward<T>(y, norm, grad_y);
  }
  std::vector<T> grad_x(static_cast<std::size_t>(in_dim_), T(0));
  for (int r = 0; r < out_dim_; ++r) {
    const T g = grad_z[r];
    const T* row = params_[0].data() + static_cast<std::size_t>(r) * in_dim_;
    T* grow = grads[0].data() + static_cast<std::size_t>(r) * in_dim_;
    for (int c = 0; c < in_dim_; ++c) {
      grow[c] += g * x[c];
      grad_x[c] += g * row[c];
    }
    if (use_bias_) grads[1][r] += g;
  }
  return grad_x;
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kRgb: return "rgb";
    case ModelKind::kSeg: return "seg";
    case ModelKind::kStudent: return "student";
    case ModelKind::kConcatInput: return "concat_input";
    case ModelKind::kConcatFeat: return "concat_feat";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "rgb") return ModelKind::kRgb;
  if (name == "seg") return ModelKind::kSeg;
  if (name == "student") return ModelKind::kStudent;
  if (name == "concat_input") return ModelKind::kConcatInput;
  if (name == "concat_feat") return ModelKind::kConcatFeat;
  throw ConfigError("unknown model kind '" + name + "'");
}

nlohmann::json InputSpec::to_json() const {
  return {{"height", height}, {"width", width}, {"slme", scheme.to_json()}};
}

InputSpec InputSpec::from_json(const nlohmann::json& j) {
  InputSpec s;
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  if (j.contains("slme")) s.scheme = SlmeScheme::from_json(j.at("slme"));
  if (s.height < 1 || s.width < 1) throw ConfigError("input size must be positive");
  return s;
}

bool needs_rgb(ModelKind kind) { return kind != ModelKind::kSeg; }
bool needs_seg(ModelKind kind) {
  return kind == ModelKind::kSeg || kind == ModelKind::kConcatInput || kind == ModelKind::kConcatFeat;
}

ModelInput load_input(const PlaceRecord& record, const InputSpec& spec, ModelKind kind) {
  ModelInput in;
  if (needs_rgb(kind)) {
    in.rgb = rgb_to_tensor(resize_bilinear(read_rgb(record.rgb_path), spec.height, spec.width));
  }
  if (needs_seg(kind)) {
    if (record.seg_path.empty()) {
      throw EvaluationError("record '" + record.id + "' has no segmentation map but model kind " + to_string(kind) +
                            " requires one");
    }
    in.seg = encode_label_map(read_label_map(record.seg_path), spec.scheme, spec.height, spec.width);
  }
  return in;
}

template <typename T>
int Model<T>::descriptor_dim() const {
  int dim = 0;
  for (const auto& net : nets) {
    for (int level : levels) dim += net.config().stage_channels[level - 1];
  }
  return dim;
}

template <typename T>
Branch Model<T>::branch() const {
  switch (kind) {
    case ModelKind::kSeg: return Branch::kSeg;
    case ModelKind::kStudent: return Branch::kStudent;
    default: return Branch::kRgb;
  }
}

template <typename T>
std::size_t Model<T>::num_param_tensors() const {
  std::size_t n = 0;
  for (const auto& net : nets) n += net.params().size();
  if (transform) n += transform->params().size();
  return n;
}

template <typename T>
std::vector<std::vector<T>*> Model<T>::param_tensors() {
  std::vector<std::vector<T>*> out;
  for (auto& net : nets) {
    for (auto& p : net.params()) out.push_back(&p);
  }
  if (transform) {
    for (auto& p : transform->params()) out.push_back(&p);
  }
  return out;
}

template <typename T>
std::vector<const std::vector<T>*> Model<T>::param_tensors() const {
  std::vector<const std::vector<T>*> out;
  for (const auto& net : nets) {
    for (const auto& p : net.params()) out.push_back(&p);
  }
  if (transform) {
    for (const auto& p : transform->params()) out.push_back(&p);
  }
  return out;
}

template <typename T>
ParamSet<T> Model<T>::zero_grads() const {
  ParamSet<T> g;
  for (const auto* p : param_tensors()) g.emplace_back(p->size(), T(0));
  return g;
}

namespace {

template <typename T>
Tensor3<T> concat_channels(const Tensor3<float>& a, const Tensor3<float>& b) {
  if (a.height != b.height || a.width != b.width) throw ModelError("concat_input: rgb/seg size mismatch");
  Tensor3<T> out(a.channels + b.channels, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

}  // namespace

template <typename T>
std::vector<T> Model<T>::describe(const ModelInput& in, ModelTrace<T>* trace) const {
  ModelTrace<T> local;
  ModelTrace<T>& t = trace ? *trace : local;
  t = ModelTrace<T>{};
  switch (kind) {
    case ModelKind::kRgb:
    case ModelKind::kStudent:
      if (in.rgb.size() == 0) throw ModelError(to_string(kind) + " model needs an RGB input");
      t.inputs.push_back(in.rgb.cast<T>());
      break;
    case ModelKind::kSeg:
      if (in.seg.size() == 0) throw ModelError("seg model needs an encoded segmentation input");
      t.inputs.push_back(in.seg.cast<T>());
      break;
    case ModelKind::kConcatInput:
      if (in.rgb.size() == 0 || in.seg.size() == 0) throw EvaluationError("concat_input needs rgb and seg inputs");
      t.inputs.push_back(concat_channels<T>(in.rgb, in.seg));
      break;
    case ModelKind::kConcatFeat:
      if (in.rgb.size() == 0 || in.seg.size() == 0) throw EvaluationError("concat_feat needs rgb and seg inputs");
      t.inputs.push_back(in.rgb.cast<T>());
      t.inputs.push_back(in.seg.cast<T>());
      break;
  }
  if (t.inputs.size() != nets.size()) throw ModelError("model has the wrong number of backbones");
  std::vector<T> joined;
  for (std::size_t i = 0; i < nets.size(); ++i) {
    t.pyramids.push_back(nets[i].forward(t.inputs[i]));
    t.aggregates.emplace_back();
    std::vector<T> d = mc_aggregate<T>(t.pyramids[i], levels, &t.aggregates.back());
    joined.insert(joined.end(), d.begin(), d.end());
  }
  if (nets.size() == 1) {
    t.descriptor = std::move(joined);
  } else {
    t.fused = std::move(joined);
    t.descriptor = l2_normalize<T>(t.fused, &t.fused_norm);
  }
  return t.descriptor;
}

template <typename T>
void Model<T>::backward(const ModelTrace<T>& trace, std::span<const T> grad_descriptor, ParamSet<T>& grads) const {
  std::vector<T> grad_joined(grad_descriptor.begin(), grad_descriptor.end());
  if (nets.size() > 1) grad_joined = l2_normalize_backward<T>(trace.descriptor, trace.fused_norm, grad_descriptor);
  std::size_t offset = 0;
  std::size_t tensor_offset = 0;
  for (std::size_t i = 0; i < nets.size(); ++i) {
    const std::size_t n = trace.aggregates[i].output.size();
    FeaturePyramid<T> grad_pyramid;
    for (int s = 0; s < kNumStages; ++s) {
      const auto& f = trace.pyramids[i][s];
      grad_pyramid[s] = Tensor3<T>(f.channels, f.height, f.width);
    }
    mc_aggregate_backward<T>(trace.aggregates[i], std::span<const T>(grad_joined.data() + offset, n), grad_pyramid);
    ParamSet<T> net_grads;
    net_grads.reserve(nets[i].params().size());
    for (std::size_t k = 0; k < nets[i].params().size(); ++k) net_grads.push_back(std::move(grads[tensor_offset + k]));
    nets[i].backward(trace.inputs[i], trace.pyramids[i], grad_pyramid, net_grads);
    for (std::size_t k = 0; k < net_grads.size(); ++k) grads[tensor_offset + k] = std::move(net_grads[k]);
    offset += n;
    tensor_offset += nets[i].params().size();
  }
}

Model<float> make_model(ModelKind kind, const InputSpec& input, const BackboneConfig& rgb_cfg,
                        const BackboneConfig& seg_cfg, std::uint64_t seed, int student_teacher_dim,
                        bool transform_bias, bool transform_renormalize) {
  input.scheme.validate();
  Model<float> m;
  m.kind = kind;
  m.input = input;
  const int classes = input.scheme.num_classes();
  auto with_channels = [](BackboneConfig cfg, int channels) {
    cfg.input_channels = channels;
    return cfg;
  };
  switch (kind) {
    case ModelKind::kRgb:
    case ModelKind::kStudent:
      m.nets.emplace_back(with_channels(rgb_cfg, 3));
      break;
    case ModelKind::kSeg:
      m.nets.emplace_back(with_channels(seg_cfg, classes));
      break;
    case ModelKind::kConcatInput:
      m.nets.emplace_back(with_channels(rgb_cfg, 3 + classes));
      break;
    case ModelKind::kConcatFeat:
      m.nets.emplace_back(with_channels(rgb_cfg, 3));
      m.nets.emplace_back(with_channels(seg_cfg, classes));
      break;
  }
  for (std::size_t i = 0; i < m.nets.size(); ++i) {
    m.nets[i].init(derive_seed(seed, i == 0 ? kStreamBackbone0 : kStreamBackbone1));
  }
  if (kind == ModelKind::kStudent) {
    if (student_teacher_dim < 1) throw ConfigError("student model needs the teacher descriptor dim");
    m.transform = Transformation<float>(m.descriptor_dim(), student_teacher_dim, transform_bias,
                                        transform_renormalize);
    m.transform->init(derive_seed(seed, kStreamTransform));
  }
  return m;
}

GlobalDescriptor describe_record(const Model<float>& model, const PlaceRecord& record) {
  GlobalDescriptor d;
  d.values = model.describe(load_input(record, model.input, model.kind));
  d.branch = model.branch();
  return d;
}

template class Backbone<float>;
template class Backbone<double>;
template class Transformation<float>;
template class Transformation<double>;
template struct Model<float>;
template struct Model<double>;
template std::vector<float> l2_normalize<float>(std::span<const float>, float*);
template std::vector<double> l2_normalize<double>(std::span<const double>, double*);
template std::vector<float> l2_normalize_backward<float>(std::span<const float>, float, std::span<const float>);
template std::vector<double> l2_normalize_backward<double>(std::span<const double>, double, std::span<const double>);
template std::vector<float> mc_aggregate<float>(const FeaturePyramid<float>&, std::span<const int>,
                                                AggregateTrace<float>*);
template std::vector<double> mc_aggregate<double>(const FeaturePyramid<double>&, std::span<const int>,
                                                  AggregateTrace<double>*);
template void mc_aggregate_backward<float>(const AggregateTrace<float>&, std::span<const float>,
                                           FeaturePyramid<float>&);
template void mc_aggregate_backward<double>(const AggregateTrace<double>&, std::span<const double>,
                                            FeaturePyramid<double>&);

}  // namespace placekd
