#include "placekd/config.h"

#include <fstream>
#include <set>

#include "placekd/errors.h"
#include "placekd/random.h"

namespace placekd {
namespace fs = std::filesystem;

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& section) {
  if (!j.is_object()) throw ConfigError("config field '" + section + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown config field '" + section + "." + key + "'");
  }
}

template <typename T>
T field(const nlohmann::json& j, const std::string& key, const T& fallback, const std::string& section) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config field '" + section + "." + key + "' has the wrong type");
  }
}

template <typename Fn>
auto in_section(const std::string& section, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError("config section '" + section + "': " + e.what());
  } catch (const ModelError& e) {
    throw ConfigError("config section '" + section + "': " + e.what());
  }
}

}  // namespace

GroundTruthConfig ground_truth_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"mode", "radius_m", "angle_deg", "frame_tol"}, "dataset.ground_truth");
  GroundTruthConfig gt;
  gt.mode = parse_ground_truth_mode(field<std::string>(j, "mode", "radius", "dataset.ground_truth"));
  gt.radius_m = field<double>(j, "radius_m", gt.radius_m, "dataset.ground_truth");
  gt.angle_deg = field<double>(j, "angle_deg", gt.angle_deg, "dataset.ground_truth");
  gt.frame_tol = field<int>(j, "frame_tol", gt.frame_tol, "dataset.ground_truth");
  gt.validate();
  return gt;
}

nlohmann::json ground_truth_to_json(const GroundTruthConfig& gt) {
  return {{"mode", to_string(gt.mode)}, {"radius_m", gt.radius_m}, {"angle_deg", gt.angle_deg},
          {"frame_tol", gt.frame_tol}};
}

WeightScheme Stage2Section::scheme(const std::string& name, const PartitionConfig& partition) const {
  WeightScheme s = WeightScheme::parse(name, partition);
  s.factors = eq4_factors;
  return s;
}

InputSpec ExperimentConfig::input_spec() const {
  InputSpec s;
  s.height = model.input_height;
  s.width = model.input_width;
  s.scheme = slme;
  return s;
}

StageConfig ExperimentConfig::stage1_config() const {
  StageConfig c = stage1;
  c.seed = derive_seed(seed, 101);
  return c;
}

StageConfig ExperimentConfig::stage2_config() const {
  StageConfig c = stage2.stage;
  // Same derivation as stage I so the `none` scheme replays rgb training.
  c.seed = derive_seed(seed, 101);
  return c;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json ds = {{"ground_truth", ground_truth_to_json(dataset.ground_truth)}};
  if (dataset.synth) {
    ds["synth"] = dataset.synth->to_json();
  } else {
    ds["train_manifest"] = dataset.train_manifest.string();
    ds["val_manifest"] = dataset.val_manifest.string();
    ds["test_manifest"] = dataset.test_manifest.string();
  }
  nlohmann::json s2 = stage2.stage.to_json();
  s2["schemes"] = stage2.schemes;
  s2["init_from_rgb"] = stage2.init_from_rgb;
  s2["eq4_factors"] = stage2.eq4_factors;
  return {{"seed", seed},
          {"dataset", ds},
          {"slme", slme.to_json()},
          {"model",
           {{"rgb", model.rgb.to_json()},
            {"seg", model.seg.to_json()},
            {"transform_bias", model.transform_bias},
            {"transform_renormalize", model.transform_renormalize},
            {"input_height", model.input_height},
            {"input_width", model.input_width}}},
          {"stage1", stage1.to_json()},
          {"partition", {{"N_t", partition.n_t}, {"N_m", partition.n_m}}},
          {"stage2", s2},
          {"eval", {{"ns", eval.ns}}}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
  reject_unknown(j, {"seed", "dataset", "slme", "model", "stage1", "partition", "stage2", "eval"}, "<root>");
  ExperimentConfig c;
  c.seed = field<std::uint64_t>(j, "seed", 0, "<root>");

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    reject_unknown(d, {"synth", "train_manifest", "val_manifest", "test_manifest", "ground_truth"}, "dataset");
    in_section("dataset", [&] {
      if (d.contains("synth")) c.dataset.synth = SynthConfig::from_json(d.at("synth"));
      auto path = [&](const char* key) {
        fs::path p = field<std::string>(d, key, "", "dataset");
        return p.empty() || p.is_absolute() ? p : base_dir / p;
      };
      c.dataset.train_manifest = path("train_manifest");
      c.dataset.val_manifest = path("val_manifest");
      c.dataset.test_manifest = path("test_manifest");
      if (d.contains("ground_truth")) c.dataset.ground_truth = ground_truth_from_json(d.at("ground_truth"));
      return 0;
    });
    if (!c.dataset.synth && c.dataset.train_manifest.empty()) {
      throw ConfigError("config field 'dataset' needs either 'synth' or the three manifests");
    }
  } else {
    c.dataset.synth = SynthConfig{};
  }

  if (j.contains("slme")) {
    const auto& s = j.at("slme");
    c.slme = in_section("slme", [&] {
      return s.is_string() ? load_scheme(s.get<std::string>()) : SlmeScheme::from_json(s);
    });
  }

  if (j.contains("model")) {
    const auto& m = j.at("model");
    reject_unknown(m, {"rgb", "seg", "transform_bias", "transform_renormalize", "input_height", "input_width"}, "model");
    in_section("model", [&] {
      if (m.contains("rgb")) c.model.rgb = BackboneConfig::from_json(m.at("rgb"));
      if (m.contains("seg")) {
        nlohmann::json seg = m.at("seg");
        if (!seg.contains("preset")) seg["preset"] = "seg_light";
        c.model.seg = BackboneConfig::from_json(seg);
      }
      c.model.transform_bias = field<bool>(m, "transform_bias", c.model.transform_bias, "model");
      c.model.transform_renormalize =
          field<bool>(m, "transform_renormalize", c.model.transform_renormalize, "model");
      c.model.input_height = field<int>(m, "input_height", c.model.input_height, "model");
      c.model.input_width = field<int>(m, "input_width", c.model.input_width, "model");
      return 0;
    });
  }
  c.model.seg.input_channels = c.slme.num_classes();

  if (j.contains("stage1")) c.stage1 = in_section("stage1", [&] { return StageConfig::from_json(j.at("stage1")); });

  if (j.contains("partition")) {
    const auto& p = j.at("partition");
    reject_unknown(p, {"N_t", "N_m"}, "partition");
    c.partition.n_t = field<int>(p, "N_t", c.partition.n_t, "partition");
    c.partition.n_m = field<int>(p, "N_m", c.partition.n_m, "partition");
    in_section("partition", [&] {
      c.partition.validate();
      return 0;
    });
  }

  if (j.contains("stage2")) {
    nlohmann::json s2 = j.at("stage2");
    if (!s2.is_object()) throw ConfigError("config field 'stage2' must be an object");
    c.stage2.schemes = field<std::vector<std::string>>(s2, "schemes", c.stage2.schemes, "stage2");
    c.stage2.init_from_rgb = field<bool>(s2, "init_from_rgb", c.stage2.init_from_rgb, "stage2");
    c.stage2.eq4_factors = field<std::array<double, 3>>(s2, "eq4_factors", c.stage2.eq4_factors, "stage2");
    for (double f : c.stage2.eq4_factors) {
      if (!(f > 0)) throw ConfigError("config field 'stage2.eq4_factors' must be positive");
    }
    s2.erase("schemes");
    s2.erase("init_from_rgb");
    s2.erase("eq4_factors");
    c.stage2.stage = in_section("stage2", [&] { return StageConfig::from_json(s2); });
  }
  for (const auto& s : c.stage2.schemes) in_section("stage2", [&] { return c.stage2.scheme(s, c.partition); });

  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    reject_unknown(e, {"ns"}, "eval");
    c.eval.ns = field<std::vector<int>>(e, "ns", c.eval.ns, "eval");
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, fs::absolute(path).parent_path());
}

}  // namespace placekd
