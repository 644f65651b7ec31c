#include "placekd/slme.h"

#include <filesystem>
#include <fstream>
#include <numeric>

#include "placekd/errors.h"
#include "placekd/image_io.h"

namespace placekd {

void ClusterMap::validate() const {
  if (num_classes < 1) throw ConfigError("cluster map needs C >= 1");
  if (mapping.empty()) throw ConfigError("cluster map mapping is empty");
  for (std::size_t i = 0; i < mapping.size(); ++i) {
    if (mapping[i] < 0 || mapping[i] >= num_classes) {
      throw ConfigError("cluster map: raw class " + std::to_string(i) + " maps to " +
                        std::to_string(mapping[i]) + ", outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

void ClassWeights::validate() const {
  for (std::size_t c = 0; c < values.size(); ++c) {
    if (!(values[c] > 0)) throw ConfigError("class weight " + std::to_string(c) + " must be > 0");
  }
}

void SlmeScheme::validate() const {
  clusters.validate();
  weights.validate();
  if (static_cast<int>(weights.values.size()) != clusters.num_classes) {
    throw ConfigError("weights length " + std::to_string(weights.values.size()) + " != C " +
                      std::to_string(clusters.num_classes));
  }
  if (!names.empty() && static_cast<int>(names.size()) != clusters.num_classes) {
    throw ConfigError("names length must equal C");
  }
}

nlohmann::json SlmeScheme::to_json() const {
  return {{"C", clusters.num_classes}, {"names", names}, {"mapping", clusters.mapping}, {"weights", weights.values}};
}

SlmeScheme SlmeScheme::from_json(const nlohmann::json& j) {
  SlmeScheme s;
  try {
    s.clusters.num_classes = j.at("C").get<int>();
    s.clusters.mapping = j.at("mapping").get<std::vector<int>>();
    s.weights.values = j.at("weights").get<std::vector<float>>();
    if (j.contains("names")) s.names = j.at("names").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("slme scheme: ") + e.what());
  }
  s.validate();
  return s;
}

namespace {

SlmeScheme six_class(std::vector<float> weights) {
  SlmeScheme s;
  s.names = {"vegetation", "dynamic", "sky", "ground", "building", "other"};
  s.clusters.num_classes = kNumStructureClasses;
  s.clusters.mapping.resize(kNumStructureClasses);
  std::iota(s.clusters.mapping.begin(), s.clusters.mapping.end(), 0);
  s.weights.values = std::move(weights);
  return s;
}

}  // namespace

SlmeScheme default_scheme() { return six_class({0.5f, 0.5f, 1.0f, 1.0f, 2.0f, 2.0f}); }

SlmeScheme unweighted_scheme() { return six_class({1.0f, 1.0f, 1.0f, 1.0f, 1.0f, 1.0f}); }

SlmeScheme opposite_scheme() { return six_class({2.0f, 2.0f, 1.0f, 1.0f, 0.5f, 0.5f}); }

SlmeScheme three_class_scheme() {
  SlmeScheme s;
  s.names = {"sky_ground", "dynamic", "static"};
  s.clusters.num_classes = 3;
  s.clusters.mapping.assign(kNumStructureClasses, 2);
  s.clusters.mapping[kSky] = 0;
  s.clusters.mapping[kGround] = 0;
  s.clusters.mapping[kDynamic] = 1;
  s.weights.values = {1.0f, 1.0f, 1.0f};
  return s;
}

SlmeScheme identity_scheme(int raw_classes) {
  SlmeScheme s;
  s.clusters.num_classes = raw_classes;
  s.clusters.mapping.resize(static_cast<std::size_t>(raw_classes));
  std::iota(s.clusters.mapping.begin(), s.clusters.mapping.end(), 0);
  s.weights.values.assign(static_cast<std::size_t>(raw_classes), 1.0f);
  return s;
}

SlmeScheme scheme_by_name(const std::string& name) {
  if (name == "default") return default_scheme();
  if (name == "unweighted") return unweighted_scheme();
  if (name == "opposite") return opposite_scheme();
  if (name == "three_class") return three_class_scheme();
  if (name == "identity150") return identity_scheme(150);
  throw ConfigError("unknown slme scheme '" + name + "'");
}

SlmeScheme load_scheme(const std::string& path_or_name) {
  if (!std::filesystem::exists(path_or_name)) return scheme_by_name(path_or_name);
  std::ifstream in(path_or_name);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("slme scheme file " + path_or_name + ": " + e.what());
  }
  return SlmeScheme::from_json(j);
}

LabelMap cluster_labels(const LabelMap& raw, const ClusterMap& clusters) {
  LabelMap out(raw.height, raw.width);
  const int n = static_cast<int>(clusters.mapping.size());
  for (int y = 0; y < raw.height; ++y) {
    for (int x = 0; x < raw.width; ++x) {
      const int v = raw.at(y, x);
      if (v < 0 || v >= n) {
        throw EncodeError("raw label " + std::to_string(v) + " at pixel (" + std::to_string(y) + ", " +
                          std::to_string(x) + ") outside cluster map of size " + std::to_string(n));
      }
      out.at(y, x) = clusters.mapping[static_cast<std::size_t>(v)];
    }
  }
  return out;
}

Tensor3<float> encode(const LabelMap& clustered, const ClassWeights& weights) {
  const int classes = static_cast<int>(weights.values.size());
  Tensor3<float> out(classes, clustered.height, clustered.width);
  for (int y = 0; y < clustered.height; ++y) {
    for (int x = 0; x < clustered.width; ++x) {
      const int c = clustered.at(y, x);
      if (c < 0 || c >= classes) {
        throw EncodeError("clustered label " + std::to_string(c) + " at pixel (" + std::to_string(y) + ", " +
                          std::to_string(x) + ") outside [0, " + std::to_string(classes) + ")");
      }
      out.at(c, y, x) = weights.values[static_cast<std::size_t>(c)];
    }
  }
  return out;
}

LabelMap decode_argmax(const Tensor3<float>& encoded) {
  LabelMap out(encoded.height, encoded.width);
  for (int y = 0; y < encoded.height; ++y) {
    for (int x = 0; x < encoded.width; ++x) {
      int best = -1;
      float best_value = 0.0f;
      for (int c = 0; c < encoded.channels; ++c) {
        const float v = encoded.at(c, y, x);
        if (v > best_value) {
          best_value = v;
          best = c;
        }
      }
      if (best < 0) {
        throw EncodeError("pixel (" + std::to_string(y) + ", " + std::to_string(x) + ") has no positive channel");
      }
      out.at(y, x) = best;
    }
  }
  return out;
}

Tensor3<float> encode_label_map(const LabelMap& raw, const SlmeScheme& scheme, int height, int width) {
  return encode(cluster_labels(resize_nearest(raw, height, width), scheme.clusters), scheme.weights);
}

}  // namespace placekd
