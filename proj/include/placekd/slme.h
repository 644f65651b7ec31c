#pragma once

#include <string>
#include <vector>

#include "placekd/tensor.h"
#include <json.hpp>

namespace placekd {

// Raw segmentation class index -> clustered class index in [0, num_classes).
struct ClusterMap {
  int num_classes = 0;
  std::vector<int> mapping;

  void validate() const;
  bool operator==(const ClusterMap&) const = default;
};

// Encoding magnitude of each clustered class; all strictly positive.
struct ClassWeights {
  std::vector<float> values;

  void validate() const;
  bool operator==(const ClassWeights&) const = default;
};

// A complete label-map encoding: which raw classes merge and how loudly each
// merged class is written into its channel. Serialized as
// {"C": int, "names": [...], "mapping": [...], "weights": [...]}.
struct SlmeScheme {
  std::vector<std::string> names;
  ClusterMap clusters;
  ClassWeights weights;

  int num_classes() const { return clusters.num_classes; }
  void validate() const;

  nlohmann::json to_json() const;
  static SlmeScheme from_json(const nlohmann::json& j);
  bool operator==(const SlmeScheme&) const = default;
};

// Channel order of the six clustered classes used throughout the project.
enum StructureClass : int {
  kVegetation = 0,
  kDynamic = 1,
  kSky = 2,
  kGround = 3,
  kBuilding = 4,
  kOther = 5,
};
inline constexpr int kNumStructureClasses = 6;

// Six clustered classes weighted (0.5, 0.5, 1, 1, 2, 2).
SlmeScheme default_scheme();
// Same clusters, all weights 1.
SlmeScheme unweighted_scheme();
// Six classes with the weights flipped: dynamic/vegetation 2, building/other 0.5.
SlmeScheme opposite_scheme();
// Six raw classes merged into {sky&ground, dynamic, static}.
SlmeScheme three_class_scheme();
// Identity over `raw_classes` raw indices (150 by default), unit weights.
SlmeScheme identity_scheme(int raw_classes = 150);

// Looks up "default", "unweighted", "opposite", "three_class", "identity150".
SlmeScheme scheme_by_name(const std::string& name);
SlmeScheme load_scheme(const std::string& path_or_name);

LabelMap cluster_labels(const LabelMap& raw, const ClusterMap& clusters);
Tensor3<float> encode(const LabelMap& clustered, const ClassWeights& weights);
LabelMap decode_argmax(const Tensor3<float>& encoded);

// Nearest-neighbor resize to (height, width), cluster, then encode.
Tensor3<float> encode_label_map(const LabelMap& raw, const SlmeScheme& scheme, int height, int width);

}  // namespace placekd
