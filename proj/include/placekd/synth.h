#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "placekd/dataset.h"

namespace placekd {

// Procedural street scenes. Each place has a fixed layout of class regions
// (sky, ground, buildings, vegetation, poles/signs, vehicles) drawn with a
// place-specific palette and a per-class texture. Views of a place differ by
// a small translation plus photometric nuisance; corrupted queries are re-rendered with a freshly drawn
// palette, low light and heavy noise while their label maps stay clean.
struct SynthConfig {
  int n_places = 200;
  int views_per_place = 3;  // view 0 goes to the database, the rest are queries
  int height = 32;
  int width = 32;
  double corrupt_fraction = 0.5;
  double color_jitter = 0.08;         // per-channel gain range
  double illumination_shift = 0.10;   // brightness offset range, fraction of 255
  double occluder_density = 0.2;      // expected occluders per view
  double noise_sigma = 4.0;           // gray levels
  int geometric_jitter_px = 1;        // max translation between views
  double train_fraction = 0.5;
  double val_fraction = 0.15;
  double place_spacing_m = 100.0;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j, SynthConfig defaults);
  static SynthConfig from_json(const nlohmann::json& j) { return from_json(j, SynthConfig{}); }
};

struct SynthOutput {
  std::filesystem::path root;
  std::filesystem::path train_manifest, val_manifest, test_manifest, meta_path;
  std::vector<PlaceRecord> train, val, test;
  std::set<std::string> corrupted;  // query ids with severe appearance corruption
};

// Writes rgb/*.ppm, seg/*.pgm, {train,val,test}.csv and synth_meta.json under
// `out_dir`. On failure every file written so far is removed.
SynthOutput synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_dir);

// Reads the manifests and metadata written by synth_generate.
SynthOutput load_synth(const std::filesystem::path& out_dir);

}  // namespace placekd
