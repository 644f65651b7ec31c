#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace placekd {

// Planar pose: coordinates in meters, heading in degrees normalized to [0, 360).
struct Pose {
  double easting = 0.0;
  double northing = 0.0;
  double heading = 0.0;

  static Pose make(double easting, double northing, double heading);
  bool operator==(const Pose&) const = default;
};

// Absolute angular difference wrapped into [0, 180].
double angle_difference(double a_deg, double b_deg);
double planar_distance(const Pose& a, const Pose& b);

enum class Split { kDatabase, kQuery };

struct PlaceRecord {
  std::string id;
  std::filesystem::path rgb_path;
  std::filesystem::path seg_path;  // empty when absent
  std::optional<Pose> pose;
  Split split = Split::kDatabase;
  std::optional<int> seq_index;

  bool operator==(const PlaceRecord&) const = default;
};

// Manifest CSV: id,rgb_path,seg_path,easting,northing,heading,split,seq_index.
// Relative paths are resolved against the manifest's directory on load and
// written relative to it when possible.
std::vector<PlaceRecord> load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<PlaceRecord>& records);

enum class GroundTruthMode { kRadius, kRadiusAngle, kFrameWindow };

struct GroundTruthConfig {
  GroundTruthMode mode = GroundTruthMode::kRadius;
  double radius_m = 25.0;
  double angle_deg = 40.0;
  int frame_tol = 2;

  void validate() const;
  std::string digest_string() const;
};

GroundTruthMode parse_ground_truth_mode(const std::string& name);
std::string to_string(GroundTruthMode mode);

// ||dx|| / 25 + dtheta / 40 with the angle wrapped into [0, 180].
double fov_overlap_distance(const Pose& q, const Pose& p);
inline bool fov_qualifies(const Pose& q, const Pose& p) { return fov_overlap_distance(q, p) < 1.0; }

// query id -> ids of database records satisfying the ground-truth predicate.
// Every query appears as a key, possibly with an empty set.
using GroundTruth = std::map<std::string, std::set<std::string>>;

GroundTruth ground_truth_sets(const std::vector<PlaceRecord>& records, const GroundTruthConfig& cfg);

struct SamplePair {
  std::string query_id;
  std::string positive_id;

  auto operator<=>(const SamplePair&) const = default;
  bool operator==(const SamplePair&) const = default;
};

using DescriptorProvider = std::function<std::vector<float>(const PlaceRecord&)>;

enum class PositiveMining { kFovBest, kWeak };

// Pairs are ordered by query id. Queries with empty ground truth are skipped.
std::vector<SamplePair> mine_positives(const std::vector<PlaceRecord>& records,
                                       const GroundTruthConfig& cfg, PositiveMining mode,
                                       const DescriptorProvider& provider = {});

struct NegativeSample {
  std::vector<std::string> ids;  // nearest first
  bool exhausted = false;        // fewer than k valid negatives existed
};

// k nearest non-ground-truth database records (descriptor space) among a
// random candidate pool of size `pool`; ties broken by id.
NegativeSample sample_negatives(const std::string& query_id, const std::vector<PlaceRecord>& records,
                                const GroundTruth& gt, int k, const DescriptorProvider& provider,
                                int pool, std::uint64_t seed);

const PlaceRecord& find_record(const std::vector<PlaceRecord>& records, const std::string& id);

}  // namespace placekd
