#include "placekd/dataset.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "placekd/errors.h"

namespace placekd {
namespace fs = std::filesystem;

namespace {

constexpr const char* kManifestHeader = "id,rgb_path,seg_path,easting,northing,heading,split,seq_index";

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_double(const std::string& text, int line, const char* field) {
  try {
    std::size_t used = 0;
    double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw SchemaError("manifest line " + std::to_string(line) + ": field '" + field +
                      "' is not a finite number: '" + text + "'");
  }
}

fs::path resolve(const fs::path& base, const std::string& text) {
  if (text.empty()) return {};
  fs::path p(text);
  if (p.is_relative()) p = base / p;
  return p.lexically_normal();
}

std::string relative_to(const fs::path& base, const fs::path& p) {
  if (p.empty()) return {};
  if (p.is_absolute()) {
    fs::path rel = p.lexically_relative(base);
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  }
  return p.generic_string();
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

Pose Pose::make(double easting, double northing, double heading) {
  if (!std::isfinite(easting) || !std::isfinite(northing) || !std::isfinite(heading)) {
    throw SchemaError("pose fields must be finite");
  }
  double h = std::fmod(heading, 360.0);
  if (h < 0) h += 360.0;
  if (h >= 360.0) h = 0.0;
  return Pose{easting, northing, h};
}

double angle_difference(double a_deg, double b_deg) {
  double d = std::fmod(std::fabs(a_deg - b_deg), 360.0);
  return d > 180.0 ? 360.0 - d : d;
}

double planar_distance(const Pose& a, const Pose& b) {
  return std::hypot(a.easting - b.easting, a.northing - b.northing);
}

std::vector<PlaceRecord> load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open manifest " + path.string());
  const fs::path base = fs::absolute(path).parent_path();

  std::string line;
  if (!std::getline(in, line)) throw SchemaError("manifest " + path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader) {
    throw SchemaError("manifest line 1: expected header '" + std::string(kManifestHeader) + "'");
  }

  std::vector<PlaceRecord> records;
  std::unordered_set<std::string> seen;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 8) {
      throw SchemaError("manifest line " + std::to_string(line_no) + ": expected 8 fields, got " +
                        std::to_string(f.size()));
    }
    PlaceRecord r;
    r.id = f[0];
    if (r.id.empty()) throw SchemaError("manifest line " + std::to_string(line_no) + ": field 'id' is empty");
    if (!seen.insert(r.id).second) {
      throw SchemaError("manifest line " + std::to_string(line_no) + ": duplicate id '" + r.id + "'");
    }
    if (f[1].empty()) {
      throw SchemaError("manifest line " + std::to_string(line_no) + ": field 'rgb_path' is empty");
    }
    r.rgb_path = resolve(base, f[1]);
    r.seg_path = resolve(base, f[2]);
    const bool any_pose = !f[3].empty() || !f[4].empty() || !f[5].empty();
    if (any_pose) {
      if (f[3].empty() || f[4].empty() || f[5].empty()) {
        throw SchemaError("manifest line " + std::to_string(line_no) +
                          ": fields 'easting', 'northing', 'heading' must be given together");
      }
      r.pose = Pose::make(parse_double(f[3], line_no, "easting"), parse_double(f[4], line_no, "northing"),
                          parse_double(f[5], line_no, "heading"));
    }
    if (f[6] == "database") {
      r.split = Split::kDatabase;
    } else if (f[6] == "query") {
      r.split = Split::kQuery;
    } else {
      throw SchemaError("manifest line " + std::to_string(line_no) + ": field 'split' must be database|query, got '" +
                        f[6] + "'");
    }
    if (!f[7].empty()) {
      double v = parse_double(f[7], line_no, "seq_index");
      if (v < 0 || v != std::floor(v) || v > std::numeric_limits<int>::max()) {
        throw SchemaError("manifest line " + std::to_string(line_no) + ": field 'seq_index' must be an integer >= 0");
      }
      r.seq_index = static_cast<int>(v);
    }
    records.push_back(std::move(r));
  }
  return records;
}

void write_manifest(const fs::path& path, const std::vector<PlaceRecord>& records) {
  const fs::path base = fs::absolute(path).parent_path();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << kManifestHeader << '\n';
  for (const auto& r : records) {
    out << r.id << ',' << relative_to(base, r.rgb_path) << ',' << relative_to(base, r.seg_path) << ',';
    if (r.pose) {
      out << format_double(r.pose->easting) << ',' << format_double(r.pose->northing) << ','
          << format_double(r.pose->heading);
    } else {
      out << ",,";
    }
    out << ',' << (r.split == Split::kDatabase ? "database" : "query") << ',';
    if (r.seq_index) out << *r.seq_index;
    out << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + path.string());
}

void GroundTruthConfig::validate() const {
  if (!(radius_m > 0)) throw ConfigError("ground_truth.radius_m must be > 0");
  if (!(angle_deg > 0)) throw ConfigError("ground_truth.angle_deg must be > 0");
  if (frame_tol < 0) throw ConfigError("ground_truth.frame_tol must be >= 0");
}

std::string GroundTruthConfig::digest_string() const {
  std::ostringstream out;
  out << to_string(mode) << ":r=" << format_double(radius_m) << ":a=" << format_double(angle_deg)
      << ":f=" << frame_tol;
  return out.str();
}

GroundTruthMode parse_ground_truth_mode(const std::string& name) {
  if (name == "radius") return GroundTruthMode::kRadius;
  if (name == "radius_angle") return GroundTruthMode::kRadiusAngle;
  if (name == "frame_window") return GroundTruthMode::kFrameWindow;
  throw ConfigError("unknown ground-truth mode '" + name + "'");
}

std::string to_string(GroundTruthMode mode) {
  switch (mode) {
    case GroundTruthMode::kRadius: return "radius";
    case GroundTruthMode::kRadiusAngle: return "radius_angle";
    case GroundTruthMode::kFrameWindow: return "frame_window";
  }
  return "?";
}

double fov_overlap_distance(const Pose& q, const Pose& p) {
  return planar_distance(q, p) / 25.0 + angle_difference(q.heading, p.heading) / 40.0;
}

GroundTruth ground_truth_sets(const std::vector<PlaceRecord>& records, const GroundTruthConfig& cfg) {
  cfg.validate();
  std::vector<const PlaceRecord*> queries, database;
  for (const auto& r : records) {
    const bool frame = cfg.mode == GroundTruthMode::kFrameWindow;
    if (frame && !r.seq_index) throw ConfigError("record '" + r.id + "' lacks seq_index for frame_window ground truth");
    if (!frame && !r.pose) throw ConfigError("record '" + r.id + "' lacks a pose for " + to_string(cfg.mode) + " ground truth");
    (r.split == Split::kQuery ? queries : database).push_back(&r);
  }
  if (queries.empty() || database.empty()) {
    throw ConfigError("ground truth needs at least one query and one database record");
  }

  std::vector<std::set<std::string>> matches(queries.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const PlaceRecord& q = *queries[qi];
    for (const PlaceRecord* d : database) {
      bool hit = false;
      switch (cfg.mode) {
        case GroundTruthMode::kRadius:
          hit = planar_distance(*q.pose, *d->pose) <= cfg.radius_m;
          break;
        case GroundTruthMode::kRadiusAngle:
          hit = planar_distance(*q.pose, *d->pose) <= cfg.radius_m &&
                angle_difference(q.pose->heading, d->pose->heading) <= cfg.angle_deg;
          break;
        case GroundTruthMode::kFrameWindow:
          hit = std::abs(*q.seq_index - *d->seq_index) <= cfg.frame_tol;
          break;
      }
      if (hit) matches[qi].insert(d->id);
    }
  }
  GroundTruth gt;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) gt[queries[qi]->id] = std::move(matches[qi]);
  return gt;
}

const PlaceRecord& find_record(const std::vector<PlaceRecord>& records, const std::string& id) {
  for (const auto& r : records) {
    if (r.id == id) return r;
  }
  throw DataError("no record with id '" + id + "'");
}

namespace {

double squared_distance(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) throw DataError("descriptor dimension mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

std::vector<SamplePair> mine_positives(const std::vector<PlaceRecord>& records, const GroundTruthConfig& cfg,
                                       PositiveMining mode, const DescriptorProvider& provider) {
  if (mode == PositiveMining::kWeak && !provider) {
    throw ConfigError("weak positive mining requires a descriptor provider");
  }
  const GroundTruth gt = ground_truth_sets(records, cfg);
  std::unordered_map<std::string, const PlaceRecord*> by_id;
  for (const auto& r : records) by_id[r.id] = &r;

  std::vector<SamplePair> pairs;
  for (const auto& [qid, refs] : gt) {
    if (refs.empty()) continue;
    const PlaceRecord& q = *by_id.at(qid);
    std::vector<float> qdesc;
    if (mode == PositiveMining::kWeak) qdesc = provider(q);
    const std::string* best = nullptr;
    double best_score = std::numeric_limits<double>::infinity();
    // refs iterate in ascending id order, so strict < keeps the smallest id on ties.
    for (const auto& rid : refs) {
      const PlaceRecord& ref = *by_id.at(rid);
      double score;
      if (mode == PositiveMining::kWeak) {
        score = squared_distance(qdesc, provider(ref));
      } else if (q.pose && ref.pose) {
        score = fov_overlap_distance(*q.pose, *ref.pose);
      } else {
        // frame-window ground truth without poses: nearest frame
        score = std::abs(*q.seq_index - *ref.seq_index);
      }
      if (score < best_score) {
        best_score = score;
        best = &rid;
      }
    }
    pairs.push_back({qid, *best});
  }
  return pairs;
}

NegativeSample sample_negatives(const std::string& query_id, const std::vector<PlaceRecord>& records,
                                const GroundTruth& gt, int k, const DescriptorProvider& provider, int pool,
                                std::uint64_t seed) {
  if (k < 1) throw ConfigError("sample_negatives: k must be >= 1");
  if (pool < k) throw ConfigError("sample_negatives: pool must be >= k");
  if (!provider) throw ConfigError("sample_negatives requires a descriptor provider");
  auto it = gt.find(query_id);
  static const std::set<std::string> kEmpty;
  const std::set<std::string>& positives = it == gt.end() ? kEmpty : it->second;

  std::vector<const PlaceRecord*> candidates;
  const PlaceRecord* query = nullptr;
  for (const auto& r : records) {
    if (r.id == query_id) query = &r;
    if (r.split == Split::kDatabase && r.id != query_id && !positives.count(r.id)) candidates.push_back(&r);
  }
  if (!query) throw DataError("sample_negatives: unknown query '" + query_id + "'");
  std::sort(candidates.begin(), candidates.end(),
            [](const PlaceRecord* a, const PlaceRecord* b) { return a->id < b->id; });
  if (static_cast<int>(candidates.size()) > pool) {
    std::mt19937_64 rng(seed);
    std::shuffle(candidates.begin(), candidates.end(), rng);
    candidates.resize(static_cast<std::size_t>(pool));
  }

  const std::vector<float> qdesc = provider(*query);
  std::vector<std::pair<double, const PlaceRecord*>> scored;
  scored.reserve(candidates.size());
  for (const PlaceRecord* c : candidates) scored.emplace_back(squared_distance(qdesc, provider(*c)), c);
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : a.second->id < b.second->id;
  });

  NegativeSample out;
  out.exhausted = static_cast<int>(scored.size()) < k;
  for (std::size_t i = 0; i < scored.size() && static_cast<int>(i) < k; ++i) out.ids.push_back(scored[i].second->id);
  return out;
}

}  // namespace placekd
