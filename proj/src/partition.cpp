#include "placekd/partition.h"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "placekd/container.h"
#include "placekd/errors.h"

namespace placekd {
namespace fs = std::filesystem;

void PartitionConfig::validate() const {
  if (n_t < 1 || n_t > n_m) throw ConfigError("partition config needs 1 <= N_t <= N_m");
}

std::string to_string(Group g) { return "D" + std::to_string(static_cast<int>(g)); }

Group parse_group(const std::string& name) {
  if (name == "D1") return Group::kD1;
  if (name == "D2") return Group::kD2;
  if (name == "D3") return Group::kD3;
  if (name == "D4") return Group::kD4;
  throw FormatError("unknown group '" + name + "'");
}

Group assign_group(int x, int y, const PartitionConfig& cfg) {
  if (x > cfg.n_t) return Group::kD4;
  if (y > cfg.n_t) return Group::kD1;
  return x <= y ? Group::kD2 : Group::kD3;
}

RecallRanking compute_rankings(const DescriptorProvider& provider, const std::vector<PlaceRecord>& records,
                               const std::vector<SamplePair>& pairs, Branch branch) {
  std::vector<const PlaceRecord*> database;
  std::unordered_map<std::string, const PlaceRecord*> by_id;
  for (const auto& r : records) {
    by_id[r.id] = &r;
    if (r.split == Split::kDatabase) database.push_back(&r);
  }
  std::sort(database.begin(), database.end(),
            [](const PlaceRecord* a, const PlaceRecord* b) { return a->id < b->id; });

  std::unordered_map<std::string, std::size_t> db_index;
  for (std::size_t i = 0; i < database.size(); ++i) db_index[database[i]->id] = i;
  for (const auto& p : pairs) {
    if (!db_index.count(p.positive_id)) {
      throw DataError("pair (" + p.query_id + ", " + p.positive_id + "): positive is not in the database split");
    }
    if (!by_id.count(p.query_id)) throw DataError("pair (" + p.query_id + ", " + p.positive_id + "): unknown query");
  }

  std::vector<std::vector<float>> db_desc(database.size());
  for (std::size_t i = 0; i < database.size(); ++i) db_desc[i] = provider(*database[i]);
  std::map<std::string, std::vector<float>> query_desc;
  for (const auto& p : pairs) {
    if (!query_desc.count(p.query_id)) query_desc[p.query_id] = provider(*by_id.at(p.query_id));
  }

  auto sq_dist = [](const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) throw DataError("descriptor dimension mismatch");
    double s = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double d = static_cast<double>(a[k]) - b[k];
      s += d * d;
    }
    return s;
  };

  std::vector<int> ranks(pairs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& q = query_desc.at(pairs[i].query_id);
    const std::size_t pos = db_index.at(pairs[i].positive_id);
    const double target = sq_dist(q, db_desc[pos]);
    int rank = 1;
    for (std::size_t d = 0; d < database.size(); ++d) {
      if (d == pos) continue;
      const double dist = sq_dist(q, db_desc[d]);
      if (dist < target || (dist == target && d < pos)) ++rank;
    }
    ranks[i] = rank;
  }
  RecallRanking out;
  out.branch = branch;
  for (std::size_t i = 0; i < pairs.size(); ++i) out.ranks[pairs[i]] = ranks[i];
  return out;
}

const PartitionRow* PartitionTable::find(const SamplePair& pair) const {
  auto it = std::lower_bound(rows.begin(), rows.end(), pair,
                             [](const PartitionRow& r, const SamplePair& p) { return r.pair < p; });
  return it != rows.end() && it->pair == pair ? &*it : nullptr;
}

std::map<Group, std::size_t> PartitionTable::group_counts() const {
  std::map<Group, std::size_t> counts{{Group::kD1, 0}, {Group::kD2, 0}, {Group::kD3, 0}, {Group::kD4, 0}};
  for (const auto& r : rows) ++counts[r.group];
  return counts;
}

PartitionTable partition(const RecallRanking& seg, const RecallRanking& rgb, const PartitionConfig& cfg,
                         PartitionProvenance provenance) {
  cfg.validate();
  std::vector<std::string> diff;
  for (const auto& [pair, _] : seg.ranks) {
    if (!rgb.ranks.count(pair)) diff.push_back("(" + pair.query_id + "," + pair.positive_id + ") only in seg");
  }
  for (const auto& [pair, _] : rgb.ranks) {
    if (!seg.ranks.count(pair)) diff.push_back("(" + pair.query_id + "," + pair.positive_id + ") only in rgb");
  }
  if (!diff.empty()) {
    std::string msg = "seg and rgb rankings cover different pairs:";
    for (const auto& d : diff) msg += " " + d;
    throw DataError(msg);
  }
  PartitionTable t;
  t.cfg = cfg;
  t.provenance = std::move(provenance);
  for (const auto& [pair, x] : seg.ranks) {
    const int y = rgb.ranks.at(pair);
    t.rows.push_back({pair, x, y, assign_group(x, y, cfg)});
  }
  return t;
}

namespace {

fs::path sidecar(const fs::path& path) {
  fs::path p = path;
  p += ".json";
  return p;
}

}  // namespace

void save_partition(const PartitionTable& table, const fs::path& path) {
  std::ostringstream csv;
  csv << "query_id,positive_id,x,y,group\n";
  for (const auto& r : table.rows) {
    csv << r.pair.query_id << ',' << r.pair.positive_id << ',' << r.x << ',' << r.y << ',' << to_string(r.group)
        << '\n';
  }
  nlohmann::json meta = {{"N_t", table.cfg.n_t},
                         {"N_m", table.cfg.n_m},
                         {"seg_ckpt_digest", table.provenance.seg_ckpt_digest},
                         {"rgb_ckpt_digest", table.provenance.rgb_ckpt_digest}};
  write_text_atomic(path, csv.str());
  write_text_atomic(sidecar(path), meta.dump(2) + "\n");
}

PartitionTable load_partition(const fs::path& path, const std::optional<PartitionProvenance>& expected, bool strict,
                              std::vector<std::string>* warnings) {
  PartitionTable t;
  {
    std::ifstream in(sidecar(path));
    if (!in) throw LoadError("missing partition sidecar " + sidecar(path).string());
    try {
      nlohmann::json meta = nlohmann::json::parse(in);
      t.cfg.n_t = meta.at("N_t").get<int>();
      t.cfg.n_m = meta.at("N_m").get<int>();
      t.provenance.seg_ckpt_digest = meta.at("seg_ckpt_digest").get<std::string>();
      t.provenance.rgb_ckpt_digest = meta.at("rgb_ckpt_digest").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("partition sidecar " + sidecar(path).string() + ": " + e.what());
    }
  }
  if (expected && !(*expected == t.provenance)) {
    const std::string msg = "partition " + path.string() + " was computed from different stage-I checkpoints";
    if (strict) throw ProvenanceError(msg);
    if (warnings) warnings->push_back(msg);
  }

  std::ifstream in(path);
  if (!in) throw LoadError("cannot open partition " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "query_id,positive_id,x,y,group") throw FormatError(path.string() + ": bad partition header");
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) f.push_back(field);
    if (f.size() != 5) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 5 fields");
    PartitionRow r;
    r.pair = {f[0], f[1]};
    try {
      r.x = std::stoi(f[2]);
      r.y = std::stoi(f[3]);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": ranks must be integers");
    }
    r.group = parse_group(f[4]);
    if (r.group != assign_group(r.x, r.y, t.cfg)) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": group inconsistent with ranks");
    }
    t.rows.push_back(std::move(r));
  }
  std::sort(t.rows.begin(), t.rows.end(), [](const PartitionRow& a, const PartitionRow& b) { return a.pair < b.pair; });
  return t;
}

}  // namespace placekd
