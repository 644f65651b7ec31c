#include "placekd/retrieval.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include <omp.h>

#include "placekd/container.h"
#include "placekd/errors.h"
#include "placekd/kernels.h"

namespace placekd {

DescriptorTable extract_descriptors(const Model<float>& model, const std::vector<PlaceRecord>& records,
                                    const InputCache* cache) {
  std::vector<std::vector<float>> out(records.size());
  std::vector<std::string> errors(records.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < records.size(); ++i) {
    try {
      if (cache) {
        out[i] = model.describe(cache->get(records[i].id));
      } else {
        out[i] = model.describe(load_input(records[i], model.input, model.kind));
      }
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!errors[i].empty()) throw LoadError("record '" + records[i].id + "': " + errors[i]);
  }
  DescriptorTable table;
  for (std::size_t i = 0; i < records.size(); ++i) table[records[i].id] = std::move(out[i]);
  return table;
}

DescriptorProvider table_provider(const DescriptorTable& table) {
  return [&table](const PlaceRecord& r) {
    auto it = table.find(r.id);
    if (it == table.end()) throw DataError("no descriptor for record '" + r.id + "'");
    return it->second;
  };
}

void RetrievalIndex::validate() const {
  if (matrix.size() != ids.size() * static_cast<std::size_t>(dim)) {
    throw FormatError("index matrix shape does not match id count");
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    double sq = 0;
    for (float v : row(i)) sq += static_cast<double>(v) * v;
    if (std::fabs(std::sqrt(sq) - 1.0) > 1e-6) throw FormatError("index row '" + ids[i] + "' is not unit norm");
  }
}

RetrievalIndex index_from_table(const DescriptorTable& table, const std::vector<PlaceRecord>& records,
                                const std::string& model_digest) {
  std::vector<std::string> ids;
  for (const auto& r : records) {
    if (r.split == Split::kDatabase) ids.push_back(r.id);
  }
  std::sort(ids.begin(), ids.end());
  RetrievalIndex index;
  index.model_digest = model_digest;
  for (const auto& id : ids) {
    auto it = table.find(id);
    if (it == table.end()) throw DataError("no descriptor for database record '" + id + "'");
    if (index.ids.empty()) index.dim = static_cast<int>(it->second.size());
    if (static_cast<int>(it->second.size()) != index.dim) throw DataError("descriptor dims differ within the index");
    index.matrix.insert(index.matrix.end(), it->second.begin(), it->second.end());
    index.ids.push_back(id);
  }
  return index;
}

RetrievalIndex build_index(const Model<float>& model, const std::vector<PlaceRecord>& records,
                           const std::string& model_digest, const InputCache* cache) {
  std::vector<PlaceRecord> database;
  for (const auto& r : records) {
    if (r.split == Split::kDatabase) database.push_back(r);
  }
  RetrievalIndex index = index_from_table(extract_descriptors(model, database, cache), database, model_digest);
  index.validate();
  return index;
}

namespace {

// Positions sorted by (distance, id); ids are ascending so index order breaks ties.
std::vector<std::size_t> ranked_positions(std::span<const float> distances) {
  std::vector<std::size_t> order(distances.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return distances[a] < distances[b]; });
  return order;
}

}  // namespace

std::vector<std::string> retrieve(const RetrievalIndex& index, std::span<const float> query, int k) {
  if (static_cast<int>(query.size()) != index.dim) {
    throw QueryError("query dim " + std::to_string(query.size()) + " != index dim " + std::to_string(index.dim));
  }
  if (k < 0 || k > static_cast<int>(index.size())) {
    throw QueryError("k=" + std::to_string(k) + " exceeds database size " + std::to_string(index.size()));
  }
  const std::vector<float> d = kernels::parallel::pairwise_sq_l2(query, index.matrix, index.dim);
  const std::vector<std::size_t> order = ranked_positions(d);
  std::vector<std::string> out;
  for (int i = 0; i < k; ++i) out.push_back(index.ids[order[static_cast<std::size_t>(i)]]);
  return out;
}

double RecallReport::at(int n) const {
  for (std::size_t i = 0; i < ns.size(); ++i) {
    if (ns[i] == n) return recalls[i];
  }
  throw QueryError("report has no Recall@" + std::to_string(n));
}

nlohmann::json RecallReport::to_json() const {
  nlohmann::json recall = nlohmann::json::object();
  for (std::size_t i = 0; i < ns.size(); ++i) recall["R@" + std::to_string(ns[i])] = recalls[i];
  return {{"recall", recall},
          {"num_queries", num_queries},
          {"num_excluded", num_excluded},
          {"gt_digest", gt_digest},
          {"warnings", warnings}};
}

std::string RecallReport::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "n,recall,num_queries\n";
  for (std::size_t i = 0; i < ns.size(); ++i) out << ns[i] << ',' << recalls[i] << ',' << num_queries << '\n';
  return out.str();
}

RecallReport recall_at_n(const RetrievalIndex& index, const DescriptorTable& queries, const GroundTruth& gt,
                         std::vector<int> ns, const std::string& gt_digest) {
  RecallReport report;
  report.gt_digest = gt_digest;
  std::sort(ns.begin(), ns.end());
  ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
  for (int& n : ns) {
    if (n < 1) throw QueryError("Recall@N needs N >= 1");
    if (n > static_cast<int>(index.size())) {
      report.warnings.push_back("N=" + std::to_string(n) + " clamped to database size " +
                                std::to_string(index.size()));
    }
  }
  report.ns = ns;

  std::vector<const std::vector<float>*> qdesc;
  std::vector<const std::set<std::string>*> qgt;
  for (const auto& [id, desc] : queries) {
    auto it = gt.find(id);
    if (it == gt.end()) throw QueryError("query '" + id + "' has no ground-truth entry");
    if (it->second.empty()) {
      ++report.num_excluded;
      continue;
    }
    if (static_cast<int>(desc.size()) != index.dim) throw QueryError("query '" + id + "' has the wrong dim");
    qdesc.push_back(&desc);
    qgt.push_back(&it->second);
  }
  report.num_queries = static_cast<int>(qdesc.size());

  // 0-based position of the first ground-truth hit in each ranked list.
  std::vector<std::size_t> first_hit(qdesc.size(), index.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t q = 0; q < qdesc.size(); ++q) {
    const std::vector<float> d = kernels::serial::pairwise_sq_l2(*qdesc[q], index.matrix, index.dim);
    const std::vector<std::size_t> order = ranked_positions(d);
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      if (qgt[q]->count(index.ids[order[pos]])) {
        first_hit[q] = pos;
        break;
      }
    }
  }
  for (int n : ns) {
    const std::size_t limit = std::min<std::size_t>(static_cast<std::size_t>(n), index.size());
    const auto hits = std::count_if(first_hit.begin(), first_hit.end(), [&](std::size_t p) { return p < limit; });
    report.recalls.push_back(report.num_queries ? static_cast<double>(hits) / report.num_queries : 0.0);
  }
  return report;
}

nlohmann::json LatencyReport::to_json() const {
  return {{"extraction_ms", {{"mean", mean_ms}, {"p50", p50_ms}, {"p95", p95_ms}, {"reps", reps}}},
          {"matching_s_per_query", matching_s_per_query},
          {"environment", environment}};
}

LatencyReport latency_from_samples(std::vector<double> samples_ms) {
  if (samples_ms.empty()) throw ConfigError("latency needs at least one sample");
  LatencyReport r;
  r.reps = static_cast<int>(samples_ms.size());
  r.mean_ms = std::accumulate(samples_ms.begin(), samples_ms.end(), 0.0) / samples_ms.size();
  std::sort(samples_ms.begin(), samples_ms.end());
  auto nearest_rank = [&](double p) {
    const auto k = static_cast<std::size_t>(std::ceil(p * samples_ms.size()));
    return samples_ms[std::clamp<std::size_t>(k, 1, samples_ms.size()) - 1];
  };
  r.p50_ms = nearest_rank(0.50);
  r.p95_ms = nearest_rank(0.95);
  return r;
}

LatencyReport bench_latency(const Model<float>& model, const std::vector<PlaceRecord>& records, int warmup,
                            int reps) {
  if (reps < 1) throw ConfigError("bench: reps must be >= 1");
  if (records.empty()) throw ConfigError("bench: no images");
  using Clock = std::chrono::steady_clock;
  std::vector<ModelInput> inputs;
  for (const auto& r : records) inputs.push_back(load_input(r, model.input, model.kind));

  for (int i = 0; i < warmup; ++i) model.describe(inputs[static_cast<std::size_t>(i) % inputs.size()]);
  std::vector<double> samples;
  std::vector<std::vector<float>> descriptors;
  for (int i = 0; i < reps; ++i) {
    const auto& in = inputs[static_cast<std::size_t>(i) % inputs.size()];
    const auto t0 = Clock::now();
    std::vector<float> d = model.describe(in);
    const auto t1 = Clock::now();
    samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    if (descriptors.size() < inputs.size()) descriptors.push_back(std::move(d));
  }
  LatencyReport report = latency_from_samples(samples);

  RetrievalIndex index;
  index.dim = static_cast<int>(descriptors.front().size());
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    index.ids.push_back(records[i].id);
    index.matrix.insert(index.matrix.end(), descriptors[i].begin(), descriptors[i].end());
  }
  const auto t0 = Clock::now();
  for (const auto& d : descriptors) retrieve(index, d, static_cast<int>(std::min<std::size_t>(10, index.size())));
  const auto t1 = Clock::now();
  report.matching_s_per_query = std::chrono::duration<double>(t1 - t0).count() / descriptors.size();

  std::ostringstream env;
  env << "omp_max_threads=" << omp_get_max_threads() << " hardware_concurrency=" << std::thread::hardware_concurrency()
      << " compiler=" << __VERSION__;
  report.environment = env.str();
  return report;
}

void save_descriptors(const RetrievalIndex& index, const std::filesystem::path& path) {
  nlohmann::json header = {{"format", "placekd-descriptors"},
                           {"format_version", kDescriptorFormatVersion},
                           {"dim", index.dim},
                           {"count", index.size()},
                           {"model_digest", index.model_digest},
                           {"ids", index.ids}};
  write_container(path, header, index.matrix);
}

RetrievalIndex load_descriptors(const std::filesystem::path& path, const std::optional<std::string>& expected_digest,
                                bool strict, std::vector<std::string>* warnings) {
  Container c = read_container(path);
  RetrievalIndex index;
  try {
    if (c.header.at("format").get<std::string>() != "placekd-descriptors") {
      throw FormatError(path.string() + " is not a descriptor file");
    }
    if (c.header.at("format_version").get<int>() != kDescriptorFormatVersion) {
      throw FormatError(path.string() + ": unsupported descriptor format version");
    }
    index.dim = c.header.at("dim").get<int>();
    index.ids = c.header.at("ids").get<std::vector<std::string>>();
    index.model_digest = c.header.at("model_digest").get<std::string>();
    if (c.header.at("count").get<std::size_t>() != index.ids.size()) throw FormatError(path.string() + ": bad count");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": corrupt header: " + e.what());
  }
  if (c.body.size() != index.ids.size() * static_cast<std::size_t>(index.dim)) {
    throw FormatError(path.string() + ": body size does not match header");
  }
  index.matrix = std::move(c.body);
  if (expected_digest && *expected_digest != index.model_digest) {
    const std::string msg = path.string() + ": descriptors come from a different model";
    if (strict) throw ProvenanceError(msg);
    if (warnings) warnings->push_back(msg);
  }
  return index;
}

}  // namespace placekd
