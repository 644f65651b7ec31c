#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "placekd/dataset.h"
#include "placekd/inputs.h"
#include "placekd/model.h"

namespace placekd {

using DescriptorTable = std::map<std::string, std::vector<float>>;

// Descriptors for every record, computed in parallel. Inputs come from the
// cache when given, otherwise straight from disk.
DescriptorTable extract_descriptors(const Model<float>& model, const std::vector<PlaceRecord>& records,
                                    const InputCache* cache = nullptr);

DescriptorProvider table_provider(const DescriptorTable& table);

struct RetrievalIndex {
  std::vector<std::string> ids;  // ascending
  int dim = 0;
  std::vector<float> matrix;  // ids.size() x dim, row-major
  std::string model_digest;

  std::size_t size() const { return ids.size(); }
  std::span<const float> row(std::size_t i) const {
    return {matrix.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }
  // Rows must be unit norm within 1e-6.
  void validate() const;
  bool operator==(const RetrievalIndex&) const = default;
};

// Index over the database split of `records`, rows ordered by id.
RetrievalIndex build_index(const Model<float>& model, const std::vector<PlaceRecord>& records,
                           const std::string& model_digest, const InputCache* cache = nullptr);
RetrievalIndex index_from_table(const DescriptorTable& table, const std::vector<PlaceRecord>& records,
                                const std::string& model_digest);

// Top-k database ids by ascending L2 distance, ties by id.
std::vector<std::string> retrieve(const RetrievalIndex& index, std::span<const float> query, int k);

struct RecallReport {
  std::vector<int> ns;
  std::vector<double> recalls;
  int num_queries = 0;   // queries with nonempty ground truth
  int num_excluded = 0;  // queries with empty ground truth
  std::string gt_digest;
  std::vector<std::string> warnings;

  double at(int n) const;
  nlohmann::json to_json() const;
  std::string to_csv() const;
};

// Fraction of queries whose top-N contains a ground-truth reference.
RecallReport recall_at_n(const RetrievalIndex& index, const DescriptorTable& queries, const GroundTruth& gt,
                         std::vector<int> ns = {1, 5, 10}, const std::string& gt_digest = "");

struct LatencyReport {
  double mean_ms = 0;
  double p50_ms = 0;
  double p95_ms = 0;
  int reps = 0;
  double matching_s_per_query = 0;
  std::string environment;

  nlohmann::json to_json() const;
};

// Nearest-rank order statistics of raw samples (milliseconds).
LatencyReport latency_from_samples(std::vector<double> samples_ms);

LatencyReport bench_latency(const Model<float>& model, const std::vector<PlaceRecord>& records, int warmup,
                            int reps);

inline constexpr int kDescriptorFormatVersion = 1;

void save_descriptors(const RetrievalIndex& index, const std::filesystem::path& path);
// When `expected_digest` is given and differs: strict throws ProvenanceError,
// otherwise a warning is appended.
RetrievalIndex load_descriptors(const std::filesystem::path& path,
                                const std::optional<std::string>& expected_digest = std::nullopt, bool strict = true,
                                std::vector<std::string>* warnings = nullptr);

}  // namespace placekd
