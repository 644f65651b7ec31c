#include "placekd/experiment.h"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "placekd/checkpoint.h"
#include "placekd/container.h"
#include "placekd/digest.h"
#include "placekd/errors.h"

namespace placekd {
namespace fs = std::filesystem;

nlohmann::json EvalSummary::to_json() const {
  nlohmann::json j = {{"all", all.to_json()}};
  if (corrupted) j["corrupted"] = corrupted->to_json();
  if (clean) j["clean"] = clean->to_json();
  return j;
}

GroundTruth restrict_queries(const GroundTruth& gt, const std::set<std::string>& ids, bool keep) {
  GroundTruth out;
  for (const auto& [q, refs] : gt) {
    if ((ids.count(q) > 0) == keep) out.emplace(q, refs);
  }
  return out;
}

EvalSummary evaluate_model(const Model<float>& model, const std::vector<PlaceRecord>& records,
                           const GroundTruthConfig& gt_cfg, const std::vector<int>& ns,
                           const std::set<std::string>* corrupted, const InputCache* cache) {
  const DescriptorTable table = extract_descriptors(model, records, cache);
  const RetrievalIndex index = index_from_table(table, records, "");
  DescriptorTable queries;
  for (const auto& r : records) {
    if (r.split == Split::kQuery) queries.emplace(r.id, table.at(r.id));
  }
  const GroundTruth gt = ground_truth_sets(records, gt_cfg);
  const std::string digest = sha256_hex(gt_cfg.digest_string());
  EvalSummary s;
  s.all = recall_at_n(index, queries, gt, ns, digest);
  if (corrupted) {
    auto subset = [&](bool keep) {
      DescriptorTable q;
      for (const auto& [id, d] : queries) {
        if ((corrupted->count(id) > 0) == keep) q.emplace(id, d);
      }
      return recall_at_n(index, q, restrict_queries(gt, *corrupted, keep), ns, digest);
    };
    s.corrupted = subset(true);
    s.clean = subset(false);
  }
  return s;
}

nlohmann::json ExperimentResult::to_json() const {
  nlohmann::json models_json = nlohmann::json::object();
  for (const auto& [name, s] : models) models_json[name] = s.to_json();
  nlohmann::json groups = nlohmann::json::object();
  for (const auto& [g, n] : group_counts) groups[to_string(g)] = n;
  return {{"models", models_json}, {"partition_groups", groups}};
}

std::string ExperimentResult::to_csv() const {
  std::ostringstream out;
  out << "model,subset,n,recall,num_queries\n";
  char buf[64];
  for (const auto& [name, s] : models) {
    auto rows = [&](const char* subset, const RecallReport& r) {
      for (std::size_t i = 0; i < r.ns.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.6f", r.recalls[i]);
        out << name << ',' << subset << ',' << r.ns[i] << ',' << buf << ',' << r.num_queries << '\n';
      }
    };
    rows("all", s.all);
    if (s.corrupted) rows("corrupted", *s.corrupted);
    if (s.clean) rows("clean", *s.clean);
  }
  return out.str();
}

fs::path synth_data_dir(const SynthConfig& cfg, const fs::path& out_dir) {
  const char* cache = std::getenv("PLACEKD_CACHE_DIR");
  if (!cache || !*cache) return out_dir / "data";
  return fs::path(cache) / ("synth-" + sha256_hex(cfg.to_json().dump()).substr(0, 16));
}

namespace {

SynthOutput prepare_synth(const SynthConfig& cfg, const fs::path& out_dir) {
  const fs::path dir = synth_data_dir(cfg, out_dir);
  const fs::path stamp = dir / "synth_config.json";
  if (fs::exists(stamp)) {
    std::ifstream in(stamp);
    std::stringstream ss;
    ss << in.rdbuf();
    if (ss.str() == cfg.to_json().dump(2)) return load_synth(dir);
  }
  if (fs::exists(dir)) fs::remove_all(dir);
  SynthOutput out = synth_generate(cfg, dir);
  write_text_atomic(stamp, cfg.to_json().dump(2));
  return out;
}

void write_stage(const fs::path& dir, const TrainResult& r, const nlohmann::json& run) {
  fs::create_directories(dir);
  write_text_atomic(dir / "config.json", run.dump(2) + "\n");
  save_checkpoint(r.model, dir / "checkpoint.bin");
  write_text_atomic(dir / "metrics.csv", metrics_csv(r.metrics));
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir, bool verbose) {
  auto log = [&](const std::string& msg) {
    if (verbose) std::cerr << "[experiment] " << msg << std::endl;
  };
  fs::create_directories(out_dir);
  write_text_atomic(out_dir / "config.json", cfg.to_json().dump(2) + "\n");

  std::vector<PlaceRecord> train, val, test;
  std::set<std::string> corrupted;
  bool have_corruption = false;
  if (cfg.dataset.synth) {
    log("preparing synthetic dataset");
    SynthOutput s = prepare_synth(*cfg.dataset.synth, out_dir);
    train = std::move(s.train);
    val = std::move(s.val);
    test = std::move(s.test);
    corrupted = std::move(s.corrupted);
    have_corruption = true;
  } else {
    train = load_manifest(cfg.dataset.train_manifest);
    val = load_manifest(cfg.dataset.val_manifest);
    test = load_manifest(cfg.dataset.test_manifest);
  }

  const InputSpec input = cfg.input_spec();
  InputCache cache(input);
  TrainingData data{train, val, cfg.dataset.ground_truth, &cache};
  const StageConfig s1 = cfg.stage1_config();

  log("stage I seg branch");
  TrainResult seg = train_stage1(Branch::kSeg, data, s1, input, cfg.model.rgb, cfg.model.seg);
  write_stage(out_dir / "stage1_seg", seg, {{"experiment", cfg.to_json()}, {"run", {{"stage", 1}, {"branch", "seg"}}}});
  log("stage I rgb branch");
  TrainResult rgb = train_stage1(Branch::kRgb, data, s1, input, cfg.model.rgb, cfg.model.seg);
  write_stage(out_dir / "stage1_rgb", rgb, {{"experiment", cfg.to_json()}, {"run", {{"stage", 1}, {"branch", "rgb"}}}});

  log("partitioning sample pairs");
  const std::vector<SamplePair> pairs = mine_positives(train, cfg.dataset.ground_truth, s1.positives);
  cache.preload(train, ModelKind::kSeg);
  cache.preload(train, ModelKind::kRgb);
  const DescriptorTable seg_table = extract_descriptors(seg.model, train, &cache);
  const DescriptorTable rgb_table = extract_descriptors(rgb.model, train, &cache);
  const RecallRanking xs = compute_rankings(table_provider(seg_table), train, pairs, Branch::kSeg);
  const RecallRanking ys = compute_rankings(table_provider(rgb_table), train, pairs, Branch::kRgb);
  const PartitionTable table = partition(
      xs, ys, cfg.partition,
      {sha256_file(out_dir / "stage1_seg" / "checkpoint.bin"), sha256_file(out_dir / "stage1_rgb" / "checkpoint.bin")});
  save_partition(table, out_dir / "partition.csv");

  ExperimentResult result;
  result.group_counts = table.group_counts();
  const std::set<std::string>* subset = have_corruption ? &corrupted : nullptr;
  result.models["stage1_rgb"] = evaluate_model(rgb.model, test, cfg.dataset.ground_truth, cfg.eval.ns, subset);
  result.models["stage1_seg"] = evaluate_model(seg.model, test, cfg.dataset.ground_truth, cfg.eval.ns, subset);

  const StageConfig s2 = cfg.stage2_config();
  for (const auto& name : cfg.stage2.schemes) {
    const WeightScheme scheme = cfg.stage2.scheme(name, cfg.partition);
    log("stage II scheme " + name);
    Stage2Options opts;
    opts.transform_bias = cfg.model.transform_bias;
    opts.transform_renormalize = cfg.model.transform_renormalize;
    if (cfg.stage2.init_from_rgb) opts.init_from = &rgb.model;
    TrainResult student = train_stage2(data, seg.model, weight_table(table, scheme), s2, input, cfg.model.rgb, opts);
    const std::string key = "stage2_" + scheme.name();
    write_stage(out_dir / key, student,
                {{"experiment", cfg.to_json()}, {"run", {{"stage", 2}, {"weight_scheme", scheme.name()}}}});
    result.models[key] = evaluate_model(student.model, test, cfg.dataset.ground_truth, cfg.eval.ns, subset);
  }

  result.report_json = out_dir / "report.json";
  result.report_csv = out_dir / "report.csv";
  write_text_atomic(result.report_json, result.to_json().dump(2) + "\n");
  write_text_atomic(result.report_csv, result.to_csv());
  return result;
}

}  // namespace placekd
