#include "placekd/cli.h"

#include <omp.h>

#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "placekd/checkpoint.h"
#include "placekd/config.h"
#include "placekd/container.h"
#include "placekd/digest.h"
#include "placekd/errors.h"
#include "placekd/experiment.h"
#include "placekd/image_io.h"

namespace placekd {
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string slme_scheme;
};

ExperimentConfig resolve_config(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig::from_json(nlohmann::json::object())
                                          : ExperimentConfig::load(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.slme_scheme.empty()) {
    cfg.slme = load_scheme(c.slme_scheme);
    cfg.model.seg.input_channels = cfg.slme.num_classes();
  }
  return cfg;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "experiment config JSON");
  sub->add_option("--seed", c.seed, "overrides the config seed");
  sub->add_option("--slme-scheme", c.slme_scheme, "SLME preset name or scheme JSON file");
}

std::vector<int> parse_ns(const std::string& text) {
  std::vector<int> ns;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      const int n = std::stoi(tok, &used);
      if (used != tok.size() || n < 1) throw std::invalid_argument(tok);
      ns.push_back(n);
    } catch (const std::logic_error&) {
      throw UsageError("--ns expects comma-separated positive integers, got '" + text + "'");
    }
  }
  if (ns.empty()) throw UsageError("--ns is empty");
  return ns;
}

void write_stage_outputs(const fs::path& dir, const TrainResult& r, const ExperimentConfig& cfg,
                         const nlohmann::json& run, std::ostream& out) {
  fs::create_directories(dir);
  write_text_atomic(dir / "config.json", nlohmann::json{{"experiment", cfg.to_json()}, {"run", run}}.dump(2) + "\n");
  save_checkpoint(r.model, dir / "checkpoint.bin");
  write_text_atomic(dir / "metrics.csv", metrics_csv(r.metrics));
  nlohmann::json summary = {{"checkpoint", (dir / "checkpoint.bin").string()},
                            {"best_epoch", r.best_epoch},
                            {"best_val_r5", r.best_val_r5}};
  out << summary.dump() << "\n";
}

std::set<std::string> load_corrupted_ids(const fs::path& meta) {
  std::ifstream in(meta);
  if (!in) throw IoError("cannot open " + meta.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    return j.at("corrupted").get<std::set<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("synth metadata " + meta.string() + " is malformed: " + e.what());
  }
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"placekd: structure-guided knowledge distillation for place recognition"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (0 = OpenMP default)")->check(CLI::NonNegativeNumber);

  Common common;
  std::function<void()> action;

  // synth-gen
  auto* synth = app.add_subcommand("synth-gen", "generate a synthetic paired RGB/segmentation dataset");
  std::string synth_out;
  std::optional<int> places, views;
  std::optional<double> corrupt;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--places", places);
  synth->add_option("--views", views);
  synth->add_option("--corrupt-fraction", corrupt);
  add_common(synth, common);
  synth->callback([&] {
    action = [&] {
      const ExperimentConfig cfg = resolve_config(common);
      SynthConfig s = cfg.dataset.synth.value_or(SynthConfig{});
      if (common.seed) s.seed = *common.seed;
      if (places) s.n_places = *places;
      if (views) s.views_per_place = *views;
      if (corrupt) s.corrupt_fraction = *corrupt;
      const SynthOutput o = synth_generate(s, synth_out);
      out << nlohmann::json{{"train", o.train_manifest.string()},
                            {"val", o.val_manifest.string()},
                            {"test", o.test_manifest.string()},
                            {"corrupted", o.corrupted.size()}}
                 .dump()
          << "\n";
    };
  });

  // encode-slme
  auto* enc = app.add_subcommand("encode-slme", "encode a label map into a weighted one-hot tensor");
  std::string label_path, enc_out;
  int enc_h = 0, enc_w = 0;
  bool print_scheme = false;
  enc->add_option("--label", label_path, "label map (PGM)");
  enc->add_option("--out", enc_out, "output tensor file");
  enc->add_option("--height", enc_h);
  enc->add_option("--width", enc_w);
  enc->add_flag("--print-scheme", print_scheme, "print the resolved scheme as JSON");
  add_common(enc, common);
  enc->callback([&] {
    action = [&] {
      const SlmeScheme scheme = load_scheme(common.slme_scheme.empty() ? "default" : common.slme_scheme);
      if (print_scheme) out << scheme.to_json().dump(2) << "\n";
      if (label_path.empty()) {
        if (!print_scheme) throw UsageError("encode-slme needs --label");
        return;
      }
      if (enc_out.empty()) throw UsageError("encode-slme needs --out");
      const LabelMap map = read_label_map(label_path);
      const Tensor3<float> t =
          encode_label_map(map, scheme, enc_h > 0 ? enc_h : map.height, enc_w > 0 ? enc_w : map.width);
      write_container(enc_out, {{"format", "placekd-slme"}, {"C", t.channels}, {"H", t.height}, {"W", t.width}},
                      t.data);
      out << nlohmann::json{{"C", t.channels}, {"H", t.height}, {"W", t.width}}.dump() << "\n";
    };
  });

  // train-stage1
  auto* s1 = app.add_subcommand("train-stage1", "train the seg or rgb branch");
  std::string branch_name, train_path, val_path, out_dir;
  s1->add_option("--branch", branch_name)->required()->check(CLI::IsMember({"rgb", "seg"}));
  s1->add_option("--train", train_path)->required();
  s1->add_option("--val", val_path)->required();
  s1->add_option("--out", out_dir)->required();
  add_common(s1, common);
  s1->callback([&] {
    action = [&] {
      const ExperimentConfig cfg = resolve_config(common);
      InputCache cache(cfg.input_spec());
      TrainingData data{load_manifest(train_path), load_manifest(val_path), cfg.dataset.ground_truth, &cache};
      const Branch branch = branch_name == "seg" ? Branch::kSeg : Branch::kRgb;
      write_stage_outputs(out_dir,
                          train_stage1(branch, data, cfg.stage1_config(), cfg.input_spec(), cfg.model.rgb,
                                       cfg.model.seg),
                          cfg, {{"stage", 1}, {"branch", branch_name}, {"train", train_path}, {"val", val_path}}, out);
    };
  });

  // partition
  auto* part = app.add_subcommand("partition", "rank sample pairs under both branches and assign groups");
  std::string seg_ckpt, rgb_ckpt, part_out;
  std::optional<int> n_t, n_m;
  part->add_option("--train", train_path)->required();
  part->add_option("--seg-ckpt", seg_ckpt)->required();
  part->add_option("--rgb-ckpt", rgb_ckpt)->required();
  part->add_option("--out", part_out)->required();
  part->add_option("--nt", n_t);
  part->add_option("--nm", n_m);
  add_common(part, common);
  part->callback([&] {
    action = [&] {
      ExperimentConfig cfg = resolve_config(common);
      if (n_t) cfg.partition.n_t = *n_t;
      if (n_m) cfg.partition.n_m = *n_m;
      cfg.partition.validate();
      const auto train = load_manifest(train_path);
      const Model<float> seg = load_checkpoint(seg_ckpt);
      const Model<float> rgb = load_checkpoint(rgb_ckpt);
      if (seg.kind != ModelKind::kSeg) throw ConfigError("--seg-ckpt does not hold a seg-branch model");
      if (rgb.kind != ModelKind::kRgb) throw ConfigError("--rgb-ckpt does not hold an rgb-branch model");
      const auto pairs = mine_positives(train, cfg.dataset.ground_truth, cfg.stage1.positives);
      const auto seg_table = extract_descriptors(seg, train);
      const auto rgb_table = extract_descriptors(rgb, train);
      const PartitionTable table =
          partition(compute_rankings(table_provider(seg_table), train, pairs, Branch::kSeg),
                    compute_rankings(table_provider(rgb_table), train, pairs, Branch::kRgb), cfg.partition,
                    {sha256_file(seg_ckpt), sha256_file(rgb_ckpt)});
      save_partition(table, part_out);
      nlohmann::json counts = nlohmann::json::object();
      for (const auto& [g, n] : table.group_counts()) counts[to_string(g)] = n;
      out << nlohmann::json{{"pairs", table.rows.size()}, {"groups", counts}}.dump() << "\n";
    };
  });

  // train-stage2
  auto* s2 = app.add_subcommand("train-stage2", "distill the seg teacher into an rgb student");
  std::string teacher_path, partition_path, scheme_text = "eq4", init_from;
  bool strict = false;
  s2->add_option("--train", train_path)->required();
  s2->add_option("--val", val_path)->required();
  s2->add_option("--teacher", teacher_path)->required();
  s2->add_option("--partition", partition_path)->required();
  s2->add_option("--weight-scheme", scheme_text, "eq4|eq7|const:w1,w2,w3,w4|proto|ones|none");
  s2->add_option("--init-from", init_from, "rgb checkpoint to start the student from");
  s2->add_flag("--strict", strict, "fail when the partition was built from another teacher");
  s2->add_option("--out", out_dir)->required();
  add_common(s2, common);
  s2->callback([&] {
    action = [&] {
      const ExperimentConfig cfg = resolve_config(common);
      const Model<float> teacher = load_checkpoint(teacher_path);
      std::vector<std::string> warnings;
      PartitionTable table = load_partition(partition_path);
      const std::string teacher_digest = sha256_file(teacher_path);
      if (table.provenance.seg_ckpt_digest != teacher_digest) {
        const std::string msg = "partition " + partition_path + " was built from a different seg checkpoint";
        if (strict) throw ProvenanceError(msg);
        err << nlohmann::json{{"warning", msg}}.dump() << "\n";
      }
      const WeightScheme scheme = cfg.stage2.scheme(scheme_text, table.cfg);
      InputCache cache(cfg.input_spec());
      TrainingData data{load_manifest(train_path), load_manifest(val_path), cfg.dataset.ground_truth, &cache};
      std::optional<Model<float>> init;
      Stage2Options opts;
      opts.transform_bias = cfg.model.transform_bias;
      opts.transform_renormalize = cfg.model.transform_renormalize;
      if (!init_from.empty()) {
        init = load_checkpoint(init_from);
        opts.init_from = &*init;
      }
      write_stage_outputs(out_dir,
                          train_stage2(data, teacher, weight_table(table, scheme), cfg.stage2_config(),
                                       cfg.input_spec(), cfg.model.rgb, opts),
                          cfg,
                          {{"stage", 2},
                           {"weight_scheme", scheme.name()},
                           {"teacher", teacher_path},
                           {"partition", partition_path},
                           {"init_from", init_from},
                           {"train", train_path},
                           {"val", val_path}},
                          out);
    };
  });

  // train-baseline
  auto* base = app.add_subcommand("train-baseline", "train a fusion baseline");
  std::string mode_name;
  base->add_option("--mode", mode_name)->required()->check(CLI::IsMember({"concat_input", "concat_feat"}));
  base->add_option("--train", train_path)->required();
  base->add_option("--val", val_path)->required();
  base->add_option("--out", out_dir)->required();
  add_common(base, common);
  base->callback([&] {
    action = [&] {
      const ExperimentConfig cfg = resolve_config(common);
      InputCache cache(cfg.input_spec());
      TrainingData data{load_manifest(train_path), load_manifest(val_path), cfg.dataset.ground_truth, &cache};
      write_stage_outputs(out_dir,
                          train_baseline(parse_baseline_mode(mode_name), data, cfg.stage1_config(),
                                         cfg.input_spec(), cfg.model.rgb, cfg.model.seg),
                          cfg, {{"baseline", mode_name}, {"train", train_path}, {"val", val_path}}, out);
    };
  });

  // eval
  auto* ev = app.add_subcommand("eval", "Recall@N of a checkpoint on a manifest");
  std::string ckpt_path, manifest_path, ns_text = "1,5,10", report_path, desc_path, meta_path;
  ev->add_option("--checkpoint", ckpt_path)->required();
  ev->add_option("--manifest", manifest_path)->required();
  ev->add_option("--ns", ns_text, "comma-separated N values");
  ev->add_option("--out", report_path, "report JSON path; a CSV is written next to it");
  ev->add_option("--descriptors", desc_path, "also save the database index");
  ev->add_option("--synth-meta", meta_path, "synth_meta.json for corrupted/clean subsets");
  add_common(ev, common);
  ev->callback([&] {
    action = [&] {
      const ExperimentConfig cfg = resolve_config(common);
      const std::vector<int> ns = parse_ns(ns_text);
      const Model<float> model = load_checkpoint(ckpt_path);
      const auto records = load_manifest(manifest_path);
      std::set<std::string> corrupted;
      if (!meta_path.empty()) corrupted = load_corrupted_ids(meta_path);
      const EvalSummary s =
          evaluate_model(model, records, cfg.dataset.ground_truth, ns, meta_path.empty() ? nullptr : &corrupted);
      for (const auto& w : s.all.warnings) err << nlohmann::json{{"warning", w}}.dump() << "\n";
      if (!desc_path.empty()) save_descriptors(build_index(model, records, sha256_file(ckpt_path)), desc_path);
      if (!report_path.empty()) {
        write_text_atomic(report_path, s.to_json().dump(2) + "\n");
        fs::path csv = report_path;
        csv.replace_extension(".csv");
        write_text_atomic(csv, s.all.to_csv());
      }
      out << s.all.to_csv();
    };
  });

  // bench
  auto* bench = app.add_subcommand("bench", "feature extraction and matching latency");
  int warmup = 5, reps = 50;
  bench->add_option("--checkpoint", ckpt_path)->required();
  bench->add_option("--manifest", manifest_path)->required();
  bench->add_option("--warmup", warmup)->check(CLI::NonNegativeNumber);
  bench->add_option("--reps", reps)->check(CLI::PositiveNumber);
  bench->add_option("--out", report_path);
  bench->callback([&] {
    action = [&] {
      const LatencyReport r = bench_latency(load_checkpoint(ckpt_path), load_manifest(manifest_path), warmup, reps);
      if (!report_path.empty()) write_text_atomic(report_path, r.to_json().dump(2) + "\n");
      out << r.to_json().dump() << "\n";
    };
  });

  // experiment
  auto* exp = app.add_subcommand("experiment", "run the whole two-stage pipeline from one config");
  bool verbose = false;
  exp->add_option("--out", out_dir)->required();
  exp->add_flag("--verbose", verbose);
  add_common(exp, common);
  exp->callback([&] {
    action = [&] {
      if (common.config.empty()) throw UsageError("experiment needs --config");
      const ExperimentResult r = run_experiment(resolve_config(common), out_dir, verbose);
      out << nlohmann::json{{"report", r.report_json.string()}, {"csv", r.report_csv.string()}}.dump() << "\n";
    };
  });

  auto error_json = [&](const std::string& category, const std::string& message) {
    err << nlohmann::json{{"error", {{"category", category}, {"message", message}}}}.dump() << "\n";
  };

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    error_json("usage", e.what());
    return 2;
  }
  if (threads > 0) omp_set_num_threads(threads);
  try {
    if (action) action();
    return 0;
  } catch (const UsageError& e) {
    error_json(e.category(), e.what());
    return 2;
  } catch (const Error& e) {
    error_json(e.category(), e.what());
    return 1;
  } catch (const std::exception& e) {
    error_json("internal", e.what());
    return 1;
  }
}

}  // namespace placekd
