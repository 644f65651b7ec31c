// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "../gradcheck.h"
#include "../support.h"
#include "placekd/cli.h"
#include "placekd/config.h"
#include "placekd/experiment.h"
#include "placekd/losses.h"
#include "placekd/partition.h"
#include "placekd/retrieval.h"
#include "placekd/slme.h"
#include "placekd/synth.h"
#include "placekd/training.h"

namespace placekd {
namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    if (pass) detail = why;
    pass = false;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Reports collected from every experiment run, checked by criterion 8.
std::vector<nlohmann::json> g_reports;

// ---------------------------------------------------------------- 1

Outcome weight_suite() {
  Outcome o;
  const PartitionConfig cfg{10, 20};
  const WeightScheme eq4 = WeightScheme::parse("eq4", cfg);
  const WeightScheme eq7 = WeightScheme::parse("eq7", cfg);
  struct Hand {
    int x, y;
    const WeightScheme* s;
    double expect;
  };
  for (const Hand& h : {Hand{2, 14, &eq4, 3.7307}, Hand{8, 3, &eq4, 0.4311}, Hand{1, 1, &eq7, 1.3607},
                        Hand{25, 3, &eq4, 0.0}, Hand{5, 5, &eq4, 1.0}}) {
    const double got = weight_phi(h.x, h.y, *h.s);
    if (std::abs(got - h.expect) > 1e-4) {
      o.fail("phi(" + std::to_string(h.x) + "," + std::to_string(h.y) + ") = " + fmt("%.6f", got));
    }
  }
  const std::vector<WeightScheme> all{eq4, eq7, WeightScheme::parse("const:8,4,1,0", cfg),
                                      WeightScheme::parse("proto", cfg), WeightScheme::parse("ones", cfg)};
  long checked = 0;
  for (int x = 1; x <= 1000 && o.pass; ++x) {
    for (int y = 1; y <= 1000; ++y) {
      for (const auto& s : all) {
        const double phi = weight_phi(x, y, s);
        if (!(phi >= 0)) o.fail("negative weight under " + s.name());
        if (x > cfg.n_t && phi != 0) o.fail("nonzero D4 weight under " + s.name());
      }
      if (x == y && x <= cfg.n_t && weight_phi(x, y, eq4) != 1.0) o.fail("D2 diagonal is not 1");
      if (x <= cfg.n_t && y >= cfg.n_m && weight_phi(x, y, eq4) != weight_phi(x, cfg.n_m, eq4)) {
        o.fail("N_m cap violated at x=" + std::to_string(x));
      }
      ++checked;
    }
  }
  if (o.pass) o.detail = "5 hand values, " + std::to_string(checked) + " grid points";
  return o;
}

// ---------------------------------------------------------------- 2

Group truth_table(int x, int y, int nt) {
  if (x > nt) return Group::kD4;
  if (y > nt) return Group::kD1;
  return y >= x ? Group::kD2 : Group::kD3;
}

Outcome partition_oracle() {
  Outcome o;
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> rank(1, 300), thresh(1, 60);
  const int trials = 20000;
  for (int i = 0; i < trials; ++i) {
    PartitionConfig cfg;
    cfg.n_t = thresh(rng);
    cfg.n_m = cfg.n_t + thresh(rng);
    const int x = rank(rng), y = rank(rng);
    if (assign_group(x, y, cfg) != truth_table(x, y, cfg.n_t)) {
      o.fail("group mismatch at (" + std::to_string(x) + "," + std::to_string(y) + ")");
      return o;
    }
  }

  std::size_t pairs_checked = 0;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    // 30 records; quantized coordinates on even seeds force distance ties.
    const bool quantized = seed % 2 == 0;
    std::normal_distribution<float> n(0.f, 1.f);
    std::uniform_int_distribution<int> q(-2, 2);
    std::vector<PlaceRecord> records;
    DescriptorTable desc;
    for (int i = 0; i < 30; ++i) {
      PlaceRecord r;
      r.id = (i < 18 ? "db" : "q") + std::to_string(100 + i);
      r.split = i < 18 ? Split::kDatabase : Split::kQuery;
      std::vector<float> v(5);
      for (auto& c : v) c = quantized ? static_cast<float>(q(rng)) : n(rng);
      desc[r.id] = v;
      records.push_back(r);
    }
    std::shuffle(records.begin(), records.end(), rng);
    std::vector<SamplePair> pairs;
    for (const auto& r : records) {
      if (r.split != Split::kQuery) continue;
      for (const auto& d : records) {
        if (d.split == Split::kDatabase) pairs.push_back({r.id, d.id});
      }
    }
    const RecallRanking got = compute_rankings(table_provider(desc), records, pairs, Branch::kRgb);
    for (const auto& p : pairs) {
      std::vector<std::pair<double, std::string>> order;
      const auto& qv = desc.at(p.query_id);
      for (const auto& r : records) {
        if (r.split != Split::kDatabase) continue;
        double s = 0;
        for (std::size_t k = 0; k < qv.size(); ++k) {
          const double d = static_cast<double>(qv[k]) - desc.at(r.id)[k];
          s += d * d;
        }
        order.emplace_back(s, r.id);
      }
      std::sort(order.begin(), order.end());
      int expect = 0;
      for (std::size_t i = 0; i < order.size(); ++i) {
        if (order[i].second == p.positive_id) expect = static_cast<int>(i) + 1;
      }
      auto it = got.ranks.find(p);
      if (it == got.ranks.end() || it->second != expect) {
        o.fail("rank mismatch for " + p.query_id + "->" + p.positive_id);
        return o;
      }
      ++pairs_checked;
    }
  }
  o.detail = std::to_string(trials) + " random pairs, " + std::to_string(pairs_checked) + " ranked pairs";
  return o;
}

// ---------------------------------------------------------------- 3

Outcome gradient_check() {
  Outcome o;
  double worst = 0;
  int problems = 0;
  for (std::uint64_t seed = 101; seed <= 106; ++seed) {
    testing::Problem p = testing::make_problem(seed, seed % 2 == 0);
    for (auto term : {testing::Term::kTriplet, testing::Term::kKd, testing::Term::kTotal}) {
      const double err = testing::check(p, term);
      worst = std::max(worst, err);
      if (!(err < 1e-4)) o.fail("relative error " + fmt("%.3e", err) + " at seed " + std::to_string(seed));
    }
    ++problems;
  }
  if (o.pass) o.detail = std::to_string(problems) + " models, worst relative error " + fmt("%.2e", worst);
  return o;
}

// ---------------------------------------------------------------- 4

Outcome slme_suite() {
  Outcome o;
  std::mt19937_64 rng(44);
  int maps = 0;
  for (const SlmeScheme& s : {three_class_scheme(), default_scheme(), identity_scheme(150)}) {
    for (int trial = 0; trial < 30; ++trial) {
      ClassWeights w = s.weights;
      if (trial % 2) {
        std::uniform_real_distribution<float> pos(0.05f, 4.0f);
        for (float& v : w.values) v = pos(rng);
      }
      std::uniform_int_distribution<int> size(1, 24), cls(0, s.num_classes() - 1);
      LabelMap m(size(rng), size(rng));
      for (int& v : m.labels) v = cls(rng);
      const Tensor3<float> t = encode(m, w);
      if (decode_argmax(t).labels != m.labels) {
        o.fail("round trip failed with " + std::to_string(s.num_classes()) + " classes");
      }
      for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
          float sum = 0;
          for (int c = 0; c < t.channels; ++c) sum += t.at(c, y, x);
          if (sum != w.values[m.at(y, x)]) o.fail("channel sum differs from the class weight");
        }
      }
      ++maps;
    }
  }
  if (o.pass) o.detail = std::to_string(maps) + " maps over 3/6/150-class presets";
  return o;
}

// ---------------------------------------------------------------- 5

Outcome descriptor_invariants() {
  Outcome o;
  InputSpec spec;
  const auto dim = [&](ModelKind k) {
    return make_model(k, spec, BackboneConfig::rgb_like(), BackboneConfig::seg_light(), 1).descriptor_dim();
  };
  const int rgb = dim(ModelKind::kRgb), seg = dim(ModelKind::kSeg), cf = dim(ModelKind::kConcatFeat);
  if (rgb != 448 || seg != 480 || cf != 928) {
    o.fail("dims " + std::to_string(rgb) + "/" + std::to_string(seg) + "/" + std::to_string(cf));
  }

  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> act(0.0, 2.0), scale(0.01, 100.0);
  const std::vector<int> levels{3, 4, 5};
  double worst_norm = 0, worst_scale = 0;
  for (const auto& widths : {BackboneConfig::rgb_like().stage_channels, BackboneConfig::seg_light().stage_channels}) {
    for (int trial = 0; trial < 20; ++trial) {
      FeaturePyramid<double> p;
      int size = 32;
      for (int i = 0; i < kNumStages; ++i) {
        size = std::max(1, size / 2);
        p[i] = Tensor3<double>(widths[i], size, size);
        for (auto& v : p[i].data) v = act(rng);
      }
      const auto d = mc_aggregate<double>(p, levels);
      double n = 0;
      for (double v : d) n += v * v;
      worst_norm = std::max(worst_norm, std::abs(std::sqrt(n) - 1.0));
      for (int level : levels) {
        FeaturePyramid<double> scaled = p;
        const double lambda = scale(rng);
        for (auto& v : scaled[level - 1].data) v *= lambda;
        const auto ds = mc_aggregate<double>(scaled, levels);
        for (std::size_t i = 0; i < d.size(); ++i) worst_scale = std::max(worst_scale, std::abs(ds[i] - d[i]));
      }
    }
  }
  // Full float models on random images.
  for (ModelKind k : {ModelKind::kRgb, ModelKind::kStudent}) {
    Model<float> m = make_model(k, spec, BackboneConfig::rgb_like(), BackboneConfig::seg_light(), 9,
                                k == ModelKind::kStudent ? 480 : 0);
    ModelInput in;
    in.rgb = testing::random_tensor(3, spec.height, spec.width, rng, 0.f, 1.f);
    const auto d = m.describe(in);
    double n = 0;
    for (float v : d) n += static_cast<double>(v) * v;
    worst_norm = std::max(worst_norm, std::abs(std::sqrt(n) - 1.0));
  }
  if (worst_norm > 1e-6) o.fail("norm deviation " + fmt("%.2e", worst_norm));
  if (worst_scale > 1e-6) o.fail("scale deviation " + fmt("%.2e", worst_scale));
  if (o.pass) {
    o.detail = "dims 448/480/928, norm dev " + fmt("%.1e", worst_norm) + ", scale dev " + fmt("%.1e", worst_scale);
  }
  return o;
}

// ---------------------------------------------------------------- 6

const char* kDirectionalConfig = R"({
  "dataset": {"synth": {"n_places": 200, "views_per_place": 3, "corrupt_fraction": 0.5, "seed": 7}},
  "stage1": {"epochs": 4},
  "stage2": {"epochs": 4, "lr": 0.001, "schemes": ["none", "ones", "eq4"]}
})";

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

Outcome directional(const std::filesystem::path& work) {
  Outcome o;
  std::map<std::string, std::vector<double>> r1;
  std::ostringstream per_seed;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    ExperimentConfig cfg = ExperimentConfig::from_json(nlohmann::json::parse(kDirectionalConfig));
    cfg.seed = seed;
    const ExperimentResult res = run_experiment(cfg, work / ("seed" + std::to_string(seed)));
    g_reports.push_back(nlohmann::json::parse(slurp(res.report_json)));
    per_seed << " s" << seed << "[";
    for (const char* m : {"none", "ones", "eq4"}) {
      const auto& summary = res.models.at(std::string("stage2_") + m);
      if (!summary.corrupted) {
        o.fail("no corrupted-query subset");
        return o;
      }
      const double v = summary.corrupted->at(1);
      r1[m].push_back(v);
      per_seed << (m[0] == 'n' ? "" : " ") << fmt("%.3f", v);
    }
    per_seed << "]";
  }
  const double none = median3(r1["none"]), ones = median3(r1["ones"]), eq4 = median3(r1["eq4"]);
  o.detail = "median corrupted R@1 none " + fmt("%.3f", none) + ", all_ones " + fmt("%.3f", ones) + ", eq4 " +
             fmt("%.3f", eq4) + ";" + per_seed.str();
  if (!(eq4 >= ones && ones >= none)) o.pass = false;
  if (!(eq4 - none >= 0.05)) o.pass = false;
  return o;
}

// ---------------------------------------------------------------- 7

Outcome reductions(const std::filesystem::path& work) {
  Outcome o;
  SynthConfig sc;
  sc.n_places = 24;
  sc.height = sc.width = 16;
  sc.seed = 5;
  const SynthOutput data = synth_generate(sc, work / "data");
  InputSpec input;
  input.height = input.width = 16;
  InputCache cache(input);
  TrainingData td;
  td.train = data.train;
  td.val = data.val;
  td.cache = &cache;
  StageConfig s;
  s.epochs = 2;
  s.batch_size = 4;
  s.seed = 21;
  const BackboneConfig rgb = testing::tiny_backbone(3, 3);
  const BackboneConfig seg = testing::tiny_backbone(input.scheme.num_classes(), 3);

  const TrainResult teacher = train_stage1(Branch::kSeg, td, s, input, rgb, seg);
  const TrainResult plain = train_stage1(Branch::kRgb, td, s, input, rgb, seg);
  std::map<SamplePair, double> none;
  const WeightScheme none_scheme = WeightScheme::parse("none");
  for (const auto& p : mine_positives(td.train, td.gt, PositiveMining::kFovBest)) {
    none[p] = weight_phi(1, 1, none_scheme);
  }
  const TrainResult student = train_stage2(td, teacher.model, none, s, input, rgb);
  double worst = 0;
  if (student.metrics.size() != plain.metrics.size()) {
    o.fail("trace lengths differ");
  } else {
    for (std::size_t i = 0; i < plain.metrics.size(); ++i) {
      worst = std::max(worst, std::abs(student.metrics[i].total - plain.metrics[i].vpr));
    }
  }
  if (worst > 1e-6) o.fail("loss trace deviates by " + fmt("%.2e", worst));
  if (student.model.nets[0].params() != plain.model.nets[0].params()) o.fail("backbone parameters differ");

  // phi = 0 samples: gradients with the KD term present equal those with it removed.
  int samples = 0;
  for (std::uint64_t seed = 201; seed <= 206; ++seed) {
    testing::Problem p = testing::make_problem(seed);
    p.phi = 0.0;
    ParamSet<double> with_kd, without_kd;
    testing::evaluate(p, testing::Term::kTotal, &with_kd);
    testing::evaluate(p, testing::Term::kTriplet, &without_kd);
    if (with_kd != without_kd) o.fail("phi=0 sample changed the gradient at seed " + std::to_string(seed));
    ParamSet<double> kd_only;
    testing::evaluate(p, testing::Term::kKd, &kd_only);
    for (const auto& g : kd_only) {
      for (double v : g) {
        if (v != 0.0) o.fail("phi=0 KD gradient is nonzero");
      }
    }
    ++samples;
  }
  if (o.pass) {
    o.detail = std::to_string(plain.metrics.size()) + " steps replayed (max dev " + fmt("%.1e", worst) + "), " +
               std::to_string(samples) + " phi=0 samples";
  }
  return o;
}

// ---------------------------------------------------------------- 8

Outcome retrieval_correctness() {
  Outcome o;
  std::mt19937_64 rng(88);
  const int n_db = 80, n_q = 100, dim = 16;
  std::vector<PlaceRecord> records;
  DescriptorTable table, queries;
  GroundTruth gt;
  const auto unit = [&] {
    const auto d = testing::random_unit(dim, rng);
    return std::vector<float>(d.begin(), d.end());
  };
  for (int i = 0; i < n_db; ++i) {
    PlaceRecord r;
    r.id = "d" + std::to_string(i);
    r.split = Split::kDatabase;
    records.push_back(r);
    table[r.id] = unit();
  }
  std::uniform_int_distribution<int> pick(0, n_db - 1), size(0, 4);
  for (int q = 0; q < n_q; ++q) {
    const std::string id = "q" + std::to_string(q);
    queries[id] = unit();
    for (int k = size(rng); k > 0; --k) gt[id].insert("d" + std::to_string(pick(rng)));
    gt[id];
  }
  std::vector<int> ns;
  for (int n = 1; n <= 25; ++n) ns.push_back(n);
  const RecallReport r = recall_at_n(index_from_table(table, records, "m"), queries, gt, ns);

  std::vector<double> hits(ns.size(), 0.0);
  int counted = 0;
  for (const auto& [qid, qv] : queries) {
    const auto& refs = gt.at(qid);
    if (refs.empty()) continue;
    ++counted;
    std::vector<std::pair<float, std::string>> order;
    for (const auto& [id, v] : table) {
      double s = 0;
      for (int k = 0; k < dim; ++k) s += (static_cast<double>(qv[k]) - v[k]) * (static_cast<double>(qv[k]) - v[k]);
      order.emplace_back(static_cast<float>(s), id);
    }
    std::sort(order.begin(), order.end());
    for (std::size_t j = 0; j < ns.size(); ++j) {
      for (int i = 0; i < ns[j]; ++i) {
        if (refs.count(order[i].second)) {
          hits[j] += 1;
          break;
        }
      }
    }
  }
  for (std::size_t j = 0; j < ns.size(); ++j) {
    if (r.recalls[j] != hits[j] / counted) o.fail("recall differs from brute force at N=" + std::to_string(ns[j]));
  }
  for (std::size_t j = 1; j < r.recalls.size(); ++j) {
    if (r.recalls[j] < r.recalls[j - 1]) o.fail("synthetic report not monotone");
  }

  int checked = 0;
  for (const auto& report : g_reports) {
    for (const auto& [model, summary] : report["models"].items()) {
      for (const auto& [subset, rep] : summary.items()) {
        if (!rep.is_object() || !rep.contains("recall")) continue;
        std::vector<std::pair<int, double>> pts;
        for (const auto& [key, v] : rep["recall"].items()) pts.emplace_back(std::stoi(key.substr(2)), v.get<double>());
        std::sort(pts.begin(), pts.end());
        for (std::size_t j = 1; j < pts.size(); ++j) {
          if (pts[j].second < pts[j - 1].second) o.fail("report " + model + "/" + subset + " not monotone in N");
        }
        ++checked;
      }
    }
  }
  if (checked == 0) o.fail("no experiment reports to check");
  if (o.pass) {
    o.detail = std::to_string(counted) + " queries match brute force, " + std::to_string(checked) +
               " produced reports monotone";
  }
  return o;
}

// ---------------------------------------------------------------- 9

const char* kSmallConfig = R"({
  "seed": 5,
  "dataset": {"synth": {"n_places": 24, "height": 16, "width": 16, "seed": 4, "corrupt_fraction": 0.5}},
  "model": {"input_height": 16, "input_width": 16,
            "rgb": {"stage_channels": [3, 4, 5, 6, 7]},
            "seg": {"preset": "seg_light", "stage_channels": [3, 4, 5, 6, 7]}},
  "stage1": {"epochs": 2, "batch_size": 4},
  "stage2": {"epochs": 2, "batch_size": 4, "schemes": ["none", "ones", "eq4"]}
})";

Outcome determinism(const std::filesystem::path& work) {
  Outcome o;
  std::filesystem::create_directories(work);
  std::ofstream(work / "small.json") << kSmallConfig;
  for (const char* run : {"a", "b"}) {
    std::ostringstream out, err;
    const int code =
        cli_main({"experiment", "--config", (work / "small.json").string(), "--out", (work / run).string()}, out, err);
    if (code != 0) {
      o.fail("experiment exited with " + std::to_string(code) + ": " + err.str());
      return o;
    }
  }
  g_reports.push_back(nlohmann::json::parse(slurp(work / "a" / "report.json")));
  int files = 0;
  for (const char* f : {"report.json", "report.csv", "partition.csv", "stage1_rgb/metrics.csv",
                        "stage1_seg/metrics.csv", "stage2_none/metrics.csv", "stage2_ones/metrics.csv",
                        "stage2_eq4/metrics.csv"}) {
    const std::string a = slurp(work / "a" / f), b = slurp(work / "b" / f);
    if (a.empty() || a != b) o.fail(std::string(f) + " differs between runs");
    ++files;
  }
  if (o.pass) o.detail = std::to_string(files) + " report files byte-identical";
  return o;
}

}  // namespace
}  // namespace placekd

int main(int argc, char** argv) {
  using namespace placekd;
  CLI::App app{"placekd acceptance checks"};
  std::vector<int> only;
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);

  testing::TempDir work("acceptance");
  struct Criterion {
    int id;
    std::string name;
    double budget_s;  // 0 = no bound
    std::function<Outcome()> run;
  };
  // 6 and 9 run before 8, which checks their reports.
  const std::vector<Criterion> criteria{
      {1, "weight function suite", 5, weight_suite},
      {2, "partition oracle", 30, partition_oracle},
      {3, "gradient check", 60, gradient_check},
      {4, "SLME round trip and channel sum", 10, slme_suite},
      {5, "descriptor invariants", 0, descriptor_invariants},
      {6, "directional experiment eq4 >= all_ones >= none", 900, [&] { return directional(work / "c6"); }},
      {7, "reduction checks", 0, [&] { return reductions(work / "c7"); }},
      {9, "experiment determinism", 0, [&] { return determinism(work / "c9"); }},
      {8, "retrieval correctness", 0, retrieval_correctness},
  };
  std::map<int, std::string> lines;
  bool all = true;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.fail(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs > c.budget_s) {
      o.fail("took " + fmt("%.1f", secs) + " s, budget " + fmt("%.0f", c.budget_s) + " s");
    }
    all = all && o.pass;
    std::ostringstream line;
    line << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail << " ("
         << fmt("%.1f", secs) << " s)";
    lines[c.id] = line.str();
    std::fprintf(stderr, "%s\n", line.str().c_str());
  }
  for (const auto& [id, line] : lines) std::printf("%s\n", line.c_str());
  return all ? 0 : 1;
}
