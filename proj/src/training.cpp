#include "placekd/training.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "placekd/errors.h"
#include "placekd/random.h"

namespace placekd {

void StageConfig::validate() const {
  if (!(lr >= 0)) throw ConfigError("stage.lr must be >= 0");
  if (!(weight_decay >= 0)) throw ConfigError("stage.weight_decay must be >= 0");
  if (epochs < 1) throw ConfigError("stage.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("stage.batch_size must be >= 1");
  if (negatives_per_query < 1) throw ConfigError("stage.negatives_per_query must be >= 1");
  if (negative_pool < negatives_per_query) throw ConfigError("stage.negative_pool must be >= negatives_per_query");
  if (!(margin >= 0)) throw ConfigError("stage.margin must be >= 0");
}

nlohmann::json StageConfig::to_json() const {
  return {{"lr", lr},
          {"weight_decay", weight_decay},
          {"cosine", cosine},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"negatives_per_query", negatives_per_query},
          {"negative_pool", negative_pool},
          {"margin", margin},
          {"seed", seed},
          {"select_best", select_best},
          {"positives", positives == PositiveMining::kFovBest ? "fov_best" : "weak"}};
}

StageConfig StageConfig::from_json(const nlohmann::json& j, StageConfig d) {
  static const std::set<std::string> kKnown = {"lr",     "weight_decay",        "cosine",        "beta1",
                                               "beta2",  "adam_eps",            "epochs",        "batch_size",
                                               "margin", "negatives_per_query", "negative_pool", "seed",
                                               "select_best", "positives"};
  for (const auto& [key, _] : j.items()) {
    if (!kKnown.count(key)) throw ConfigError("unknown stage config field '" + key + "'");
  }
  try {
    d.lr = j.value("lr", d.lr);
    d.weight_decay = j.value("weight_decay", d.weight_decay);
    d.cosine = j.value("cosine", d.cosine);
    d.beta1 = j.value("beta1", d.beta1);
    d.beta2 = j.value("beta2", d.beta2);
    d.adam_eps = j.value("adam_eps", d.adam_eps);
    d.epochs = j.value("epochs", d.epochs);
    d.batch_size = j.value("batch_size", d.batch_size);
    d.negatives_per_query = j.value("negatives_per_query", d.negatives_per_query);
    d.negative_pool = j.value("negative_pool", d.negative_pool);
    d.margin = j.value("margin", d.margin);
    d.seed = j.value("seed", d.seed);
    d.select_best = j.value("select_best", d.select_best);
    if (j.contains("positives")) {
      const auto p = j.at("positives").get<std::string>();
      if (p == "fov_best") {
        d.positives = PositiveMining::kFovBest;
      } else if (p == "weak") {
        d.positives = PositiveMining::kWeak;
      } else {
        throw ConfigError("stage.positives must be fov_best|weak");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("stage config: ") + e.what());
  }
  d.validate();
  return d;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream out;
  out.precision(9);
  out << "step,epoch,lr,loss_vpr,loss_kd,loss_total,val_r1,val_r5,val_r10\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.epoch << ',' << r.lr << ',' << r.vpr << ',' << r.kd << ',' << r.total << ',';
    if (std::isnan(r.val_r5)) {
      out << ",,\n";
    } else {
      out << r.val_r1 << ',' << r.val_r5 << ',' << r.val_r10 << '\n';
    }
  }
  return out.str();
}

void TeacherCache::fill(const std::vector<PlaceRecord>& records) {
  std::vector<PlaceRecord> missing;
  for (const auto& r : records) {
    if (!table_.count(r.id)) missing.push_back(r);
  }
  if (missing.empty()) return;
  DescriptorTable fresh = extract_descriptors(teacher_, missing, &inputs_);
  forward_passes_ += missing.size();
  table_.merge(fresh);
}

const std::vector<float>& TeacherCache::get(const std::string& id) const {
  auto it = table_.find(id);
  if (it == table_.end()) throw TrainingError("teacher descriptor for '" + id + "' not cached");
  return it->second;
}

AdamW::AdamW(const std::vector<std::vector<float>*>& params, double beta1, double beta2, double eps,
             double weight_decay)
    : params_(params), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  for (const auto* p : params_) {
    m_.emplace_back(p->size(), 0.0f);
    v_.emplace_back(p->size(), 0.0f);
  }
}

void AdamW::step(const ParamSet<float>& grads, double lr) {
  if (grads.size() != params_.size()) throw TrainingError("optimizer: gradient layout mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const double decay = 1.0 - lr * weight_decay_;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    std::vector<float>& p = *params_[k];
    const std::vector<float>& g = grads[k];
    std::vector<float>& m = m_[k];
    std::vector<float>& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = static_cast<float>(beta1_ * m[i] + (1.0 - beta1_) * g[i]);
      v[i] = static_cast<float>(beta2_ * v[i] + (1.0 - beta2_) * static_cast<double>(g[i]) * g[i]);
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      p[i] = static_cast<float>(p[i] * decay - lr * update);
    }
  }
}

RecallReport validation_recall(const Model<float>& model, const std::vector<PlaceRecord>& records,
                               const GroundTruthConfig& gt, const InputCache* cache) {
  const DescriptorTable table = extract_descriptors(model, records, cache);
  const RetrievalIndex index = index_from_table(table, records, "");
  DescriptorTable queries;
  for (const auto& r : records) {
    if (r.split == Split::kQuery) queries[r.id] = table.at(r.id);
  }
  return recall_at_n(index, queries, ground_truth_sets(records, gt), {1, 5, 10}, gt.digest_string());
}

namespace {

struct Triplet {
  SamplePair pair;
  std::string negative;
};

std::vector<Triplet> mine_triplets(const std::vector<SamplePair>& pairs, const std::vector<PlaceRecord>& records,
                                   const GroundTruth& gt, const DescriptorTable& current, const StageConfig& cfg,
                                   int epoch) {
  const DescriptorProvider provider = table_provider(current);
  const std::uint64_t base = derive_seed(cfg.seed, kStreamNegatives);
  std::vector<std::vector<Triplet>> per_pair(pairs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const NegativeSample neg =
        sample_negatives(pairs[i].query_id, records, gt, cfg.negatives_per_query, provider, cfg.negative_pool,
                         derive_seed(base, static_cast<std::uint64_t>(epoch) * 1000003ULL + i));
    for (const auto& n : neg.ids) per_pair[i].push_back({pairs[i], n});
  }
  std::vector<Triplet> out;
  for (auto& v : per_pair) out.insert(out.end(), v.begin(), v.end());
  return out;
}

std::vector<SamplePair> training_pairs(const std::vector<PlaceRecord>& train, const StageConfig& cfg,
                                       const GroundTruthConfig& gt_cfg, const DescriptorTable* current) {
  if (cfg.positives == PositiveMining::kWeak) {
    return mine_positives(train, gt_cfg, PositiveMining::kWeak, table_provider(*current));
  }
  return mine_positives(train, gt_cfg, PositiveMining::kFovBest);
}

// Starts T at the best constant prediction of the teacher: zero weights and
// the mean teacher descriptor as bias, or without a bias the rank-one map
// taking the mean student descriptor to the mean teacher descriptor.
void fit_transform_to_teacher(Transformation<float>& t, const TeacherCache& teacher, const DescriptorTable& student,
                              const std::vector<PlaceRecord>& records) {
  std::vector<double> t_mean(static_cast<std::size_t>(t.out_dim()), 0.0);
  std::vector<double> s_mean(static_cast<std::size_t>(t.in_dim()), 0.0);
  for (const auto& r : records) {
    const auto& td = teacher.get(r.id);
    const auto& sd = student.at(r.id);
    for (std::size_t k = 0; k < t_mean.size(); ++k) t_mean[k] += td[k];
    for (std::size_t k = 0; k < s_mean.size(); ++k) s_mean[k] += sd[k];
  }
  for (auto& v : t_mean) v /= static_cast<double>(records.size());
  for (auto& v : s_mean) v /= static_cast<double>(records.size());
  auto& w = t.params()[0];
  auto& b = t.params()[1];
  if (t.use_bias()) {
    std::fill(w.begin(), w.end(), 0.0f);
    for (std::size_t k = 0; k < t_mean.size(); ++k) b[k] = static_cast<float>(t_mean[k]);
    return;
  }
  double s_sq = 0;
  for (double v : s_mean) s_sq += v * v;
  if (s_sq <= 0) return;
  for (int r = 0; r < t.out_dim(); ++r) {
    for (int c = 0; c < t.in_dim(); ++c) {
      w[static_cast<std::size_t>(r) * t.in_dim() + c] = static_cast<float>(t_mean[r] * s_mean[c] / s_sq);
    }
  }
}

double schedule_lr(const StageConfig& cfg, long step, long total_steps) {
  if (!cfg.cosine || total_steps <= 0) return cfg.lr;
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps));
}

}  // namespace

TrainResult train_model(Model<float> model, const TrainingData& data, const StageConfig& cfg, KdSetup* kd) {
  cfg.validate();
  if (data.val.empty()) throw ConfigError("validation split is empty");
  if (!data.cache) throw ConfigError("training data needs an input cache");
  if (kd) {
    if (!kd->teacher) throw ConfigError("distillation needs a teacher");
    if (!model.transform) throw ConfigError("distillation needs a student with a transformation");
    if (model.transform->out_dim() != kd->teacher->dim()) {
      throw ConfigError("transformation output dim " + std::to_string(model.transform->out_dim()) +
                        " != teacher descriptor dim " + std::to_string(kd->teacher->dim()));
    }
    if (model.transform->in_dim() != model.descriptor_dim()) {
      throw ConfigError("transformation input dim does not match the student descriptor");
    }
  }
  data.cache->preload(data.train, model.kind);
  data.cache->preload(data.val, model.kind);
  const GroundTruth gt = ground_truth_sets(data.train, data.gt);

  TrainResult result;
  AdamW opt(model.param_tensors(), cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
  std::mt19937_64 order_rng(derive_seed(cfg.seed, kStreamDataOrder));
  std::vector<std::vector<float>> best = [&] {
    std::vector<std::vector<float>> copy;
    for (const auto* p : model.param_tensors()) copy.push_back(*p);
    return copy;
  }();
  double best_r5 = -1.0;
  long step = 0;
  long total_steps = 0;
  const std::size_t num_tensors = model.num_param_tensors();
  const std::size_t transform_offset = model.transform ? num_tensors - 2 : num_tensors;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::size_t teacher_before = kd ? kd->teacher->forward_passes() : 0;
    if (kd) kd->teacher->fill(data.train);

    const DescriptorTable current = extract_descriptors(model, data.train, data.cache);
    if (kd && epoch == 1) fit_transform_to_teacher(*model.transform, *kd->teacher, current, data.train);
    const std::vector<SamplePair> pairs = training_pairs(data.train, cfg, data.gt, &current);
    if (pairs.empty()) throw TrainingError("no training pairs: every query lacks ground truth");
    std::vector<double> phis(pairs.size(), 0.0);
    if (kd) {
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        auto it = kd->weights.find(pairs[i]);
        if (it == kd->weights.end()) {
          throw TrainingError("no distillation weight for pair (" + pairs[i].query_id + ", " + pairs[i].positive_id +
                              ")");
        }
        phis[i] = it->second;
      }
    }
    std::map<SamplePair, double> phi_of;
    for (std::size_t i = 0; i < pairs.size(); ++i) phi_of[pairs[i]] = phis[i];

    std::vector<Triplet> triplets = mine_triplets(pairs, data.train, gt, current, cfg, epoch);
    std::shuffle(triplets.begin(), triplets.end(), order_rng);
    const long steps_per_epoch = static_cast<long>((triplets.size() + cfg.batch_size - 1) / cfg.batch_size);
    if (total_steps == 0) total_steps = steps_per_epoch * cfg.epochs;

    for (std::size_t start = 0; start < triplets.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), triplets.size() - start);
      std::vector<ParamSet<float>> sample_grads(count);
      std::vector<TotalLossParts<float>> sample_loss(count);
      std::vector<std::string> errors(count);
#pragma omp parallel for schedule(dynamic)
      for (std::size_t i = 0; i < count; ++i) {
        try {
          const Triplet& t = triplets[start + i];
          const std::string* ids[3] = {&t.pair.query_id, &t.pair.positive_id, &t.negative};
          ModelTrace<float> traces[3];
          TripletDescriptors<float> student;
          std::vector<float>* outs[3] = {&student.query, &student.positive, &student.negative};
          for (int k = 0; k < 3; ++k) *outs[k] = model.describe(data.cache->get(*ids[k]), &traces[k]);
          TripletDescriptors<float> teacher;
          const double phi = kd ? phi_of.at(t.pair) : 0.0;
          if (kd && phi != 0.0) {
            teacher.query = kd->teacher->get(*ids[0]);
            teacher.positive = kd->teacher->get(*ids[1]);
            teacher.negative = kd->teacher->get(*ids[2]);
          }
          ParamSet<float> grads = model.zero_grads();
          TripletGrads<float> sg;
          ParamSet<float> tgrads;
          if (model.transform) tgrads = zeros_like(model.transform->params());
          sample_loss[i] = total_loss<float>(student, kd ? &teacher : nullptr,
                                             kd ? &*model.transform : nullptr, phi,
                                             TripletLossConfig{cfg.margin}, &sg,
                                             model.transform ? &tgrads : nullptr);
          model.backward(traces[0], sg.query, grads);
          model.backward(traces[1], sg.positive, grads);
          model.backward(traces[2], sg.negative, grads);
          for (std::size_t k = 0; k < tgrads.size(); ++k) grads[transform_offset + k] = std::move(tgrads[k]);
          sample_grads[i] = std::move(grads);
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      }
      for (const auto& e : errors) {
        if (!e.empty()) throw TrainingError(e);
      }

      ParamSet<float> grads = std::move(sample_grads[0]);
      for (std::size_t i = 1; i < count; ++i) {
        for (std::size_t k = 0; k < grads.size(); ++k) {
          for (std::size_t j = 0; j < grads[k].size(); ++j) grads[k][j] += sample_grads[i][k][j];
        }
      }
      const float inv = 1.0f / static_cast<float>(count);
      for (auto& g : grads) {
        for (auto& v : g) v *= inv;
      }
      MetricsRow row;
      for (const auto& l : sample_loss) {
        row.vpr += l.vpr;
        row.kd += l.kd;
      }
      row.vpr /= count;
      row.kd /= count;
      row.total = row.vpr + row.kd;
      row.lr = schedule_lr(cfg, step, total_steps);
      opt.step(grads, row.lr);
      ++step;
      row.step = static_cast<int>(step);
      row.epoch = epoch;
      row.val_r1 = row.val_r5 = row.val_r10 = std::numeric_limits<double>::quiet_NaN();
      result.metrics.push_back(row);
    }

    const RecallReport val = validation_recall(model, data.val, data.gt, data.cache);
    MetricsRow& last = result.metrics.back();
    last.val_r1 = val.at(1);
    last.val_r5 = val.at(5);
    last.val_r10 = val.at(10);
    if (val.at(5) > best_r5) {
      best_r5 = val.at(5);
      result.best_epoch = epoch;
      auto tensors = model.param_tensors();
      for (std::size_t k = 0; k < tensors.size(); ++k) best[k] = *tensors[k];
    }
    if (kd) result.teacher_forwards_per_epoch.push_back(kd->teacher->forward_passes() - teacher_before);
  }

  if (cfg.select_best) {
    auto tensors = model.param_tensors();
    for (std::size_t k = 0; k < tensors.size(); ++k) *tensors[k] = best[k];
  } else {
    result.best_epoch = cfg.epochs;
  }
  result.best_val_r5 = best_r5;
  result.model = std::move(model);
  return result;
}

TrainResult train_stage1(Branch branch, const TrainingData& data, const StageConfig& cfg, const InputSpec& input,
                         const BackboneConfig& rgb_cfg, const BackboneConfig& seg_cfg) {
  if (branch == Branch::kStudent) throw ConfigError("stage I trains the rgb or seg branch");
  if (data.val.empty()) throw ConfigError("validation split is empty");
  const ModelKind kind = branch == Branch::kSeg ? ModelKind::kSeg : ModelKind::kRgb;
  return train_model(make_model(kind, input, rgb_cfg, seg_cfg, cfg.seed), data, cfg);
}

TrainResult train_stage2(const TrainingData& data, const Model<float>& teacher,
                         const std::map<SamplePair, double>& weights, const StageConfig& cfg, const InputSpec& input,
                         const BackboneConfig& rgb_cfg, const Stage2Options& options) {
  if (teacher.kind != ModelKind::kSeg) throw ConfigError("stage II teacher must be a seg-branch model");
  if (!data.cache) throw ConfigError("training data needs an input cache");
  Model<float> student =
      make_model(ModelKind::kStudent, input, rgb_cfg, BackboneConfig::seg_light(), cfg.seed,
                 teacher.descriptor_dim(), options.transform_bias, options.transform_renormalize);
  if (options.init_from) {
    if (options.init_from->nets.size() != 1 || !(options.init_from->nets[0].config() == student.nets[0].config())) {
      throw ConfigError("stage II init checkpoint does not match the student backbone");
    }
    student.nets[0].params() = options.init_from->nets[0].params();
  }
  data.cache->preload(data.train, ModelKind::kSeg);
  TeacherCache cache(teacher, *data.cache);
  KdSetup kd{&cache, weights};
  return train_model(std::move(student), data, cfg, &kd);
}

BaselineMode parse_baseline_mode(const std::string& name) {
  if (name == "concat_input") return BaselineMode::kConcatInput;
  if (name == "concat_feat") return BaselineMode::kConcatFeat;
  throw ConfigError("unknown baseline mode '" + name + "' (concat_input|concat_feat)");
}

TrainResult train_baseline(BaselineMode mode, const TrainingData& data, const StageConfig& cfg,
                           const InputSpec& input, const BackboneConfig& rgb_cfg, const BackboneConfig& seg_cfg) {
  const ModelKind kind = mode == BaselineMode::kConcatInput ? ModelKind::kConcatInput : ModelKind::kConcatFeat;
  return train_model(make_model(kind, input, rgb_cfg, seg_cfg, cfg.seed), data, cfg);
}

double mean_training_loss(const Model<float>& model, const TrainingData& data, const StageConfig& cfg) {
  if (!data.cache) throw ConfigError("training data needs an input cache");
  data.cache->preload(data.train, model.kind);
  const GroundTruth gt = ground_truth_sets(data.train, data.gt);
  const DescriptorTable current = extract_descriptors(model, data.train, data.cache);
  const std::vector<SamplePair> pairs = training_pairs(data.train, cfg, data.gt, &current);
  const std::vector<Triplet> triplets = mine_triplets(pairs, data.train, gt, current, cfg, 0);
  double sum = 0;
  for (const auto& t : triplets) {
    sum += triplet_loss<float>(current.at(t.pair.query_id), current.at(t.pair.positive_id), current.at(t.negative),
                               TripletLossConfig{cfg.margin});
  }
  return triplets.empty() ? 0.0 : sum / triplets.size();
}

}  // namespace placekd
