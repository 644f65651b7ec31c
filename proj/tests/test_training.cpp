#include <gtest/gtest.h>

#include <cmath>

#include "placekd/errors.h"
#include "placekd/synth.h"
#include "placekd/training.h"
#include "support.h"

namespace placekd {
namespace {

// One small synthetic dataset shared by every test in this file.
class TrainingTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir("training");
    SynthConfig cfg;
    cfg.n_places = 24;
    cfg.height = 16;
    cfg.width = 16;
    cfg.seed = 3;
    data_ = new SynthOutput(synth_generate(cfg, dir_->path() / "data"));
  }
  static void TearDownTestSuite() {
    delete data_;
    delete dir_;
  }

  void SetUp() override {
    input_.height = 16;
    input_.width = 16;
    cache_ = std::make_unique<InputCache>(input_);
    td_.train = data_->train;
    td_.val = data_->val;
    td_.cache = cache_.get();
  }

  StageConfig stage(int epochs = 2) const {
    StageConfig s;
    s.epochs = epochs;
    s.batch_size = 4;
    s.seed = 17;
    s.lr = 5e-3;
    return s;
  }

  BackboneConfig rgb() const { return testing::tiny_backbone(3, 3); }
  BackboneConfig seg() const { return testing::tiny_backbone(input_.scheme.num_classes(), 3); }

  static std::vector<std::vector<float>> snapshot(const Model<float>& m) {
    std::vector<std::vector<float>> out;
    for (auto* p : const_cast<Model<float>&>(m).param_tensors()) out.push_back(*p);
    return out;
  }

  static testing::TempDir* dir_;
  static SynthOutput* data_;
  InputSpec input_;
  std::unique_ptr<InputCache> cache_;
  TrainingData td_;
};

testing::TempDir* TrainingTest::dir_ = nullptr;
SynthOutput* TrainingTest::data_ = nullptr;

TEST_F(TrainingTest, FixedSeedIsDeterministic) {
  const TrainResult a = train_stage1(Branch::kRgb, td_, stage(), input_, rgb(), seg());
  InputCache fresh(input_);
  TrainingData td2 = td_;
  td2.cache = &fresh;
  const TrainResult b = train_stage1(Branch::kRgb, td2, stage(), input_, rgb(), seg());
  EXPECT_EQ(snapshot(a.model), snapshot(b.model));
  ASSERT_EQ(a.metrics.size(), b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) EXPECT_EQ(a.metrics[i].total, b.metrics[i].total);
}

TEST_F(TrainingTest, ZeroLearningRateLeavesParametersUnchanged) {
  StageConfig s = stage(1);
  s.lr = 0;
  const Model<float> init = make_model(ModelKind::kRgb, input_, rgb(), seg(), s.seed);
  const TrainResult r = train_stage1(Branch::kRgb, td_, s, input_, rgb(), seg());
  EXPECT_EQ(snapshot(r.model), snapshot(init));
}

TEST_F(TrainingTest, TrainingLossDecreases) {
  StageConfig s = stage(4);
  s.select_best = false;
  const Model<float> init = make_model(ModelKind::kRgb, input_, rgb(), seg(), s.seed);
  const double before = mean_training_loss(init, td_, s);
  const TrainResult r = train_stage1(Branch::kRgb, td_, s, input_, rgb(), seg());
  const double after = mean_training_loss(r.model, td_, s);
  EXPECT_LT(after, before);
}

TEST_F(TrainingTest, MetricsRowsCarryValidationOnEpochEnd) {
  const TrainResult r = train_stage1(Branch::kSeg, td_, stage(2), input_, rgb(), seg());
  ASSERT_FALSE(r.metrics.empty());
  int ends = 0;
  for (const auto& m : r.metrics) {
    if (!std::isnan(m.val_r5)) {
      ++ends;
      EXPECT_GE(m.val_r10, m.val_r5);
      EXPECT_GE(m.val_r5, m.val_r1);
    }
    EXPECT_EQ(m.kd, 0.0);
  }
  EXPECT_EQ(ends, 2);
  const std::string csv = metrics_csv(r.metrics);
  EXPECT_EQ(csv.rfind("step,epoch,lr,loss_vpr,loss_kd,loss_total,", 0), 0u);
}

TEST_F(TrainingTest, NoneSchemeReplaysRgbStage) {
  const StageConfig s = stage(2);
  const TrainResult teacher = train_stage1(Branch::kSeg, td_, s, input_, rgb(), seg());
  const TrainResult plain = train_stage1(Branch::kRgb, td_, s, input_, rgb(), seg());

  std::map<SamplePair, double> zero;
  for (const auto& p : mine_positives(td_.train, td_.gt, PositiveMining::kFovBest)) zero[p] = 0.0;
  const TrainResult student = train_stage2(td_, teacher.model, zero, s, input_, rgb());

  ASSERT_EQ(student.metrics.size(), plain.metrics.size());
  for (std::size_t i = 0; i < plain.metrics.size(); ++i) {
    EXPECT_EQ(student.metrics[i].vpr, plain.metrics[i].vpr) << "step " << i;
    EXPECT_EQ(student.metrics[i].kd, 0.0);
  }
  EXPECT_EQ(student.model.nets[0].params(), plain.model.nets[0].params());
}

TEST_F(TrainingTest, TeacherIsCachedAndFrozen) {
  const StageConfig s = stage(2);
  const TrainResult teacher = train_stage1(Branch::kSeg, td_, stage(1), input_, rgb(), seg());
  const auto before = snapshot(teacher.model);
  std::map<SamplePair, double> ones;
  for (const auto& p : mine_positives(td_.train, td_.gt, PositiveMining::kFovBest)) ones[p] = 1.0;
  const TrainResult student = train_stage2(td_, teacher.model, ones, s, input_, rgb());

  ASSERT_EQ(student.teacher_forwards_per_epoch.size(), 2u);
  EXPECT_EQ(student.teacher_forwards_per_epoch[0], td_.train.size());
  EXPECT_EQ(student.teacher_forwards_per_epoch[1], 0u);
  EXPECT_EQ(snapshot(teacher.model), before);
  double kd = 0;
  for (const auto& m : student.metrics) kd += m.kd;
  EXPECT_GT(kd, 0.0);
  ASSERT_TRUE(student.model.transform.has_value());
  EXPECT_EQ(student.model.transform->out_dim(), teacher.model.descriptor_dim());
}

TEST_F(TrainingTest, MissingWeightIsTrainingError) {
  const TrainResult teacher = train_stage1(Branch::kSeg, td_, stage(1), input_, rgb(), seg());
  EXPECT_THROW(train_stage2(td_, teacher.model, {}, stage(1), input_, rgb()), TrainingError);
}

TEST_F(TrainingTest, TeacherMustBeSegModel) {
  const Model<float> rgb_model = make_model(ModelKind::kRgb, input_, rgb(), seg(), 1);
  EXPECT_THROW(train_stage2(td_, rgb_model, {}, stage(1), input_, rgb()), ConfigError);
}

TEST_F(TrainingTest, EmptyValidationIsConfigError) {
  td_.val.clear();
  EXPECT_THROW(train_stage1(Branch::kRgb, td_, stage(1), input_, rgb(), seg()), ConfigError);
}

TEST(StageConfig, ValidationAndJson) {
  StageConfig s;
  s.epochs = 0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = StageConfig{};
  s.lr = -1;
  EXPECT_THROW(s.validate(), ConfigError);
  s = StageConfig{};
  s.lr = 3e-4;
  s.batch_size = 5;
  const StageConfig back = StageConfig::from_json(s.to_json());
  EXPECT_EQ(back.lr, 3e-4);
  EXPECT_EQ(back.batch_size, 5);
}

TEST(AdamW, FirstStepMovesByLearningRateTimesSign) {
  std::vector<float> p{1.0f, -2.0f, 0.5f};
  AdamW opt({&p}, 0.9, 0.999, 1e-12, 0.0);
  opt.step({{0.3f, -4.0f, 0.0f}}, 0.01);
  EXPECT_NEAR(p[0], 0.99f, 1e-6);
  EXPECT_NEAR(p[1], -1.99f, 1e-6);
  EXPECT_EQ(p[2], 0.5f);
}

TEST(AdamW, DecoupledDecayShrinksWithZeroGradient) {
  std::vector<float> p{2.0f};
  AdamW opt({&p}, 0.9, 0.999, 1e-8, 0.1);
  opt.step({{0.0f}}, 0.5);
  EXPECT_NEAR(p[0], 2.0f * (1 - 0.05f), 1e-6);
}

}  // namespace
}  // namespace placekd
