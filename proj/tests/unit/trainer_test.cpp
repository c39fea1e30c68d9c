#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "dssd/blocks.hpp"
#include "dssd/errors.hpp"
#include "dssd/trainer.hpp"
#include "oracles.hpp"

namespace dssd {
namespace {

std::vector<Sample> toy16_data(std::size_t count, std::uint64_t seed = 1) {
  SceneSpec scene;
  scene.image_size = 16;
  scene.num_objects = 1;
  scene.min_size = 0.35;
  scene.max_size = 0.6;
  return gen_dataset(seed, count, scene);
}

Schedule constant(double lr, int iters) {
  Schedule s;
  s.base_lr = lr;
  s.total_iters = iters;
  return s;
}

TrainConfig plain(int batch = 1) {
  TrainConfig cfg;
  cfg.batch_size = batch;
  cfg.augment = false;
  return cfg;
}

bool tensors_identical(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

TEST(Sgd, ZeroGradientLeavesParameters) {
  Tensor p(Shape{3, 1, 1, 1}, 0.7f);
  Tensor v(Shape{3, 1, 1, 1});
  sgd_step(p, Tensor(Shape{3, 1, 1, 1}), v, 0.1, 0.9, 0.0);
  for (float x : p.data()) EXPECT_EQ(x, 0.7f);
}

TEST(Sgd, ScalarExamples) {
  Tensor p(Shape{1, 1, 1, 1}, 2.0f);
  Tensor v(Shape{1, 1, 1, 1});
  sgd_step(p, Tensor(Shape{1, 1, 1, 1}, 1.0f), v, 0.1, 0.0, 0.0);
  EXPECT_FLOAT_EQ(p[0], 1.9f);

  // Hand-rolled recurrence in float, step by step.
  float pr = 1.0f, vr = 0.0f;
  Tensor q(Shape{1, 1, 1, 1}, 1.0f);
  Tensor w(Shape{1, 1, 1, 1});
  const float grads[2] = {0.5f, -0.25f};
  for (float g : grads) {
    sgd_step(q, Tensor(Shape{1, 1, 1, 1}, g), w, 0.01, 0.9, 5e-4);
    vr = 0.9f * vr + g + 5e-4f * pr;
    pr = pr - 0.01f * vr;
    EXPECT_NEAR(q[0], pr, 1e-7);
    EXPECT_NEAR(w[0], vr, 1e-7);
  }
}

TEST(Sgd, NonFiniteUpdateRejectedWithoutSideEffects) {
  Tensor p(Shape{2, 1, 1, 1}, 1.0f);
  Tensor v(Shape{2, 1, 1, 1});
  Tensor g(Shape{2, 1, 1, 1}, 1.0f);
  g[1] = INFINITY;
  EXPECT_THROW(sgd_step(p, g, v, 0.1), NumericError);
  EXPECT_EQ(p[0], 1.0f);
  EXPECT_EQ(v[0], 0.0f);
}

TEST(Schedule, Voc07Boundaries) {
  const Schedule s = preset_schedule("voc07", Stage::kSsd);
  EXPECT_DOUBLE_EQ(lr_at(s, 0), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(s, 59999), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(s, 60000), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(s, 69999), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(s, 70000), 1e-5);
  EXPECT_THROW(lr_at(s, s.total_iters), SpecError);
  EXPECT_THROW(lr_at(s, -1), SpecError);
  EXPECT_THROW(preset_schedule("imagenet", Stage::kSsd), SpecError);
}

TEST(Schedule, PresetsAreValidAndNonIncreasing) {
  for (const char* name : {"voc07", "voc12", "coco", "toy"}) {
    for (Stage st : {Stage::kSsd, Stage::kDssdStage1, Stage::kDssdStage2}) {
      const Schedule s = preset_schedule(name, st);
      EXPECT_NO_THROW(s.validate());
      double prev = lr_at(s, 0);
      for (int it = 0; it < s.total_iters; it += 997) {
        const double lr = lr_at(s, it);
        EXPECT_LE(lr, prev) << name;
        prev = lr;
      }
    }
  }
  const Schedule r = preset_schedule("voc07", Stage::kSsd).rescaled(80);
  ASSERT_EQ(r.milestones.size(), 2u);
  EXPECT_EQ(r.milestones[0].first, 60);
  Schedule bad = constant(1e-3, 10);
  bad.milestones = {{5, 1e-4}, {5, 1e-5}};
  EXPECT_THROW(bad.validate(), SpecError);
}

TEST(TrainSsd, OverfitsOneImage) {
  const PyramidSpec spec = preset_spec("toy-16");
  const auto data = toy16_data(1);
  const TrainResult r = train_ssd(spec, data, constant(1e-2, 200), 3, plain());
  ASSERT_FALSE(r.aborted) << r.error;
  ASSERT_EQ(r.losses.size(), 200u);
  EXPECT_LT(r.losses.back(), r.losses.front());
  const double head = std::accumulate(r.losses.begin(), r.losses.begin() + 10, 0.0);
  const double tail = std::accumulate(r.losses.end() - 10, r.losses.end(), 0.0);
  EXPECT_LT(tail, 0.5 * head);
  EXPECT_EQ(r.checkpoint.iteration, 200);
}

TEST(TrainSsd, ZeroLearningRateKeepsTrainableParameters) {
  const PyramidSpec spec = preset_spec("toy-16");
  const NetworkGraph init = assemble_ssd(spec, 4);
  const TrainResult r = train_ssd(spec, toy16_data(2), constant(0.0, 5), 4, plain(2));
  for (const auto& name : init.param_names(true)) {
    const Tensor* t = r.checkpoint.find(name);
    ASSERT_NE(t, nullptr) << name;
    EXPECT_TRUE(tensors_identical(*t, init.param(name))) << name;
  }
}

TEST(TrainSsd, DeterministicPerSeed) {
  const PyramidSpec spec = preset_spec("toy-16");
  const auto data = toy16_data(4);
  TrainConfig cfg;
  cfg.batch_size = 2;
  const TrainResult a = train_ssd(spec, data, constant(1e-2, 10), 5, cfg);
  const TrainResult b = train_ssd(spec, data, constant(1e-2, 10), 5, cfg);
  EXPECT_EQ(serialize(a.checkpoint), serialize(b.checkpoint));
  EXPECT_EQ(a.losses, b.losses);
  const TrainResult c = train_ssd(spec, data, constant(1e-2, 10), 6, cfg);
  EXPECT_NE(serialize(a.checkpoint), serialize(c.checkpoint));
}

TEST(TrainSsd, RejectsEmptyDataset) {
  EXPECT_THROW(train_ssd(preset_spec("toy-16"), {}, constant(1e-2, 1), 1), SpecError);
}

TEST(TrainSsd, CallbackCadence) {
  TrainConfig cfg = plain();
  cfg.log_every = 4;
  std::vector<int> seen;
  train_ssd(preset_spec("toy-16"), toy16_data(1), constant(1e-2, 10), 1, cfg,
            [&](const TrainEvent& e) { seen.push_back(e.iteration); });
  EXPECT_EQ(seen, (std::vector<int>{0, 4, 8, 9}));
}

class TwoStage : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    spec_ = new PyramidSpec(preset_spec("toy-16"));
    data_ = new std::vector<Sample>(toy16_data(3));
    ssd_ = new Checkpoint(train_ssd(*spec_, *data_, constant(1e-2, 20), 7, plain()).checkpoint);
  }
  static void TearDownTestSuite() {
    delete spec_;
    delete data_;
    delete ssd_;
  }
  static PyramidSpec* spec_;
  static std::vector<Sample>* data_;
  static Checkpoint* ssd_;
};
PyramidSpec* TwoStage::spec_ = nullptr;
std::vector<Sample>* TwoStage::data_ = nullptr;
Checkpoint* TwoStage::ssd_ = nullptr;

TEST_F(TwoStage, StageOneFreezesEncoderAndTrainsDecoder) {
  TrainConfig cfg;
  cfg.batch_size = 2;
  const TrainResult r = train_dssd_stage1(*ssd_, *spec_, *data_, constant(1e-2, 10), 8, cfg);
  ASSERT_FALSE(r.aborted);
  EXPECT_EQ(r.checkpoint.stage, Stage::kDssdStage1);
  // Finer-level SSD prediction modules are replaced by decoder ones; every
  // other SSD tensor carries over and must come out untouched.
  std::size_t frozen = 0;
  for (const auto& [name, t] : r.checkpoint.tensors) {
    if (name.starts_with(kMomentumPrefix) || is_decoder_param(name)) continue;
    const Tensor* before = ssd_->find(name);
    ASSERT_NE(before, nullptr) << name;
    EXPECT_TRUE(tensors_identical(*before, t)) << name;
    ++frozen;
  }
  EXPECT_GT(frozen, 0u);
  EXPECT_EQ(r.checkpoint.find(std::string(kMomentumPrefix) + "backbone.stem1.conv.weight"), nullptr);

  const NetworkGraph init = assemble_dssd(build_graph(*ssd_), *spec_, 8);
  std::size_t moved = 0, decoder = 0;
  for (const auto& name : init.param_names(true)) {
    if (!is_decoder_param(name)) continue;
    ++decoder;
    if (!tensors_identical(*r.checkpoint.find(name), init.param(name))) ++moved;
  }
  EXPECT_GT(decoder, 0u);
  EXPECT_GT(moved, decoder / 2);

  const NetworkGraph rebuilt = build_graph(r.checkpoint);
  for (const auto& name : rebuilt.param_names(true)) {
    EXPECT_EQ(rebuilt.is_frozen(name), !is_decoder_param(name)) << name;
  }
}

TEST_F(TwoStage, StageOneRejectsWrongInputs) {
  PyramidSpec other = preset_spec("toy-64");
  EXPECT_THROW(train_dssd_stage1(*ssd_, other, *data_, constant(1e-2, 1), 1), SpecError);
  PyramidSpec prod = *spec_;
  prod.dm_combine = prod.dm_combine == Combine::kProd ? Combine::kSum : Combine::kProd;
  EXPECT_NO_THROW(train_dssd_stage1(*ssd_, prod, *data_, constant(1e-2, 1), 1, plain()));
  EXPECT_THROW(train_dssd_stage2(*ssd_, *data_, constant(1e-2, 1), 1), SpecError);
}

TEST_F(TwoStage, StageTwoZeroIterationsAndUnfreeze) {
  const Checkpoint s1 =
      train_dssd_stage1(*ssd_, *spec_, *data_, constant(1e-2, 3), 9, plain()).checkpoint;
  const TrainResult zero = train_dssd_stage2(s1, *data_, constant(1e-3, 0), 9);
  Checkpoint relabelled = s1;
  relabelled.stage = Stage::kDssdStage2;
  EXPECT_EQ(serialize(zero.checkpoint), serialize(relabelled));

  const TrainResult r = train_dssd_stage2(s1, *data_, constant(1e-2, 3), 9, plain());
  const NetworkGraph g = build_graph(r.checkpoint);
  EXPECT_TRUE(g.freeze_mask().empty());
  std::size_t encoder_moved = 0;
  for (const auto& name : g.param_names(true)) {
    if (is_decoder_param(name)) continue;
    if (!tensors_identical(*r.checkpoint.find(name), *s1.find(name))) ++encoder_moved;
  }
  EXPECT_GT(encoder_moved, 0u);
}

TEST_F(TwoStage, EvalLossIsFiniteAndDeterministic) {
  const NetworkGraph g = build_graph(*ssd_);
  const double a = eval_loss(g, *spec_, *data_, 2);
  EXPECT_TRUE(std::isfinite(a));
  EXPECT_EQ(a, eval_loss(g, *spec_, *data_, 2));
}

}  // namespace
}  // namespace dssd
