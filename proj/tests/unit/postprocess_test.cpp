#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dssd/blocks.hpp"
#include "dssd/errors.hpp"
#include "dssd/postprocess.hpp"
#include "oracles.hpp"

namespace dssd {
namespace {

void perturb_batchnorm(NetworkGraph& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  g.for_each_param([&](ParamView p) {
    auto ends = [&](std::string_view s) { return p.name.ends_with(s); };
    if (ends(".scale")) p.value = oracle::random_tensor(p.value.shape(), rng, 0.5, 1.5);
    if (ends(".shift")) p.value = oracle::random_tensor(p.value.shape(), rng, -0.3, 0.5);
    if (ends(".running_mean")) p.value = oracle::random_tensor(p.value.shape(), rng, -0.5, 0.5);
    if (ends(".running_var")) p.value = oracle::random_tensor(p.value.shape(), rng, 0.5, 2.0);
  });
}

bool same_detection(const Detection& a, const Detection& b, double tol) {
  return a.label == b.label && std::abs(a.score - b.score) <= tol &&
         std::abs(a.box.cx - b.box.cx) <= tol && std::abs(a.box.cy - b.box.cy) <= tol &&
         std::abs(a.box.w - b.box.w) <= tol && std::abs(a.box.h - b.box.h) <= tol;
}

TEST(FoldBatchnorm, IdentityNormalization) {
  std::mt19937_64 rng(1);
  ConvParams conv;
  conv.weights = oracle::random_tensor(Shape{3, 2, 3, 3}, rng);
  conv.bias = oracle::random_tensor(Shape{3, 1, 1, 1}, rng);
  BnParams bn = BnParams::identity(3);
  for (float& v : bn.running_var.data()) v = 1.0f - bn.epsilon;
  const FoldedConv f = fold_batchnorm(conv, bn);
  EXPECT_EQ(f.weights.shape(), conv.weights.shape());
  EXPECT_LT(oracle::max_abs_diff(f.weights.data(), conv.weights.data()), 1e-6);
  EXPECT_LT(oracle::max_abs_diff(f.bias.data(), conv.bias.data()), 1e-6);
}

TEST(FoldBatchnorm, WorkedExample) {
  ConvParams conv;
  conv.weights = Tensor(Shape{1, 1, 1, 1}, 1.0f);
  BnParams bn = BnParams::identity(1);
  bn.scale[0] = 2.0f;
  bn.running_var[0] = 3.0f;
  const FoldedConv f = fold_batchnorm(conv, bn);
  EXPECT_NEAR(f.weights[0], 2.0 / std::sqrt(3.0 + 1e-5), 1e-6);
  EXPECT_NEAR(f.weights[0], 1.1547, 1e-4);
  EXPECT_NEAR(f.bias[0], 0.0, 1e-7);
  EXPECT_THROW(fold_batchnorm(conv, BnParams::identity(2)), ShapeError);
}

TEST(FoldNetwork, SevenPairsRemovedAndIdempotent) {
  NetworkGraph g;
  Initializer init(3);
  int x = g.add_input("x", 3);
  int c = 3;
  for (int i = 0; i < 7; ++i) {
    x = add_conv_bn(g, init, "l" + std::to_string(i), x, c, 4, 3, 1, 1, 1, true);
    c = 4;
  }
  perturb_batchnorm(g, 4);
  EXPECT_EQ(count_foldable(g), 7u);
  const NetworkGraph once = fold_network(g);
  EXPECT_EQ(g.nodes().size() - once.nodes().size(), 7u);
  EXPECT_EQ(count_foldable(once), 0u);
  const NetworkGraph twice = fold_network(once);
  ASSERT_EQ(twice.nodes().size(), once.nodes().size());
  once.for_each_param([&](const std::string& name, const Tensor& t, bool) {
    EXPECT_EQ(twice.param(name).data().size(), t.data().size());
    EXPECT_EQ(oracle::max_abs_diff(twice.param(name).data(), t.data()), 0.0) << name;
  });
}

TEST(FoldNetwork, SharedProducerLeftInPlace) {
  NetworkGraph g;
  Initializer init(5);
  const int x = g.add_input("x", 2);
  const int c = g.add_conv("c", x, init.conv(2, 2, 3, false));
  const int b = g.add_batchnorm("c.bn", c, init.bn(2));
  g.add_eltwise("sum", b, c, Combine::kSum);
  EXPECT_EQ(count_foldable(g), 0u);
  EXPECT_EQ(fold_network(g).nodes().size(), g.nodes().size());
}

class FoldEquivalence : public ::testing::TestWithParam<bool> {};

TEST_P(FoldEquivalence, OutputsAgreeOnFiftyInputs) {
  const PyramidSpec spec = preset_spec("toy-64");
  NetworkGraph g = assemble_ssd(spec, 11);
  if (GetParam()) g = assemble_dssd(g, spec, 12);
  perturb_batchnorm(g, 13);
  const NetworkGraph folded = fold_network(g);
  EXPECT_LT(folded.nodes().size(), g.nodes().size());
  std::mt19937_64 rng(14);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const Tensor x = oracle::random_tensor(Shape{1, 3, spec.input_size, spec.input_size}, rng);
    const ForwardResult a = forward(static_cast<const NetworkGraph&>(g), x);
    const ForwardResult b = forward(folded, x);
    for (std::size_t h = 0; h < g.heads().size(); ++h) {
      worst = std::max(worst, oracle::max_abs_diff(a.class_map(g, h).data(),
                                                   b.class_map(folded, h).data()));
      worst = std::max(worst, oracle::max_abs_diff(a.box_map(g, h).data(),
                                                   b.box_map(folded, h).data()));
    }
  }
  EXPECT_LT(worst, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Networks, FoldEquivalence, ::testing::Values(false, true),
                         [](const auto& info) { return info.param ? "dssd" : "ssd"; });

TEST(Nms, SmallCases) {
  const Box b{0.5, 0.5, 0.2, 0.2};
  const std::vector<Detection> one{{1, 0.7f, b}};
  EXPECT_EQ(nms(one).size(), 1u);
  const std::vector<Detection> twins{{1, 0.8f, b}, {1, 0.9f, b}};
  const auto kept = nms(twins);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_FLOAT_EQ(kept[0].score, 0.9f);
  EXPECT_TRUE(nms(std::vector<Detection>{}).empty());
}

std::vector<Detection> random_detections(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Detection> d;
  for (int i = 0; i < n; ++i) {
    // Coarse scores make ties common.
    const float score = static_cast<float>(std::round(u(rng) * 20) / 20);
    d.push_back({1, score, Box{u(rng), u(rng), 0.05 + 0.3 * u(rng), 0.05 + 0.3 * u(rng)}});
  }
  return d;
}

TEST(Nms, EqualsGreedyOracle) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const auto dets = random_detections(rng, 200);
    for (std::size_t top_k : {std::size_t{200}, std::size_t{15}}) {
      const auto got = nms(dets, 0.45, top_k);
      const auto want = oracle::nms(dets, 0.45, top_k);
      ASSERT_EQ(got.size(), want.size());
      for (std::size_t i = 0; i < got.size(); ++i) EXPECT_TRUE(same_detection(got[i], want[i], 0));
    }
  }
}

TEST(Nms, PermutationInvariantWithDistinctScores) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    auto dets = random_detections(rng, 100);
    for (std::size_t i = 0; i < dets.size(); ++i) dets[i].score = 0.001f * (1 + i);
    std::shuffle(dets.begin(), dets.end(), rng);
    auto a = nms(dets, 0.45, 200);
    std::shuffle(dets.begin(), dets.end(), rng);
    auto b = nms(dets, 0.45, 200);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(same_detection(a[i], b[i], 0));
  }
}

TEST(Detect, AllBackgroundIsEmpty) {
  const AnchorSet anchors = generate_anchors(AnchorConfig::linear({3, 1}, {2.0}));
  Predictions pred(1, static_cast<int>(anchors.size()), 4);
  for (int a = 0; a < pred.anchors; ++a) pred.conf_at(0, a)[0] = 10.0f;
  EXPECT_TRUE(decode_detections(pred, 0, anchors).empty());
  Predictions wrong(1, 3, 4);
  EXPECT_THROW(decode_detections(wrong, 0, anchors), ShapeError);
}

TEST(Detect, DominantAnchorRecoversGroundTruth) {
  const AnchorSet anchors = generate_anchors(AnchorConfig::linear({3, 1}, {2.0}));
  Predictions pred(1, static_cast<int>(anchors.size()), 4);
  for (int a = 0; a < pred.anchors; ++a) pred.conf_at(0, a)[0] = 10.0f;
  const int hit = 13;
  const Box gt{0.48, 0.52, 0.3, 0.25};
  pred.conf_at(0, hit)[0] = 0.0f;
  pred.conf_at(0, hit)[2] = 12.0f;
  const auto t = encode(gt, anchors.boxes[hit]);
  std::copy(t.begin(), t.end(), pred.loc_at(0, hit).begin());
  const auto dets = decode_detections(pred, 0, anchors);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_EQ(dets[0].label, 2);
  EXPECT_GT(dets[0].score, 0.6f);
  EXPECT_NEAR(dets[0].box.cx, gt.cx, 1e-5);
  EXPECT_NEAR(dets[0].box.cy, gt.cy, 1e-5);
  EXPECT_NEAR(dets[0].box.w, gt.w, 1e-5);
  EXPECT_NEAR(dets[0].box.h, gt.h, 1e-5);
}

TEST(Detect, BoxesClampedToUnitSquare) {
  const AnchorSet anchors = generate_anchors(AnchorConfig::linear({1}, {}));
  Predictions pred(1, 2, 2);
  pred.conf_at(0, 0)[1] = 8.0f;
  pred.loc_at(0, 0)[2] = 10.0f;  // width e^2 times the anchor
  const auto dets = decode_detections(pred, 0, anchors);
  ASSERT_FALSE(dets.empty());
  EXPECT_GE(dets[0].box.x0(), 0.0);
  EXPECT_LE(dets[0].box.x1(), 1.0);
}

TEST(Detect, FoldedAndUnfoldedAgree) {
  const PyramidSpec spec = preset_spec("toy-64");
  NetworkGraph g = assemble_dssd(assemble_ssd(spec, 31), spec, 32);
  perturb_batchnorm(g, 33);
  const NetworkGraph folded = fold_network(g);
  std::vector<int> sizes;
  for (const auto& l : spec.levels) sizes.push_back(l.size);
  const AnchorSet anchors = generate_anchors(AnchorConfig::linear(sizes, spec.aspect_ratios));
  std::mt19937_64 rng(34);
  DetectOptions opts;
  opts.score_threshold = 0.3;  // untrained heads rarely clear 0.6
  std::size_t total = 0;
  for (int i = 0; i < 5; ++i) {
    const Tensor x = oracle::random_tensor(Shape{2, 3, spec.input_size, spec.input_size}, rng);
    const auto a = detect(g, anchors, x, spec.num_classes, opts);
    const auto b = detect(folded, anchors, x, spec.num_classes, opts);
    const auto again = detect(g, anchors, x, spec.num_classes, opts);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t n = 0; n < a.size(); ++n) {
      ASSERT_EQ(a[n].size(), b[n].size());
      ASSERT_EQ(a[n].size(), again[n].size());
      total += a[n].size();
      for (std::size_t k = 0; k < a[n].size(); ++k) {
        EXPECT_TRUE(same_detection(a[n][k], b[n][k], 1e-4));
        EXPECT_TRUE(same_detection(a[n][k], again[n][k], 0));
      }
    }
  }
  EXPECT_GT(total, 0u);
}

}  // namespace
}  // namespace dssd
