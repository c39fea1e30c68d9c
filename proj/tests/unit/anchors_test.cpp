#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "dssd/anchors.hpp"
#include "dssd/errors.hpp"
#include "dssd/pyramid_spec.hpp"
#include "oracles.hpp"

namespace dssd {
namespace {

std::size_t anchor_count(const char* preset) {
  const PyramidSpec spec = preset_spec(preset);
  std::vector<int> sizes;
  for (const auto& l : spec.levels) sizes.push_back(l.size);
  return generate_anchors(AnchorConfig::linear(sizes, spec.aspect_ratios)).size();
}

Box random_box(std::mt19937_64& rng, double min_side = 0.05, double max_side = 0.6) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double w = min_side + (max_side - min_side) * u(rng);
  const double h = min_side + (max_side - min_side) * u(rng);
  return Box{u(rng), u(rng), w, h};
}

AnchorSet random_anchors(std::mt19937_64& rng, std::size_t n) {
  AnchorSet set;
  for (std::size_t i = 0; i < n; ++i) set.boxes.push_back(random_box(rng, 0.05, 0.5));
  set.levels.push_back(LevelGeometry{1, 1, 0, n});
  return set;
}

TEST(Anchors, PresetGeometryCounts) {
  EXPECT_EQ(anchor_count("321"), 17080u);
  EXPECT_EQ(anchor_count("513"), 43688u);
  EXPECT_EQ(anchor_count("toy-64"), 680u);
}

TEST(Anchors, CountFormulaAndLayout) {
  const AnchorConfig cfg = AnchorConfig::linear({5, 3, 1}, {2.0, 3.0});
  const AnchorSet set = generate_anchors(cfg);
  EXPECT_EQ(set.size(), static_cast<std::size_t>(6 * (25 + 9 + 1)));
  ASSERT_EQ(set.levels.size(), 3u);
  EXPECT_EQ(set.levels[1].first, 150u);
  // Second location of level 0 is column 1 of row 0.
  const Box& b = set.boxes[6];
  EXPECT_NEAR(b.cx, 1.5 / 5, 1e-12);
  EXPECT_NEAR(b.cy, 0.5 / 5, 1e-12);
  // Ratio-2 box of the first location: w = s*sqrt(2), h = s/sqrt(2).
  const double s = cfg.scales[0];
  EXPECT_NEAR(set.boxes[2].w, s * std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(set.boxes[2].h, s / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(set.boxes[3].w, s / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(set.boxes[1].w, cfg.extra_scales[0], 1e-12);
}

TEST(Anchors, MinimalConfigIsTwoCentredBoxes) {
  const AnchorSet set = generate_anchors(AnchorConfig::linear({1}, {}));
  ASSERT_EQ(set.size(), 2u);
  for (const Box& b : set.boxes) {
    EXPECT_DOUBLE_EQ(b.cx, 0.5);
    EXPECT_DOUBLE_EQ(b.cy, 0.5);
  }
  EXPECT_THROW(generate_anchors(AnchorConfig::linear({}, {2.0})), SpecError);
}

TEST(Jaccard, ClosedForms) {
  const Box a = Box::from_corners(0, 0, 2, 2);
  EXPECT_DOUBLE_EQ(jaccard(a, a), 1.0);
  EXPECT_DOUBLE_EQ(jaccard(a, Box::from_corners(3, 3, 4, 4)), 0.0);
  EXPECT_NEAR(jaccard(a, Box::from_corners(1, 1, 3, 3)), 1.0 / 7.0, 1e-15);
}

TEST(Match, ExactAnchorIsPositiveWithUnitIou) {
  const AnchorSet set = generate_anchors(AnchorConfig::linear({4, 2}, {2.0}));
  const std::vector<GroundTruth> gts{{set.boxes[17], 2}};
  const MatchResult m = match(gts, set);
  EXPECT_EQ(m.state[17], AnchorState::kPositive);
  EXPECT_EQ(m.label[17], 2);
  EXPECT_DOUBLE_EQ(m.best_iou[17], 1.0);
  for (float v : m.target[17]) EXPECT_FLOAT_EQ(v, 0.0f);
}

TEST(Match, LowOverlapGroundTruthStillGetsOneAnchor) {
  AnchorSet set;
  set.boxes = {Box::from_corners(0, 0, 0.2, 0.2), Box::from_corners(0.7, 0.7, 1, 1)};
  set.levels.push_back(LevelGeometry{1, 2, 0, 2});
  const std::vector<GroundTruth> gts{{Box::from_corners(0.1, 0.1, 0.4, 0.4), 1}};
  const MatchResult m = match(gts, set);
  EXPECT_LT(m.best_iou[0], 0.5);
  EXPECT_EQ(m.positive_count(), 1u);
  EXPECT_EQ(m.state[0], AnchorState::kPositive);
  EXPECT_EQ(m.state[1], AnchorState::kNegative);
}

TEST(Match, EqualsExhaustiveOracle) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    const AnchorSet set = random_anchors(rng, 100);
    std::vector<GroundTruth> gts;
    for (int g = 0; g < 10; ++g) gts.push_back({random_box(rng), 1 + g % 3});
    const MatchResult got = match(gts, set);
    const MatchResult want = oracle::match(gts, set.boxes, 0.5);
    ASSERT_EQ(got.state, want.state) << "trial " << trial;
    ASSERT_EQ(got.gt_index, want.gt_index) << "trial " << trial;
    ASSERT_EQ(got.label, want.label);
    for (std::size_t a = 0; a < set.size(); ++a) {
      for (int k = 0; k < 4; ++k) EXPECT_NEAR(got.target[a][k], want.target[a][k], 1e-5);
    }
    EXPECT_GE(got.positive_count(), gts.size());
  }
}

TEST(Match, EmptyAnchorsRejected) {
  const std::vector<GroundTruth> gts{{Box{0.5, 0.5, 0.1, 0.1}, 1}};
  EXPECT_THROW(match(gts, AnchorSet{}), SpecError);
}

TEST(Encode, WorkedExampleAndIdentity) {
  const Box anchor{0.5, 0.5, 0.2, 0.2};
  const auto t = encode(Box{0.52, 0.5, 0.4, 0.2}, anchor);
  EXPECT_NEAR(t[0], 1.0, 1e-6);
  EXPECT_NEAR(t[1], 0.0, 1e-6);
  EXPECT_NEAR(t[2], std::log(2.0) / 0.2, 1e-6);
  EXPECT_NEAR(t[3], 0.0, 1e-6);
  for (float v : encode(anchor, anchor)) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(encode(Box{0.5, 0.5, 0.0, 0.1}, anchor), SpecError);
}

TEST(Encode, DecodeRoundTrip) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    const Box g = random_box(rng, 0.02, 0.9);
    const Box a = random_box(rng, 0.02, 0.9);
    const auto t = encode(g, a);
    const Box back = decode(t, a);
    EXPECT_NEAR(back.cx, g.cx, 1e-6);
    EXPECT_NEAR(back.cy, g.cy, 1e-6);
    EXPECT_NEAR(back.w, g.w, 1e-6);
    EXPECT_NEAR(back.h, g.h, 1e-6);
  }
}

MatchResult provisional(std::size_t positives, std::size_t negatives) {
  MatchResult m;
  const std::size_t n = positives + negatives;
  m.state.assign(n, AnchorState::kNegative);
  m.label.assign(n, 0);
  m.gt_index.assign(n, -1);
  m.best_iou.assign(n, 0.0);
  m.target.assign(n, {0, 0, 0, 0});
  for (std::size_t i = 0; i < positives; ++i) {
    m.state[i * 7 % n] = AnchorState::kPositive;
    m.label[i * 7 % n] = 1;
  }
  return m;
}

TEST(Mining, KeepsThreeNegativesPerPositive) {
  const MatchResult m = provisional(4, 100);
  std::vector<float> losses(104);
  std::iota(losses.begin(), losses.end(), 0.0f);
  const MatchResult mined = mine_negatives(losses, m);
  EXPECT_EQ(mined.positive_count(), 4u);
  EXPECT_EQ(mined.negative_count(), 12u);
  // The retained ones are the highest-loss provisional negatives.
  for (std::size_t a = 92; a < 104; ++a) {
    if (m.state[a] == AnchorState::kNegative) {
      EXPECT_EQ(mined.state[a], AnchorState::kNegative);
    }
  }
}

TEST(Mining, SaturatesAndCapsWithoutPositives) {
  const MatchResult few = provisional(4, 5);
  EXPECT_EQ(mine_negatives(std::vector<float>(9, 1.0f), few).negative_count(), 5u);

  const MatchResult none = provisional(0, 100);
  std::vector<float> losses(100, 1.0f);
  const MatchResult mined = mine_negatives(losses, none);
  EXPECT_EQ(mined.negative_count(), 32u);
  // Equal losses: lower anchor index wins.
  for (std::size_t a = 0; a < 32; ++a) EXPECT_EQ(mined.state[a], AnchorState::kNegative);
  EXPECT_EQ(mine_negatives(std::vector<float>(10, 1.0f), provisional(0, 10)).negative_count(), 10u);
}

TEST(Mining, NeverDemotesPositives) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 5.0f);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t pos = trial % 6;
    const MatchResult m = provisional(pos, 60);
    std::vector<float> losses(m.state.size());
    for (float& l : losses) l = u(rng);
    const MatchResult mined = mine_negatives(losses, m, 3);
    EXPECT_EQ(mined.positive_count(), m.positive_count());
    EXPECT_LE(mined.negative_count(), pos > 0 ? 3 * pos : 32u);
  }
}

}  // namespace
}  // namespace dssd
