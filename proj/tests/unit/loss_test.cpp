#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dssd/errors.hpp"
#include "dssd/loss.hpp"
#include "oracles.hpp"

namespace dssd {
namespace {

TEST(SmoothL1, Values) {
  EXPECT_DOUBLE_EQ(smooth_l1(0.0), 0.0);
  EXPECT_DOUBLE_EQ(smooth_l1(0.5), 0.125);
  EXPECT_DOUBLE_EQ(smooth_l1(-2.0), 1.5);
  EXPECT_DOUBLE_EQ(smooth_l1_grad(0.5), 0.5);
  EXPECT_DOUBLE_EQ(smooth_l1_grad(-2.0), -1.0);
}

TEST(SoftmaxCe, UniformAndConfident) {
  const std::vector<float> flat(5, 0.3f);
  EXPECT_NEAR(softmax_ce(flat, 2), std::log(5.0), 1e-6);
  const std::vector<float> sharp{20.0f, 0.0f};
  EXPECT_NEAR(softmax_ce(sharp, 0), 2.06e-9, 1e-11);
  const std::vector<float> huge{1000.0f, -1000.0f, 0.0f};
  EXPECT_TRUE(std::isfinite(softmax_ce(huge, 1)));
}

TEST(SoftmaxCe, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> g(0.0f, 2.0f);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> logits(6);
    for (float& v : logits) v = g(rng);
    const int label = trial % 6;
    std::vector<float> grad(6);
    softmax_ce_grad(logits, label, grad);
    double sum = 0.0;
    for (int k = 0; k < 6; ++k) {
      sum += grad[k];
      std::vector<double> up(logits.begin(), logits.end());
      std::vector<double> dn = up;
      const double h = 1e-4;
      up[k] += h;
      dn[k] -= h;
      auto ce = [&](const std::vector<double>& z) {
        double m = z[0];
        for (double v : z) m = std::max(m, v);
        double s = 0.0;
        for (double v : z) s += std::exp(v - m);
        return std::log(s) + m - z[label];
      };
      EXPECT_NEAR(grad[k], (ce(up) - ce(dn)) / (2 * h), 1e-4);
    }
    EXPECT_NEAR(sum, 0.0, 1e-6);
  }
}

struct Scene {
  AnchorSet anchors;
  std::vector<std::vector<GroundTruth>> gts;
  Predictions pred;
};

Scene random_scene(std::uint64_t seed, int batch, int classes) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<float> g(0.0f, 1.0f);
  Scene s;
  s.anchors = generate_anchors(AnchorConfig::linear({5, 2}, {2.0}));  // 4*25 + 4*4
  s.gts.resize(batch);
  for (int n = 0; n < batch; ++n) {
    for (int i = 0; i < 1 + n % 3; ++i) {
      s.gts[n].push_back({Box{0.2 + 0.6 * u(rng), 0.2 + 0.6 * u(rng), 0.1 + 0.4 * u(rng),
                              0.1 + 0.4 * u(rng)},
                          1 + static_cast<int>(u(rng) * (classes - 1))});
    }
  }
  s.pred = Predictions(batch, static_cast<int>(s.anchors.size()), classes);
  for (float& v : s.pred.conf) v = g(rng);
  for (float& v : s.pred.loc) v = g(rng);
  return s;
}

std::vector<MatchResult> mined_matches(const Scene& s) {
  std::vector<MatchResult> out;
  for (int n = 0; n < s.pred.batch; ++n) {
    out.push_back(mine_negatives(background_losses(s.pred, n), match(s.gts[n], s.anchors)));
  }
  return out;
}

TEST(MultiboxLoss, EqualsDefinitionOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scene s = random_scene(seed, 3, 4);
    const LossResult r = multibox_loss(s.pred, mined_matches(s));
    const double want = oracle::multibox_loss(s.pred, s.gts, s.anchors.boxes, 0.5, 3);
    EXPECT_NEAR(r.report.total, want, 1e-5 * std::max(1.0, std::abs(want))) << "seed " << seed;
    EXPECT_NEAR(r.report.total,
                (r.report.loc_loss + r.report.conf_loss) /
                    std::max<std::size_t>(r.report.positive_count, 1),
                1e-9);
  }
}

TEST(MultiboxLoss, GradientMatchesFiniteDifferences) {
  Scene s = random_scene(11, 2, 3);
  const std::vector<MatchResult> m = mined_matches(s);
  const LossResult r = multibox_loss(s.pred, m);
  auto check = [&](std::vector<float>& values, const std::vector<float>& grad) {
    for (std::size_t i = 0; i < values.size(); i += 7) {
      const float orig = values[i];
      const float h = 1e-2f;
      values[i] = orig + h;
      const double up = multibox_loss(s.pred, m).report.total;
      values[i] = orig - h;
      const double dn = multibox_loss(s.pred, m).report.total;
      values[i] = orig;
      EXPECT_NEAR(grad[i], (up - dn) / (2.0 * h), 1e-4) << "entry " << i;
    }
  };
  check(s.pred.conf, r.grad.conf);
  // Smooth L1 has a kink at 1; keep residuals clear of it.
  for (std::size_t a = 0; a < s.anchors.size(); ++a) {
    for (int n = 0; n < 2; ++n) {
      if (m[n].state[a] != AnchorState::kPositive) continue;
      for (int k = 0; k < 4; ++k) {
        const double d = s.pred.loc_at(n, static_cast<int>(a))[k] - m[n].target[a][k];
        if (std::abs(std::abs(d) - 1.0) < 0.02) s.pred.loc_at(n, static_cast<int>(a))[k] += 0.05f;
      }
    }
  }
  check(s.pred.loc, multibox_loss(s.pred, m).grad.loc);
}

TEST(MultiboxLoss, NoPositivesAndNothingKept) {
  Predictions pred(1, 10, 3);
  MatchResult m;
  m.state.assign(10, AnchorState::kIgnored);
  m.label.assign(10, 0);
  m.gt_index.assign(10, -1);
  m.best_iou.assign(10, 0.0);
  m.target.assign(10, {0, 0, 0, 0});
  const std::vector<MatchResult> ms{m};
  const LossResult r = multibox_loss(pred, ms);
  EXPECT_EQ(r.report.total, 0.0);
  EXPECT_EQ(r.report.positive_count, 0u);
  for (float g : r.grad.conf) EXPECT_EQ(g, 0.0f);
}

TEST(MultiboxLoss, PerfectLocalizationHasZeroLocLoss) {
  Scene s = random_scene(3, 2, 4);
  const std::vector<MatchResult> m = mined_matches(s);
  for (int n = 0; n < 2; ++n) {
    for (std::size_t a = 0; a < s.anchors.size(); ++a) {
      if (m[n].state[a] != AnchorState::kPositive) continue;
      auto loc = s.pred.loc_at(n, static_cast<int>(a));
      for (int k = 0; k < 4; ++k) loc[k] = m[n].target[a][k];
    }
  }
  const LossResult r = multibox_loss(s.pred, m);
  EXPECT_GT(r.report.positive_count, 0u);
  EXPECT_EQ(r.report.loc_loss, 0.0);
  for (float g : r.grad.loc) EXPECT_EQ(g, 0.0f);
}

TEST(MultiboxLoss, InvariantToGroundTruthOrder) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Scene s = random_scene(seed + 100, 3, 5);
    const double base = multibox_loss(s.pred, mined_matches(s)).report.total;
    for (auto& g : s.gts) std::reverse(g.begin(), g.end());
    EXPECT_NEAR(multibox_loss(s.pred, mined_matches(s)).report.total, base, 1e-9);
  }
}

TEST(MultiboxLoss, RejectsMismatchedLayout) {
  const Scene s = random_scene(1, 2, 3);
  std::vector<MatchResult> m = mined_matches(s);
  m.pop_back();
  EXPECT_THROW(multibox_loss(s.pred, m), ShapeError);
  std::vector<MatchResult> bad = mined_matches(s);
  for (std::size_t a = 0; a < s.anchors.size(); ++a) {
    if (bad[0].state[a] == AnchorState::kPositive) {
      bad[0].label[a] = 7;
      break;
    }
  }
  EXPECT_THROW(multibox_loss(s.pred, bad), SpecError);
}

}  // namespace
}  // namespace dssd
