#include "dssd/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dssd/errors.hpp"

namespace dssd {

double jaccard(const Box& a, const Box& b) {
  const double iw = std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0());
  const double ih = std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

AnchorConfig AnchorConfig::linear(std::vector<int> level_sizes, std::vector<double> aspect_ratios,
                                  double min_scale, double max_scale) {
  AnchorConfig cfg;
  const std::size_t k = level_sizes.size();
  cfg.level_sizes = std::move(level_sizes);
  cfg.aspect_ratios = std::move(aspect_ratios);
  cfg.scales.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    cfg.scales[i] = k == 1 ? min_scale
                           : min_scale + (max_scale - min_scale) * static_cast<double>(i) / (k - 1);
  }
  cfg.extra_scales.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double next = i + 1 < k ? cfg.scales[i + 1] : 1.0;
    cfg.extra_scales[i] = std::sqrt(cfg.scales[i] * next);
  }
  return cfg;
}

AnchorSet generate_anchors(const AnchorConfig& cfg) {
  const std::size_t levels = cfg.level_sizes.size();
  if (levels == 0) throw SpecError("anchors: no levels");
  if (cfg.scales.size() != levels || cfg.extra_scales.size() != levels) {
    throw SpecError("anchors: one scale and one extra scale per level are required");
  }
  for (double r : cfg.aspect_ratios) {
    if (!(r > 0.0)) throw SpecError("anchors: aspect ratios must be positive");
  }
  AnchorSet set;
  const int per_loc = cfg.boxes_per_location();
  for (std::size_t k = 0; k < levels; ++k) {
    const int size = cfg.level_sizes[k];
    const double s = cfg.scales[k];
    const double s_extra = cfg.extra_scales[k];
    if (size < 1 || !(s > 0.0) || !(s_extra > 0.0)) {
      throw SpecError("anchors: level sizes and scales must be positive");
    }
    LevelGeometry geo{size, per_loc, set.boxes.size(),
                      static_cast<std::size_t>(size) * size * per_loc};
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double cx = (x + 0.5) / size;
        const double cy = (y + 0.5) / size;
        set.boxes.push_back({cx, cy, s, s});
        set.boxes.push_back({cx, cy, s_extra, s_extra});
        for (double r : cfg.aspect_ratios) {
          const double sr = std::sqrt(r);
          set.boxes.push_back({cx, cy, s * sr, s / sr});
          set.boxes.push_back({cx, cy, s / sr, s * sr});
        }
      }
    }
    set.levels.push_back(geo);
  }
  return set;
}

std::size_t MatchResult::positive_count() const {
  return static_cast<std::size_t>(std::count(state.begin(), state.end(), AnchorState::kPositive));
}

std::size_t MatchResult::negative_count() const {
  return static_cast<std::size_t>(std::count(state.begin(), state.end(), AnchorState::kNegative));
}

MatchResult match(std::span<const GroundTruth> gts, const AnchorSet& anchors, double threshold) {
  const std::size_t na = anchors.size();
  if (na == 0) throw SpecError("match: empty anchor set");
  const std::size_t ng = gts.size();
  MatchResult m;
  m.state.assign(na, AnchorState::kNegative);
  m.label.assign(na, 0);
  m.gt_index.assign(na, -1);
  m.best_iou.assign(na, 0.0);
  m.target.assign(na, {0.0f, 0.0f, 0.0f, 0.0f});
  if (ng == 0) return m;

  std::vector<double> iou(ng * na);
  std::vector<int> best_gt(na, -1);
  for (std::size_t g = 0; g < ng; ++g) {
    for (std::size_t a = 0; a < na; ++a) {
      const double v = jaccard(gts[g].box, anchors.boxes[a]);
      iou[g * na + a] = v;
      if (best_gt[a] < 0 || v > m.best_iou[a]) {
        m.best_iou[a] = v;
        best_gt[a] = static_cast<int>(g);
      }
    }
  }

  auto assign = [&](std::size_t a, std::size_t g) {
    m.state[a] = AnchorState::kPositive;
    m.label[a] = gts[g].label;
    m.gt_index[a] = static_cast<int>(g);
    m.target[a] = encode(gts[g].box, anchors.boxes[a]);
  };

  std::vector<char> gt_done(ng, 0);
  std::vector<char> claimed(na, 0);
  for (std::size_t round = 0; round < ng; ++round) {
    double best = -1.0;
    std::size_t bg = 0;
    std::size_t ba = 0;
    for (std::size_t g = 0; g < ng; ++g) {
      if (gt_done[g]) continue;
      for (std::size_t a = 0; a < na; ++a) {
        if (!claimed[a] && iou[g * na + a] > best) {
          best = iou[g * na + a];
          bg = g;
          ba = a;
        }
      }
    }
    if (best < 0.0) break;  // more ground truths than anchors
    gt_done[bg] = 1;
    claimed[ba] = 1;
    assign(ba, bg);
  }

  for (std::size_t a = 0; a < na; ++a) {
    if (!claimed[a] && m.best_iou[a] > threshold) assign(a, static_cast<std::size_t>(best_gt[a]));
  }
  return m;
}

std::array<float, 4> encode(const Box& gt, const Box& anchor) {
  if (!(gt.w > 0.0 && gt.h > 0.0 && anchor.w > 0.0 && anchor.h > 0.0)) {
    throw SpecError("encode: boxes must have positive width and height");
  }
  return {static_cast<float>((gt.cx - anchor.cx) / (anchor.w * kCenterVariance)),
          static_cast<float>((gt.cy - anchor.cy) / (anchor.h * kCenterVariance)),
          static_cast<float>(std::log(gt.w / anchor.w) / kSizeVariance),
          static_cast<float>(std::log(gt.h / anchor.h) / kSizeVariance)};
}

Box decode(std::span<const float> offsets, const Box& anchor) {
  if (offsets.size() != 4) throw SpecError("decode: expected 4 offsets");
  if (!(anchor.w > 0.0 && anchor.h > 0.0)) {
    throw SpecError("decode: anchor must have positive width and height");
  }
  return Box{anchor.cx + offsets[0] * kCenterVariance * anchor.w,
             anchor.cy + offsets[1] * kCenterVariance * anchor.h,
             anchor.w * std::exp(offsets[2] * kSizeVariance),
             anchor.h * std::exp(offsets[3] * kSizeVariance)};
}

MatchResult mine_negatives(std::span<const float> conf_losses, MatchResult m, int ratio,
                           std::size_t zero_positive_cap) {
  if (conf_losses.size() != m.state.size()) {
    throw ShapeError("mine_negatives: " + std::to_string(conf_losses.size()) +
                     " losses for " + std::to_string(m.state.size()) + " anchors");
  }
  std::vector<std::size_t> negatives;
  for (std::size_t a = 0; a < m.state.size(); ++a) {
    if (m.state[a] == AnchorState::kNegative) negatives.push_back(a);
  }
  const std::size_t positives = m.positive_count();
  const std::size_t keep =
      std::min(negatives.size(), positives > 0 ? positives * static_cast<std::size_t>(ratio)
                                               : zero_positive_cap);
  std::stable_sort(negatives.begin(), negatives.end(), [&](std::size_t a, std::size_t b) {
    return conf_losses[a] > conf_losses[b];
  });
  for (std::size_t i = keep; i < negatives.size(); ++i) {
    m.state[negatives[i]] = AnchorState::kIgnored;
  }
  return m;
}

}  // namespace dssd
