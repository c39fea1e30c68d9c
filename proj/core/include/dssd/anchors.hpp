#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace dssd {

/// Normalized center-form box.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  static Box from_corners(double x0, double y0, double x1, double y1) {
    return Box{(x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0};
  }
  double x0() const { return cx - w / 2.0; }
  double y0() const { return cy - h / 2.0; }
  double x1() const { return cx + w / 2.0; }
  double y1() const { return cy + h / 2.0; }
  double area() const { return w * h; }
  std::array<double, 4> corners() const { return {x0(), y0(), x1(), y1()}; }
};

double jaccard(const Box& a, const Box& b);

struct AnchorConfig {
  std::vector<int> level_sizes;
  std::vector<double> scales;        // s_k per level
  std::vector<double> extra_scales;  // sqrt(s_k * s_{k+1}) per level
  std::vector<double> aspect_ratios{1.6, 2.0, 3.0};

  int boxes_per_location() const { return 2 + 2 * static_cast<int>(aspect_ratios.size()); }

  /// Scales linear from min_scale to max_scale across the levels; the extra
  /// scale of the last level uses s_{K+1} = 1.
  static AnchorConfig linear(std::vector<int> level_sizes, std::vector<double> aspect_ratios,
                             double min_scale = 0.1, double max_scale = 0.9);
};

struct LevelGeometry {
  int size = 0;
  int boxes_per_location = 0;
  std::size_t first = 0;  // index of the level's first anchor
  std::size_t count = 0;
};

/// Default boxes, level-major, then row-major over locations (row y, column
/// x), then per location: ratio 1 at s_k, ratio 1 at the extra scale, then
/// each ratio r followed by 1/r.
struct AnchorSet {
  std::vector<Box> boxes;
  std::vector<LevelGeometry> levels;

  std::size_t size() const { return boxes.size(); }
};

AnchorSet generate_anchors(const AnchorConfig& config);

// --- matching ---------------------------------------------------------------

struct GroundTruth {
  Box box;
  int label = 1;  // 1..num_classes-1; 0 is background
};

enum class AnchorState : unsigned char { kIgnored, kNegative, kPositive };

inline constexpr double kCenterVariance = 0.1;
inline constexpr double kSizeVariance = 0.2;

struct MatchResult {
  std::vector<AnchorState> state;
  std::vector<int> label;                    // class for positives, 0 otherwise
  std::vector<int> gt_index;                 // matched ground truth, -1 if none
  std::vector<double> best_iou;              // best IoU against any ground truth
  std::vector<std::array<float, 4>> target;  // encoded offsets for positives

  std::size_t positive_count() const;
  std::size_t negative_count() const;
};

/// Two-pass matching. Pass 1: ground truths claim their highest-IoU anchor in
/// order of decreasing IoU (ties: lower ground-truth index, then lower anchor
/// index), regardless of threshold; a claimed anchor is never reassigned.
/// Pass 2: any unclaimed anchor whose best IoU exceeds `threshold` becomes
/// positive for that best ground truth. Everything else is a provisional
/// negative.
MatchResult match(std::span<const GroundTruth> gts, const AnchorSet& anchors,
                  double threshold = 0.5);

std::array<float, 4> encode(const Box& gt, const Box& anchor);
Box decode(std::span<const float> offsets, const Box& anchor);

/// Keeps the `ratio * #positives` provisional negatives with the highest
/// confidence loss (ties: lower anchor index); the rest become ignored. With
/// no positives, up to `zero_positive_cap` negatives are kept.
MatchResult mine_negatives(std::span<const float> conf_losses, MatchResult m, int ratio = 3,
                           std::size_t zero_positive_cap = 32);

}  // namespace dssd
