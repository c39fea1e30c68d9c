#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dssd/anchors.hpp"
#include "dssd/postprocess.hpp"

namespace dssd {

enum class WeightMode { kSqrtArea, kUniform };

struct KMeansResult {
  std::vector<double> centers;  // ascending
  std::vector<int> assignment;
  double error = 0.0;  // weighted within-cluster squared error
};

/// Weighted 1-D k-means: quantile seeding on the first restart, random
/// distinct points on the others; best of `restarts` kept.
KMeansResult kmeans_1d(std::span<const double> values, std::span<const double> weights, int k,
                       std::uint64_t seed, int restarts = 10, int max_iters = 100);

struct ClusterReport {
  int k = 0;
  std::vector<double> centers;    // W/H, ordered by descending member fraction
  std::vector<double> fractions;  // weighted share of members
  std::vector<double> errors;     // error for k = 2, 3, ... as tried
};

/// Clusters W/H of the boxes, growing k from 2 while error(k+1) < 0.8 error(k).
ClusterReport cluster_aspect_ratios(std::span<const Box> boxes, WeightMode mode, std::uint64_t seed,
                                    double improvement = 0.8, int max_k = 16);

/// max(r, 1/r) per element.
std::vector<double> max_ratio(std::span<const double> ratios);

struct SizeBreakdown {
  double small = 0.0;
  double medium = 0.0;
  double large = 0.0;
  double small_max_area = 0.0;  // tercile boundaries on normalized gt area
  double medium_max_area = 0.0;
};

struct EvalReport {
  std::vector<double> ap;  // index = class; NaN for classes absent from gts
  double map = 0.0;
  SizeBreakdown by_size;
};

/// All-point interpolated AP from a score-ranked list of true/false positives.
double average_precision(std::span<const char> is_true_positive, std::size_t num_gts);

/// VOC-style mean AP at one IoU threshold. The size breakdown restricts the
/// gts to an area tercile; detections matched to other gts and unmatched
/// detections outside the tercile's area range are ignored.
EvalReport evaluate_map(const std::vector<std::vector<Detection>>& detections,
                        const std::vector<std::vector<GroundTruth>>& gts, int num_classes,
                        double iou_threshold = 0.5);

}  // namespace dssd
