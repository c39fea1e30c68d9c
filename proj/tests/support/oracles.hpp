#pragma once

// Independent reference implementations used to check the library. They
// favour directness over speed and share no code with the kernels.

#include <cstdint>
#include <functional>
#include <string>
#include <random>
#include <span>
#include <vector>

#include "dssd/anchors.hpp"
#include "dssd/graph.hpp"
#include "dssd/loss.hpp"
#include "dssd/postprocess.hpp"

namespace dssd::oracle {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0);

/// Direct seven-loop convolution in double precision.
Tensor conv2d(const Tensor& input, const ConvParams& p);
/// Scatter-form transposed convolution: every input pixel stamps its
/// weighted kernel into the output.
Tensor deconv2d(const Tensor& input, const ConvParams& p);
Tensor maxpool2d(const Tensor& input, int kernel, int stride);
Tensor batchnorm_infer(const Tensor& input, const BnParams& p);

/// Repeatedly takes the best remaining box (ties: lowest index) and discards
/// everything overlapping it above the threshold.
std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold,
                           std::size_t top_k);

/// Matching restated over an explicit list of (IoU, gt, anchor) triples.
MatchResult match(std::span<const GroundTruth> gts, std::span<const Box> anchors,
                  double threshold);

/// Loss from the definition: per-anchor softmax cross-entropy and smooth L1
/// in long double, negatives chosen by a full sort of background losses.
double multibox_loss(const Predictions& pred, std::span<const std::vector<GroundTruth>> gts,
                     std::span<const Box> anchors, double threshold, int ratio);

double max_abs_diff(std::span<const float> a, std::span<const float> b);

/// sum(weights * output) and its seed gradient, for scalarizing graph
/// outputs in gradient checks.
struct Projection {
  Tensor weights;
  double apply(const Tensor& t) const;
};

/// Relative gradient errors of every trainable parameter and every input of
/// `graph` under the objective sum_i proj_i . output(node_i).
struct GraphGradCheck {
  double max_relative_error = 0.0;
  double max_entry_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};
GraphGradCheck check_graph_gradients(NetworkGraph& graph, std::vector<Tensor> inputs,
                                     const std::vector<int>& output_nodes, std::uint64_t seed,
                                     Mode mode, std::size_t max_entries_per_tensor = 24,
                                     float step = 1e-3f);

}  // namespace dssd::oracle

namespace dssd::oracle {

/// One entry of the gradient suite: a builder that runs a central-difference
/// check for a given seed and finite-difference step, the tolerance it must
/// meet, and the step it is checked at.
struct GradCase {
  std::string name;
  double tolerance;
  float step;
  std::function<GraphGradCheck(std::uint64_t seed, float step)> run;
};

/// Kernels (conv, dilated conv, deconv, batch norm, relu, pooling,
/// element-wise), composite modules (prediction variants b-d, deconvolution
/// module in both combine modes, toy-16 DSSD) and the multibox loss.
std::vector<GradCase> gradient_suite();

}  // namespace dssd::oracle
