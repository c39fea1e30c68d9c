#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dssd/anchors.hpp"
#include "dssd/graph.hpp"
#include "dssd/loss.hpp"

namespace dssd {

struct Detection {
  int label = 0;  // >= 1
  float score = 0.0f;
  Box box;  // clamped to [0, 1]
};

/// Weights and bias of a convolution with a following inference-mode batch
/// norm folded in. Shapes match the source ConvParams; the bias is always
/// present.
struct FoldedConv {
  Tensor weights;
  Tensor bias;
};

/// w' = scale * w / sqrt(var + eps); b' = scale * (b - mean) / sqrt(var + eps) + shift.
FoldedConv fold_batchnorm(const ConvParams& conv, const BnParams& bn);
/// Same for a deconv, whose output channels are the weights' second axis.
FoldedConv fold_batchnorm_deconv(const ConvParams& deconv, const BnParams& bn);

/// Number of conv->BN or deconv->BN pairs fold_network would merge.
std::size_t count_foldable(const NetworkGraph& graph);

/// Merges every batch norm whose producer is a conv or deconv consumed by
/// nothing else. Other batch norms are left in place.
NetworkGraph fold_network(const NetworkGraph& graph);

/// Greedy per-class suppression: descending score (ties: lower input
/// index); a box is dropped if its IoU with any kept box exceeds the
/// threshold. At most top_k boxes are kept.
std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold = 0.45,
                           std::size_t top_k = 200);

struct DetectOptions {
  double score_threshold = 0.6;
  double iou_threshold = 0.45;
  std::size_t top_k = 200;
};

/// Softmax, per-class thresholding, decoding, clamping and NMS for image
/// `n` of a batch of predictions. Result sorted by descending score.
std::vector<Detection> decode_detections(const Predictions& pred, int n, const AnchorSet& anchors,
                                         const DetectOptions& options = {});

/// Runs the network in inference mode and decodes every image of `images`.
std::vector<std::vector<Detection>> detect(const NetworkGraph& graph, const AnchorSet& anchors,
                                           const Tensor& images, int num_classes,
                                           const DetectOptions& options = {});

struct Footprint {
  std::size_t parameter_bytes = 0;
  std::size_t activation_bytes = 0;
  std::size_t nodes = 0;
};

/// Storage of parameters and of every node output for one forward pass.
Footprint footprint(const NetworkGraph& graph, Shape input);

}  // namespace dssd
