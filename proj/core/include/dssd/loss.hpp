#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dssd/anchors.hpp"
#include "dssd/graph.hpp"

namespace dssd {

double smooth_l1(double x);
double smooth_l1_grad(double x);

/// -log softmax(logits)[label], max-subtracted for stability.
double softmax_ce(std::span<const float> logits, int label);
/// softmax(logits) - one_hot(label), written into `grad`.
void softmax_ce_grad(std::span<const float> logits, int label, std::span<float> grad);

/// Head outputs flattened into anchor order for a batch.
struct Predictions {
  int batch = 0;
  int anchors = 0;
  int classes = 0;
  std::vector<float> conf;  // [batch][anchors][classes]
  std::vector<float> loc;   // [batch][anchors][4]

  Predictions() = default;
  Predictions(int batch, int anchors, int classes);

  std::span<float> conf_at(int n, int a) {
    return {conf.data() + (static_cast<std::size_t>(n) * anchors + a) * classes,
            static_cast<std::size_t>(classes)};
  }
  std::span<const float> conf_at(int n, int a) const {
    return {conf.data() + (static_cast<std::size_t>(n) * anchors + a) * classes,
            static_cast<std::size_t>(classes)};
  }
  std::span<float> loc_at(int n, int a) {
    return {loc.data() + (static_cast<std::size_t>(n) * anchors + a) * 4, 4};
  }
  std::span<const float> loc_at(int n, int a) const {
    return {loc.data() + (static_cast<std::size_t>(n) * anchors + a) * 4, 4};
  }
};

/// Reads head outputs in anchor order: level, row, column, box.
Predictions gather_predictions(const NetworkGraph& graph, const ForwardResult& fwd,
                               int num_classes);

struct HeadGrads {
  std::vector<Tensor> cls;
  std::vector<Tensor> box;
};

/// Inverse of gather_predictions for gradients.
HeadGrads scatter_gradients(const NetworkGraph& graph, const ForwardResult& fwd,
                            const Predictions& grads);

/// Per-anchor background confidence loss of image `n`, used for mining.
std::vector<float> background_losses(const Predictions& pred, int n);

struct LossReport {
  double loc_loss = 0.0;   // sum over positives
  double conf_loss = 0.0;  // sum over positives and retained negatives
  double total = 0.0;      // (loc + conf) / max(positives, 1)
  std::size_t positive_count = 0;
};

struct LossResult {
  LossReport report;
  Predictions grad;  // d total / d predictions
};

/// Joint smooth-L1 localization and softmax confidence loss over a batch.
/// `matches[n]` must already be mined; ignored anchors contribute nothing.
LossResult multibox_loss(const Predictions& pred, std::span<const MatchResult> matches);

}  // namespace dssd
