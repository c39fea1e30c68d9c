#include "dssd/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dssd/errors.hpp"

namespace dssd {
namespace {

void check_fold(int channels, const BnParams& bn) {
  if (bn.channels() != channels) {
    throw ShapeError("fold_batchnorm: batch norm has " + std::to_string(bn.channels()) +
                     " channels, producer emits " + std::to_string(channels));
  }
}

Tensor folded_bias(const ConvParams& conv, const BnParams& bn, int channels) {
  Tensor bias = Tensor::vector(channels);
  for (int o = 0; o < channels; ++o) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(bn.running_var[o]) + bn.epsilon);
    const double b = conv.has_bias() ? conv.bias[o] : 0.0;
    bias[o] = static_cast<float>(bn.scale[o] * (b - bn.running_mean[o]) * inv + bn.shift[o]);
  }
  return bias;
}

double fold_factor(const BnParams& bn, int o) {
  return bn.scale[o] / std::sqrt(static_cast<double>(bn.running_var[o]) + bn.epsilon);
}

// Index of the BN node consuming conv/deconv node `producer` as its only
// consumer, or -1.
std::vector<int> foldable_map(const NetworkGraph& graph) {
  const auto& nodes = graph.nodes();
  std::vector<int> consumers(nodes.size(), 0);
  for (const Node& n : nodes) {
    for (int in : n.inputs) ++consumers[in];
  }
  for (const PredictionHead& h : graph.heads()) {
    ++consumers[h.class_node];
    ++consumers[h.box_node];
  }
  std::vector<int> bn_of(nodes.size(), -1);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    if (n.kind != OpKind::kBatchNorm) continue;
    const int p = n.inputs[0];
    const OpKind pk = nodes[p].kind;
    if ((pk == OpKind::kConv || pk == OpKind::kDeconv) && consumers[p] == 1) {
      bn_of[p] = static_cast<int>(i);
    }
  }
  return bn_of;
}

}  // namespace

FoldedConv fold_batchnorm(const ConvParams& conv, const BnParams& bn) {
  const int out_c = conv.weights.n();
  check_fold(out_c, bn);
  FoldedConv f{conv.weights, folded_bias(conv, bn, out_c)};
  const std::size_t per_out = conv.weights.size() / out_c;
  for (int o = 0; o < out_c; ++o) {
    const double k = fold_factor(bn, o);
    for (std::size_t j = 0; j < per_out; ++j) {
      float& w = f.weights[o * per_out + j];
      w = static_cast<float>(w * k);
    }
  }
  return f;
}

FoldedConv fold_batchnorm_deconv(const ConvParams& deconv, const BnParams& bn) {
  const int out_c = deconv.weights.c();
  check_fold(out_c, bn);
  FoldedConv f{deconv.weights, folded_bias(deconv, bn, out_c)};
  const Shape& s = deconv.weights.shape();
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (int i = 0; i < s.n; ++i) {
    for (int o = 0; o < out_c; ++o) {
      const double k = fold_factor(bn, o);
      float* w = f.weights.ptr() + (static_cast<std::size_t>(i) * out_c + o) * plane;
      for (std::size_t j = 0; j < plane; ++j) w[j] = static_cast<float>(w[j] * k);
    }
  }
  return f;
}

std::size_t count_foldable(const NetworkGraph& graph) {
  const auto bn_of = foldable_map(graph);
  return static_cast<std::size_t>(std::count_if(bn_of.begin(), bn_of.end(), [](int v) { return v >= 0; }));
}

NetworkGraph fold_network(const NetworkGraph& graph) {
  const auto& nodes = graph.nodes();
  const auto bn_of = foldable_map(graph);
  std::vector<char> removed(nodes.size(), 0);
  for (int b : bn_of) {
    if (b >= 0) removed[b] = 1;
  }
  std::vector<int> index_map(nodes.size(), -1);
  std::vector<Node> out;
  out.reserve(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (removed[i]) {
      index_map[i] = index_map[nodes[i].inputs[0]];
      continue;
    }
    Node n = nodes[i];
    for (int& in : n.inputs) in = index_map[in];
    if (bn_of[i] >= 0) {
      const BnParams& bn = nodes[bn_of[i]].bn;
      FoldedConv f = n.kind == OpKind::kConv ? fold_batchnorm(n.conv, bn)
                                             : fold_batchnorm_deconv(n.conv, bn);
      n.conv.weights = std::move(f.weights);
      n.conv.bias = std::move(f.bias);
    }
    index_map[i] = static_cast<int>(out.size());
    out.push_back(std::move(n));
  }
  NetworkGraph folded = graph;
  folded.rebuild(std::move(out), index_map);
  return folded;
}

std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold,
                           std::size_t top_k) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    if (kept.size() >= top_k) break;
    const Detection& d = dets[idx];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return jaccard(k.box, d.box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

std::vector<Detection> decode_detections(const Predictions& pred, int n, const AnchorSet& anchors,
                                         const DetectOptions& options) {
  if (static_cast<std::size_t>(pred.anchors) != anchors.size()) {
    throw ShapeError("detect: " + std::to_string(pred.anchors) + " predictions for " +
                     std::to_string(anchors.size()) + " anchors");
  }
  std::vector<std::vector<Detection>> per_class(pred.classes);
  std::vector<double> prob(pred.classes);
  for (int a = 0; a < pred.anchors; ++a) {
    const auto logits = pred.conf_at(n, a);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (int c = 0; c < pred.classes; ++c) sum += (prob[c] = std::exp(logits[c] - mx));
    bool decoded = false;
    Box box;
    for (int c = 1; c < pred.classes; ++c) {
      const double score = prob[c] / sum;
      if (!(score > options.score_threshold)) continue;
      if (!decoded) {
        const Box raw = decode(pred.loc_at(n, a), anchors.boxes[a]);
        const double x0 = std::clamp(raw.x0(), 0.0, 1.0);
        const double y0 = std::clamp(raw.y0(), 0.0, 1.0);
        const double x1 = std::clamp(raw.x1(), 0.0, 1.0);
        const double y1 = std::clamp(raw.y1(), 0.0, 1.0);
        box = Box::from_corners(x0, y0, x1, y1);
        decoded = true;
      }
      if (!(box.w > 0.0 && box.h > 0.0)) break;
      per_class[c].push_back(Detection{c, static_cast<float>(score), box});
    }
  }
  std::vector<Detection> all;
  for (int c = 1; c < pred.classes; ++c) {
    auto kept = nms(per_class[c], options.iou_threshold, options.top_k);
    all.insert(all.end(), kept.begin(), kept.end());
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (all.size() > options.top_k) all.resize(options.top_k);
  return all;
}

std::vector<std::vector<Detection>> detect(const NetworkGraph& graph, const AnchorSet& anchors,
                                           const Tensor& images, int num_classes,
                                           const DetectOptions& options) {
  const ForwardResult fwd = forward(graph, images);
  const Predictions pred = gather_predictions(graph, fwd, num_classes);
  std::vector<std::vector<Detection>> out;
  for (int n = 0; n < pred.batch; ++n) out.push_back(decode_detections(pred, n, anchors, options));
  return out;
}

Footprint footprint(const NetworkGraph& graph, Shape input) {
  Footprint f;
  f.parameter_bytes = graph.param_count(false) * sizeof(float);
  for (const Shape& s : graph.infer_shapes(input)) f.activation_bytes += s.numel() * sizeof(float);
  f.nodes = graph.nodes().size();
  return f;
}

}  // namespace dssd
