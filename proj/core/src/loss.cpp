#include "dssd/loss.hpp"

#include <algorithm>
#include <cmath>

#include "dssd/errors.hpp"

namespace dssd {

double smooth_l1(double x) {
  const double ax = std::abs(x);
  return ax < 1.0 ? 0.5 * x * x : ax - 0.5;
}

double smooth_l1_grad(double x) {
  if (std::abs(x) < 1.0) return x;
  return x > 0.0 ? 1.0 : -1.0;
}

double softmax_ce(std::span<const float> logits, int label) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (float v : logits) sum += std::exp(v - mx);
  return std::log(sum) - (logits[label] - mx);
}

void softmax_ce_grad(std::span<const float> logits, int label, std::span<float> grad) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (float v : logits) sum += std::exp(v - mx);
  for (std::size_t c = 0; c < logits.size(); ++c) {
    grad[c] = static_cast<float>(std::exp(logits[c] - mx) / sum);
  }
  grad[label] -= 1.0f;
}

Predictions::Predictions(int batch_, int anchors_, int classes_)
    : batch(batch_),
      anchors(anchors_),
      classes(classes_),
      conf(static_cast<std::size_t>(batch_) * anchors_ * classes_, 0.0f),
      loc(static_cast<std::size_t>(batch_) * anchors_ * 4, 0.0f) {}

namespace {

struct HeadLayout {
  int boxes;
  std::size_t first;
};

std::vector<HeadLayout> head_layout(const NetworkGraph& graph, const ForwardResult& fwd,
                                    int num_classes, int* total) {
  std::vector<HeadLayout> out;
  std::size_t first = 0;
  for (std::size_t i = 0; i < graph.heads().size(); ++i) {
    const Tensor& cls = fwd.class_map(graph, static_cast<int>(i));
    const Tensor& box = fwd.box_map(graph, static_cast<int>(i));
    if (cls.c() % num_classes != 0 || box.c() % 4 != 0 ||
        cls.c() / num_classes != box.c() / 4 || cls.h() != box.h() || cls.w() != box.w()) {
      throw ShapeError("predictions: head " + std::to_string(i) + " maps " + cls.shape().str() +
                       " / " + box.shape().str() + " are inconsistent");
    }
    const int boxes = box.c() / 4;
    out.push_back({boxes, first});
    first += static_cast<std::size_t>(cls.h()) * cls.w() * boxes;
  }
  *total = static_cast<int>(first);
  return out;
}

}  // namespace

Predictions gather_predictions(const NetworkGraph& graph, const ForwardResult& fwd,
                               int num_classes) {
  int total = 0;
  const auto layout = head_layout(graph, fwd, num_classes, &total);
  const int batch = fwd.class_map(graph, 0).n();
  Predictions p(batch, total, num_classes);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const Tensor& cls = fwd.class_map(graph, static_cast<int>(i));
    const Tensor& box = fwd.box_map(graph, static_cast<int>(i));
    const int boxes = layout[i].boxes;
    for (int n = 0; n < batch; ++n) {
      for (int y = 0; y < cls.h(); ++y) {
        for (int x = 0; x < cls.w(); ++x) {
          for (int b = 0; b < boxes; ++b) {
            const int a = static_cast<int>(layout[i].first) + (y * cls.w() + x) * boxes + b;
            auto conf = p.conf_at(n, a);
            for (int c = 0; c < num_classes; ++c) conf[c] = cls.at(n, b * num_classes + c, y, x);
            auto loc = p.loc_at(n, a);
            for (int k = 0; k < 4; ++k) loc[k] = box.at(n, b * 4 + k, y, x);
          }
        }
      }
    }
  }
  return p;
}

HeadGrads scatter_gradients(const NetworkGraph& graph, const ForwardResult& fwd,
                            const Predictions& grads) {
  int total = 0;
  const auto layout = head_layout(graph, fwd, grads.classes, &total);
  if (total != grads.anchors) throw ShapeError("scatter_gradients: anchor count mismatch");
  HeadGrads out;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    Tensor cls(fwd.class_map(graph, static_cast<int>(i)).shape());
    Tensor box(fwd.box_map(graph, static_cast<int>(i)).shape());
    const int boxes = layout[i].boxes;
    for (int n = 0; n < grads.batch; ++n) {
      for (int y = 0; y < cls.h(); ++y) {
        for (int x = 0; x < cls.w(); ++x) {
          for (int b = 0; b < boxes; ++b) {
            const int a = static_cast<int>(layout[i].first) + (y * cls.w() + x) * boxes + b;
            const auto conf = grads.conf_at(n, a);
            for (int c = 0; c < grads.classes; ++c) cls.at(n, b * grads.classes + c, y, x) = conf[c];
            const auto loc = grads.loc_at(n, a);
            for (int k = 0; k < 4; ++k) box.at(n, b * 4 + k, y, x) = loc[k];
          }
        }
      }
    }
    out.cls.push_back(std::move(cls));
    out.box.push_back(std::move(box));
  }
  return out;
}

std::vector<float> background_losses(const Predictions& pred, int n) {
  std::vector<float> out(pred.anchors);
  for (int a = 0; a < pred.anchors; ++a) {
    out[a] = static_cast<float>(softmax_ce(pred.conf_at(n, a), 0));
  }
  return out;
}

LossResult multibox_loss(const Predictions& pred, std::span<const MatchResult> matches) {
  if (static_cast<int>(matches.size()) != pred.batch) {
    throw ShapeError("multibox_loss: " + std::to_string(matches.size()) + " matches for batch " +
                     std::to_string(pred.batch));
  }
  for (const MatchResult& m : matches) {
    if (static_cast<int>(m.state.size()) != pred.anchors) {
      throw ShapeError("multibox_loss: match covers " + std::to_string(m.state.size()) +
                       " anchors, predictions have " + std::to_string(pred.anchors));
    }
  }
  LossResult r;
  r.grad = Predictions(pred.batch, pred.anchors, pred.classes);
  std::size_t positives = 0;
  for (const MatchResult& m : matches) positives += m.positive_count();
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(positives, 1));

  double loc_sum = 0.0;
  double conf_sum = 0.0;
  for (int n = 0; n < pred.batch; ++n) {
    const MatchResult& m = matches[n];
    for (int a = 0; a < pred.anchors; ++a) {
      const AnchorState s = m.state[a];
      if (s == AnchorState::kIgnored) continue;
      const int label = s == AnchorState::kPositive ? m.label[a] : 0;
      if (label < 0 || label >= pred.classes) {
        throw SpecError("multibox_loss: label " + std::to_string(label) + " out of range");
      }
      const auto logits = pred.conf_at(n, a);
      conf_sum += softmax_ce(logits, label);
      auto g = r.grad.conf_at(n, a);
      softmax_ce_grad(logits, label, g);
      for (float& v : g) v = static_cast<float>(v * norm);
      if (s == AnchorState::kPositive) {
        const auto loc = pred.loc_at(n, a);
        auto lg = r.grad.loc_at(n, a);
        for (int k = 0; k < 4; ++k) {
          const double diff = static_cast<double>(loc[k]) - m.target[a][k];
          loc_sum += smooth_l1(diff);
          lg[k] = static_cast<float>(smooth_l1_grad(diff) * norm);
        }
      }
    }
  }
  r.report.loc_loss = loc_sum;
  r.report.conf_loss = conf_sum;
  r.report.positive_count = positives;
  r.report.total = (loc_sum + conf_sum) * norm;
  if (!std::isfinite(r.report.total)) throw NumericError("multibox_loss: non-finite loss");
  return r;
}

}  // namespace dssd
