#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dssd/anchors.hpp"
#include "dssd/checkpoint.hpp"
#include "dssd/data.hpp"
#include "dssd/graph.hpp"
#include "dssd/loss.hpp"
#include "dssd/pyramid_spec.hpp"

namespace dssd {

struct Schedule {
  double base_lr = 1e-3;
  std::vector<std::pair<int, double>> milestones;  // (iteration, lr from then on)
  int total_iters = 0;

  void validate() const;
  /// Same shape over `total` iterations, milestones scaled proportionally.
  Schedule rescaled(int total) const;
};

/// Piecewise constant; a milestone's rate applies from its iteration onward.
/// Throws SpecError outside [0, total_iters).
double lr_at(const Schedule& schedule, int iteration);

/// Named schedules: "voc07", "voc12", "coco", "toy".
Schedule preset_schedule(std::string_view preset, Stage stage);

/// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
/// Throws NumericError, leaving both tensors untouched, if any updated value
/// is not finite.
void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr,
              double momentum = 0.9, double weight_decay = 5e-4);

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// Momentum SGD over the gradients of one backward pass. Velocity buffers
/// are created on first use, keyed by parameter name.
class Optimizer {
 public:
  explicit Optimizer(SgdConfig cfg = {}) : cfg_(cfg) {}

  /// All updates are validated before any parameter is written.
  void step(NetworkGraph& graph, const Gradients& grads, double lr);

  std::map<std::string, Tensor>& velocity() { return velocity_; }
  const std::map<std::string, Tensor>& velocity() const { return velocity_; }

 private:
  SgdConfig cfg_;
  std::map<std::string, Tensor> velocity_;
};

/// Anchors matching the heads of a graph built from `spec`.
AnchorSet anchors_for(const PyramidSpec& spec);

struct TrainConfig {
  int batch_size = 4;
  bool augment = true;
  AugmentConfig augmentation;
  double match_threshold = 0.5;
  int negative_ratio = 3;
  SgdConfig sgd;
  int log_every = 0;  // 0 disables the per-step callback
};

struct TrainEvent {
  int iteration = 0;
  double lr = 0.0;
  LossReport loss;
};

using TrainCallback = std::function<void(const TrainEvent&)>;

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> losses;  // total loss per iteration
  bool aborted = false;        // a NumericError stopped training
  std::string error;
};

/// Match, mine and compute the multibox loss for a batch on a finished
/// forward pass. `gts[n]` belongs to image n.
LossResult batch_loss(const NetworkGraph& graph, const ForwardResult& fwd, const AnchorSet& anchors,
                      const std::vector<const std::vector<GroundTruth>*>& gts, int num_classes,
                      double match_threshold = 0.5, int negative_ratio = 3);

/// Mean per-batch multibox loss on un-augmented samples in inference mode.
double eval_loss(const NetworkGraph& graph, const PyramidSpec& spec,
                 const std::vector<Sample>& samples, int batch_size = 4);

/// Trains an SSD from scratch. Deterministic per (spec, dataset, schedule,
/// seed, config).
TrainResult train_ssd(const PyramidSpec& spec, const std::vector<Sample>& dataset,
                      const Schedule& schedule, std::uint64_t seed, const TrainConfig& cfg = {},
                      const TrainCallback& on_step = {});

/// Builds a DSSD around the SSD checkpoint, freezes every SSD-origin
/// parameter and trains the decoder and its heads. `spec` may differ from
/// the checkpoint's only in fields outside the fingerprint (the combine mode).
TrainResult train_dssd_stage1(const Checkpoint& ssd, const PyramidSpec& spec,
                              const std::vector<Sample>& dataset, const Schedule& schedule,
                              std::uint64_t seed, const TrainConfig& cfg = {},
                              const TrainCallback& on_step = {});

/// Unfreezes everything and fine-tunes a stage-1 checkpoint.
TrainResult train_dssd_stage2(const Checkpoint& stage1, const std::vector<Sample>& dataset,
                              const Schedule& schedule, std::uint64_t seed,
                              const TrainConfig& cfg = {}, const TrainCallback& on_step = {});

}  // namespace dssd
