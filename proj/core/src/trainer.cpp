#include "dssd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dssd/blocks.hpp"
#include "dssd/errors.hpp"

namespace dssd {

void Schedule::validate() const {
  if (total_iters < 0) throw SpecError("schedule: negative iteration count");
  if (!(base_lr >= 0.0)) throw SpecError("schedule: negative base learning rate");
  int prev = 0;
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    const auto& [it, lr] = milestones[i];
    if ((i > 0 && it <= prev) || it < 0) {
      throw SpecError("schedule: milestone iterations must be strictly increasing");
    }
    if (it > total_iters) throw SpecError("schedule: milestone beyond total iterations");
    if (!(lr > 0.0)) throw SpecError("schedule: milestone learning rates must be positive");
    prev = it;
  }
}

Schedule Schedule::rescaled(int total) const {
  Schedule s = *this;
  s.total_iters = total;
  s.milestones.clear();
  int prev = -1;
  for (const auto& [it, lr] : milestones) {
    const int scaled = total_iters > 0
                           ? static_cast<int>(static_cast<long long>(it) * total / total_iters)
                           : 0;
    if (scaled <= prev) continue;  // collapsed by a very short run
    s.milestones.emplace_back(scaled, lr);
    prev = scaled;
  }
  return s;
}

double lr_at(const Schedule& schedule, int iteration) {
  if (iteration < 0 || iteration >= schedule.total_iters) {
    throw SpecError("lr_at: iteration " + std::to_string(iteration) + " outside [0, " +
                    std::to_string(schedule.total_iters) + ")");
  }
  double lr = schedule.base_lr;
  for (const auto& [it, value] : schedule.milestones) {
    if (iteration >= it) lr = value;
  }
  return lr;
}

Schedule preset_schedule(std::string_view preset, Stage stage) {
  Schedule s;
  if (preset == "toy") {
    s = {1e-2, {{2000, 1e-3}}, 3000};
    if (stage != Stage::kSsd) s = {1e-2, {{1000, 1e-3}}, 1500};
  } else if (preset == "voc07") {
    s = {1e-3, {{60000, 1e-4}, {70000, 1e-5}}, 80000};
    if (stage == Stage::kDssdStage1) s = {1e-3, {{20000, 1e-4}}, 30000};
    if (stage == Stage::kDssdStage2) s = {1e-3, {{20000, 1e-4}}, 40000};
  } else if (preset == "voc12") {
    s = {1e-3, {{60000, 1e-4}, {90000, 1e-5}}, 100000};
    if (stage == Stage::kDssdStage1) s = {1e-3, {{30000, 1e-4}}, 50000};
    if (stage == Stage::kDssdStage2) s = {1e-3, {{20000, 1e-4}}, 40000};
  } else if (preset == "coco") {
    s = {1e-3, {{160000, 1e-4}, {220000, 1e-5}}, 240000};
    if (stage == Stage::kDssdStage1) s = {1e-3, {{80000, 1e-4}}, 130000};
    if (stage == Stage::kDssdStage2) s = {1e-3, {{20000, 1e-4}}, 40000};
  } else {
    throw SpecError("unknown schedule preset '" + std::string(preset) + "'");
  }
  s.validate();
  return s;
}

void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr, double momentum,
              double weight_decay) {
  if (grad.shape() != param.shape() || velocity.shape() != param.shape()) {
    throw ShapeError("sgd_step: parameter " + param.shape().str() + ", gradient " +
                     grad.shape().str() + ", velocity " + velocity.shape().str());
  }
  const std::size_t n = param.size();
  std::vector<float> v(n);
  std::vector<float> p(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double vi = momentum * velocity[i] + grad[i] + weight_decay * param[i];
    v[i] = static_cast<float>(vi);
    p[i] = static_cast<float>(param[i] - lr * v[i]);
  }
  if (!all_finite(v) || !all_finite(p)) throw NumericError("sgd_step: non-finite update");
  std::copy(v.begin(), v.end(), velocity.data().begin());
  std::copy(p.begin(), p.end(), param.data().begin());
}

void Optimizer::step(NetworkGraph& graph, const Gradients& grads, double lr) {
  std::vector<std::pair<Tensor*, Tensor>> new_params;
  std::vector<std::pair<Tensor*, Tensor>> new_velocity;
  for (const auto& [name, grad] : grads.params) {
    if (graph.is_frozen(name)) continue;
    Tensor& param = graph.param(name);
    auto it = velocity_.find(name);
    if (it == velocity_.end()) it = velocity_.emplace(name, Tensor(param.shape())).first;
    Tensor p = param;
    Tensor v = it->second;
    try {
      sgd_step(p, grad, v, lr, cfg_.momentum, cfg_.weight_decay);
    } catch (const NumericError&) {
      throw NumericError("sgd: non-finite update for " + name);
    }
    new_params.emplace_back(&param, std::move(p));
    new_velocity.emplace_back(&it->second, std::move(v));
  }
  for (auto& [dst, value] : new_params) *dst = std::move(value);
  for (auto& [dst, value] : new_velocity) *dst = std::move(value);
}

AnchorSet anchors_for(const PyramidSpec& spec) {
  std::vector<int> sizes;
  for (const auto& l : spec.levels) sizes.push_back(l.size);
  return generate_anchors(
      AnchorConfig::linear(sizes, spec.aspect_ratios, spec.min_scale, spec.max_scale));
}

LossResult batch_loss(const NetworkGraph& graph, const ForwardResult& fwd, const AnchorSet& anchors,
                      const std::vector<const std::vector<GroundTruth>*>& gts, int num_classes,
                      double match_threshold, int negative_ratio) {
  const Predictions pred = gather_predictions(graph, fwd, num_classes);
  if (static_cast<int>(gts.size()) != pred.batch) {
    throw ShapeError("batch_loss: ground truth for " + std::to_string(gts.size()) +
                     " images, batch of " + std::to_string(pred.batch));
  }
  std::vector<MatchResult> matches;
  for (int n = 0; n < pred.batch; ++n) {
    MatchResult m = match(*gts[n], anchors, match_threshold);
    matches.push_back(mine_negatives(background_losses(pred, n), std::move(m), negative_ratio));
  }
  return multibox_loss(pred, matches);
}

double eval_loss(const NetworkGraph& graph, const PyramidSpec& spec,
                 const std::vector<Sample>& samples, int batch_size) {
  if (samples.empty()) throw SpecError("eval_loss: no samples");
  const AnchorSet anchors = anchors_for(spec);
  double sum = 0.0;
  int batches = 0;
  for (std::size_t first = 0; first < samples.size(); first += batch_size) {
    std::vector<Sample> resized;
    const std::size_t last = std::min(samples.size(), first + batch_size);
    for (std::size_t i = first; i < last; ++i) {
      resized.push_back(resize_square(samples[i], spec.input_size));
    }
    std::vector<const Sample*> ptrs;
    std::vector<const std::vector<GroundTruth>*> gts;
    for (const Sample& s : resized) {
      ptrs.push_back(&s);
      gts.push_back(&s.gts);
    }
    const ForwardResult fwd = forward(graph, stack_images(ptrs));
    sum += batch_loss(graph, fwd, anchors, gts, spec.num_classes).report.total;
    ++batches;
  }
  return sum / batches;
}

namespace {

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::vector<Tensor*> running_stats(NetworkGraph& graph) {
  std::vector<Tensor*> out;
  graph.for_each_param([&](ParamView p) {
    if (!p.trainable) out.push_back(&p.value);
  });
  return out;
}

TrainResult run_training(NetworkGraph& graph, const PyramidSpec& spec, Stage stage,
                         const std::vector<Sample>& dataset, const Schedule& schedule,
                         std::uint64_t seed, const TrainConfig& cfg, const TrainCallback& on_step,
                         Optimizer opt) {
  if (dataset.empty()) throw SpecError("train: empty dataset");
  if (cfg.batch_size < 1) throw SpecError("train: batch size must be positive");
  schedule.validate();
  cfg.augmentation.validate();

  Rng rng(seed);
  const AnchorSet anchors = anchors_for(spec);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const std::vector<Tensor*> stats = running_stats(graph);

  TrainResult result;
  int done = 0;
  for (int it = 0; it < schedule.total_iters; ++it) {
    const double lr = lr_at(schedule, it);
    std::vector<Sample> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const Sample& src = dataset[order[cursor++]];
      const std::uint64_t aug_seed = rng();
      batch.push_back(cfg.augment ? augment(src, aug_seed, cfg.augmentation, spec.input_size)
                                  : resize_square(src, spec.input_size));
    }
    std::vector<const Sample*> ptrs;
    std::vector<const std::vector<GroundTruth>*> gts;
    for (const Sample& s : batch) {
      ptrs.push_back(&s);
      gts.push_back(&s.gts);
    }

    std::vector<Tensor> saved_stats;
    for (const Tensor* t : stats) saved_stats.push_back(*t);
    try {
      const ForwardResult fwd = forward(graph, stack_images(ptrs), Mode::kTrain);
      const LossResult loss = batch_loss(graph, fwd, anchors, gts, spec.num_classes,
                                         cfg.match_threshold, cfg.negative_ratio);
      const HeadGrads hg = scatter_gradients(graph, fwd, loss.grad);
      const Gradients grads = backward(graph, fwd, hg.cls, hg.box);
      opt.step(graph, grads, lr);
      result.losses.push_back(loss.report.total);
      if (on_step && cfg.log_every > 0 && (it % cfg.log_every == 0 || it + 1 == schedule.total_iters)) {
        on_step(TrainEvent{it, lr, loss.report});
      }
    } catch (const NumericError& e) {
      for (std::size_t i = 0; i < stats.size(); ++i) *stats[i] = std::move(saved_stats[i]);
      result.aborted = true;
      result.error = e.what();
      break;
    }
    ++done;
  }

  result.checkpoint = capture(graph, spec, stage);
  result.checkpoint.iteration = done;
  result.checkpoint.rng_state = rng_state(rng);
  for (const auto& [name, v] : opt.velocity()) {
    result.checkpoint.tensors.emplace_back(std::string(kMomentumPrefix) + name, v);
  }
  return result;
}

}  // namespace

TrainResult train_ssd(const PyramidSpec& spec, const std::vector<Sample>& dataset,
                      const Schedule& schedule, std::uint64_t seed, const TrainConfig& cfg,
                      const TrainCallback& on_step) {
  spec.validate();
  NetworkGraph graph = assemble_ssd(spec, seed);
  return run_training(graph, spec, Stage::kSsd, dataset, schedule, seed, cfg, on_step,
                      Optimizer(cfg.sgd));
}

TrainResult train_dssd_stage1(const Checkpoint& ssd, const PyramidSpec& spec,
                              const std::vector<Sample>& dataset, const Schedule& schedule,
                              std::uint64_t seed, const TrainConfig& cfg,
                              const TrainCallback& on_step) {
  if (ssd.stage != Stage::kSsd) {
    throw SpecError("train_dssd_stage1: expected an ssd checkpoint, got " +
                    std::string(to_string(ssd.stage)));
  }
  if (ssd.folded) throw SpecError("train_dssd_stage1: cannot train from a folded checkpoint");
  spec.validate();
  if (ssd.fingerprint != spec.fingerprint()) {
    throw SpecError("train_dssd_stage1: checkpoint fingerprint " + ssd.fingerprint +
                    " does not match geometry " + spec.fingerprint());
  }
  const NetworkGraph base = build_graph(ssd);
  NetworkGraph graph = assemble_dssd(base, spec, seed);
  for (const auto& name : graph.param_names(true)) {
    if (!is_decoder_param(name)) graph.freeze(name);
  }
  return run_training(graph, spec, Stage::kDssdStage1, dataset, schedule, seed, cfg, on_step,
                      Optimizer(cfg.sgd));
}

TrainResult train_dssd_stage2(const Checkpoint& stage1, const std::vector<Sample>& dataset,
                              const Schedule& schedule, std::uint64_t seed, const TrainConfig& cfg,
                              const TrainCallback& on_step) {
  if (stage1.stage != Stage::kDssdStage1) {
    throw SpecError("train_dssd_stage2: expected a dssd_stage1 checkpoint, got " +
                    std::string(to_string(stage1.stage)));
  }
  if (stage1.folded) throw SpecError("train_dssd_stage2: cannot train from a folded checkpoint");
  if (schedule.total_iters == 0) {
    TrainResult r;
    r.checkpoint = stage1;
    r.checkpoint.stage = Stage::kDssdStage2;
    return r;
  }
  NetworkGraph graph = build_graph(stage1);
  graph.clear_freeze();
  Optimizer opt(cfg.sgd);
  for (const auto& [name, t] : stage1.tensors) {
    if (name.starts_with(kMomentumPrefix)) opt.velocity().emplace(name.substr(kMomentumPrefix.size()), t);
  }
  return run_training(graph, stage1.spec, Stage::kDssdStage2, dataset, schedule, seed, cfg,
                      on_step, std::move(opt));
}

}  // namespace dssd
