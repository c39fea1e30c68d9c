#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "dssd/analytics.hpp"
#include "dssd/blocks.hpp"
#include "dssd/checkpoint.hpp"
#include "dssd/data.hpp"
#include "dssd/errors.hpp"
#include "dssd/parallel.hpp"
#include "dssd/postprocess.hpp"
#include "dssd/pyramid_spec.hpp"
#include "dssd/trainer.hpp"
#include "oracles.hpp"

namespace dssd::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct Global {
  int threads = 1;
  bool pretty = false;
};

class Reporter {
 public:
  Reporter(std::ostream& out, std::ostream& err, bool pretty) : out_(out), err_(err), pretty_(pretty) {}

  void emit(const json& j) {
    if (pretty_) {
      out_ << j.dump(2) << "\n";
    } else {
      out_ << j.dump() << "\n";
    }
    out_.flush();
  }
  bool pretty() const { return pretty_; }
  std::ostream& out() { return out_; }
  void log(const std::string& line) { err_ << line << "\n"; }
  void config(const std::string& command, json cfg) {
    cfg["command"] = command;
    log("config " + cfg.dump());
  }

 private:
  std::ostream& out_;
  std::ostream& err_;
  bool pretty_;
};

// Accepts a preset name or a path to a JSON spec file.
PyramidSpec resolve_spec(const std::string& name_or_path) {
  if (fs::exists(name_or_path) && fs::is_regular_file(name_or_path)) {
    std::ifstream f(name_or_path);
    std::stringstream ss;
    ss << f.rdbuf();
    return spec_from_json(ss.str());
  }
  return preset_spec(name_or_path);
}

struct SpecOverrides {
  std::string pm;
  std::string combine;

  void add(CLI::App* app) {
    app->add_option("--pm", pm, "Prediction module variant")->check(CLI::IsMember({"a", "b", "c", "d"}));
    app->add_option("--combine", combine, "Deconvolution module combine mode")
        ->check(CLI::IsMember({"sum", "prod"}));
  }
  void apply(PyramidSpec& spec) const {
    if (!pm.empty()) spec.pm_variant = pm_variant_from_string(pm);
    if (!combine.empty()) spec.dm_combine = combine_from_string(combine);
  }
};

json box_json(const Box& b) { return json::array({b.x0(), b.y0(), b.x1(), b.y1()}); }

json detections_json(const std::vector<Detection>& dets) {
  json arr = json::array();
  for (const Detection& d : dets) {
    arr.push_back({{"class", d.label}, {"score", d.score}, {"box", box_json(d.box)}});
  }
  return arr;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::vector<Sample> resized(std::vector<Sample> samples, int size) {
  for (Sample& s : samples) s = resize_square(s, size);
  return samples;
}

// --- subcommands -------------------------------------------------------------

struct GenData {
  std::uint64_t seed = 0;
  std::size_t count = 100;
  std::string out;
  SceneSpec scene;

  void add(CLI::App* app) {
    app->add_option("--seed", seed, "Dataset seed");
    app->add_option("--count", count, "Number of images");
    app->add_option("--out", out, "Output directory")->required();
    app->add_option("--size", scene.image_size, "Image side in pixels");
    app->add_option("--objects", scene.num_objects, "Objects per image");
    app->add_option("--min-size", scene.min_size, "Smallest object side as a fraction of the image");
    app->add_option("--max-size", scene.max_size, "Largest object side as a fraction of the image");
    app->add_option("--classes", scene.num_classes, "Foreground classes (1-3)");
  }

  int run(Reporter& r) const {
    r.config("gen-data", {{"seed", seed}, {"count", count}, {"out", out},
                          {"size", scene.image_size}, {"objects", scene.num_objects},
                          {"min_size", scene.min_size}, {"max_size", scene.max_size},
                          {"classes", scene.num_classes}});
    const auto samples = gen_dataset(seed, count, scene);
    save_dataset(out, samples);
    std::size_t boxes = 0;
    for (const Sample& s : samples) boxes += s.gts.size();
    r.emit({{"command", "gen-data"}, {"out", out}, {"images", samples.size()}, {"boxes", boxes}});
    return kExitOk;
  }
};

struct TrainOptions {
  std::string data;
  std::uint64_t seed = 0;
  std::string preset = "toy";
  int iters = -1;
  int batch = 4;
  bool no_augment = false;
  int log_every = 100;
  std::string out;

  void add(CLI::App* app) {
    app->add_option("--data", data, "Dataset directory or annotations.jsonl")->required();
    app->add_option("--seed", seed, "Training seed");
    app->add_option("--preset", preset, "Learning-rate schedule")
        ->check(CLI::IsMember({"voc07", "voc12", "coco", "toy"}));
    app->add_option("--iters", iters, "Iterations; the preset's milestones are rescaled to fit");
    app->add_option("--batch", batch, "Images per iteration");
    app->add_flag("--no-augment", no_augment, "Train on resized images only");
    app->add_option("--log-every", log_every, "Report the loss every N iterations (0: never)");
    app->add_option("--out", out, "Output checkpoint path")->required();
  }

  Schedule schedule(Stage stage) const {
    Schedule s = preset_schedule(preset, stage);
    return iters >= 0 ? s.rescaled(iters) : s;
  }

  TrainConfig config() const {
    TrainConfig cfg;
    cfg.batch_size = batch;
    cfg.augment = !no_augment;
    cfg.log_every = log_every;
    return cfg;
  }

  json describe(const Schedule& s) const {
    json milestones = json::array();
    for (const auto& [it, lr] : s.milestones) milestones.push_back({it, lr});
    return {{"data", data}, {"seed", seed}, {"preset", preset}, {"iters", s.total_iters},
            {"base_lr", s.base_lr}, {"milestones", milestones}, {"batch", batch},
            {"augment", !no_augment}, {"log_every", log_every}, {"out", out}};
  }
};

TrainCallback step_reporter(Reporter& r) {
  return [&r](const TrainEvent& e) {
    r.emit({{"event", "step"}, {"iteration", e.iteration}, {"lr", e.lr},
            {"loss", e.loss.total}, {"loc_loss", e.loss.loc_loss},
            {"conf_loss", e.loss.conf_loss}, {"positives", e.loss.positive_count}});
  };
}

int finish_training(Reporter& r, const std::string& command, const TrainResult& res,
                    const std::string& out) {
  save_checkpoint(res.checkpoint, out);
  json done{{"event", "done"}, {"command", command}, {"stage", to_string(res.checkpoint.stage)},
            {"iterations", res.checkpoint.iteration}, {"checkpoint", out}};
  if (!res.losses.empty()) {
    done["initial_loss"] = res.losses.front();
    done["final_loss"] = res.losses.back();
  }
  if (res.aborted) {
    done["aborted"] = true;
    done["error"] = res.error;
    r.emit(done);
    r.log("error: " + res.error + " (last good checkpoint written)");
    return kExitDomainError;
  }
  r.emit(done);
  return kExitOk;
}

struct TrainSsd {
  std::string spec = "toy-64";
  SpecOverrides overrides;
  TrainOptions opts;

  void add(CLI::App* app) {
    app->add_option("--spec", spec, "Geometry preset or spec JSON file");
    overrides.add(app);
    opts.add(app);
  }

  int run(Reporter& r) const {
    PyramidSpec s = resolve_spec(spec);
    overrides.apply(s);
    const Schedule sched = opts.schedule(Stage::kSsd);
    json cfg = opts.describe(sched);
    cfg["spec"] = json::parse(to_json(s));
    r.config("train-ssd", cfg);
    const auto data = load_dataset(opts.data);
    const TrainResult res = train_ssd(s, data, sched, opts.seed, opts.config(), step_reporter(r));
    return finish_training(r, "train-ssd", res, opts.out);
  }
};

struct TrainDssd {
  int stage = 1;
  std::string ckpt;
  std::string combine;
  TrainOptions opts;

  void add(CLI::App* app) {
    app->add_option("--stage", stage, "1: train the decoder on a frozen SSD; 2: fine-tune everything")
        ->required()
        ->check(CLI::IsMember({1, 2}));
    app->add_option("--ckpt", ckpt, "SSD checkpoint (stage 1) or stage-1 checkpoint (stage 2)")
        ->required();
    app->add_option("--combine", combine, "Deconvolution module combine mode (stage 1)")
        ->check(CLI::IsMember({"sum", "prod"}));
    opts.add(app);
  }

  int run(Reporter& r) const {
    const Checkpoint in = load_checkpoint(ckpt);
    const Stage st = stage == 1 ? Stage::kDssdStage1 : Stage::kDssdStage2;
    PyramidSpec s = in.spec;
    if (!combine.empty()) {
      if (stage == 2) throw SpecError("train-dssd: --combine only applies to stage 1");
      s.dm_combine = combine_from_string(combine);
    }
    const Schedule sched = opts.schedule(st);
    json cfg = opts.describe(sched);
    cfg["stage"] = stage;
    cfg["ckpt"] = ckpt;
    cfg["spec"] = json::parse(to_json(s));
    r.config("train-dssd", cfg);
    const auto data = load_dataset(opts.data);
    const TrainResult res =
        stage == 1 ? train_dssd_stage1(in, s, data, sched, opts.seed, opts.config(), step_reporter(r))
                   : train_dssd_stage2(in, data, sched, opts.seed, opts.config(), step_reporter(r));
    return finish_training(r, "train-dssd", res, opts.out);
  }
};

struct Eval {
  std::string ckpt;
  std::string data;
  double score = 0.01;
  double iou = 0.5;
  int batch = 8;

  void add(CLI::App* app) {
    app->add_option("--ckpt", ckpt, "Checkpoint")->required();
    app->add_option("--data", data, "Dataset directory or annotations.jsonl")->required();
    app->add_option("--score-threshold", score, "Minimum detection score kept for ranking");
    app->add_option("--iou", iou, "IoU for a true positive");
    app->add_option("--batch", batch, "Images per forward pass")->check(CLI::PositiveNumber);
  }

  int run(Reporter& r) const {
    r.config("eval", {{"ckpt", ckpt}, {"data", data}, {"score_threshold", score}, {"iou", iou},
                      {"batch", batch}});
    const Checkpoint c = load_checkpoint(ckpt);
    const NetworkGraph g = build_graph(c);
    const AnchorSet anchors = anchors_for(c.spec);
    const auto samples = resized(load_dataset(data), c.spec.input_size);
    DetectOptions opt;
    opt.score_threshold = score;
    std::vector<std::vector<Detection>> dets;
    std::vector<std::vector<GroundTruth>> gts;
    for (std::size_t i = 0; i < samples.size(); i += batch) {
      std::vector<const Sample*> ptrs;
      for (std::size_t j = i; j < std::min(samples.size(), i + batch); ++j) {
        ptrs.push_back(&samples[j]);
        gts.push_back(samples[j].gts);
      }
      for (auto& d : detect(g, anchors, stack_images(ptrs), c.spec.num_classes, opt)) {
        dets.push_back(std::move(d));
      }
    }
    const EvalReport rep = evaluate_map(dets, gts, c.spec.num_classes, iou);
    json ap = json::array();
    for (double a : rep.ap) ap.push_back(number_or_null(a));
    r.emit({{"command", "eval"}, {"images", samples.size()}, {"map", rep.map}, {"ap", ap},
            {"loss", eval_loss(g, c.spec, samples)},
            {"by_size",
             {{"small", rep.by_size.small}, {"medium", rep.by_size.medium},
              {"large", rep.by_size.large}, {"small_max_area", rep.by_size.small_max_area},
              {"medium_max_area", rep.by_size.medium_max_area}}}});
    return kExitOk;
  }
};

struct Detect {
  std::string ckpt;
  std::vector<std::string> images;
  DetectOptions opt;

  void add(CLI::App* app) {
    app->add_option("--ckpt", ckpt, "Checkpoint")->required();
    app->add_option("--image", images, "Binary PPM image(s)")->required();
    app->add_option("--score-threshold", opt.score_threshold, "Per-class score threshold");
    app->add_option("--iou", opt.iou_threshold, "NMS IoU threshold");
    app->add_option("--top-k", opt.top_k, "Maximum detections per image");
  }

  int run(Reporter& r) const {
    r.config("detect", {{"ckpt", ckpt}, {"images", images}, {"score_threshold", opt.score_threshold},
                        {"iou", opt.iou_threshold}, {"top_k", opt.top_k}});
    const Checkpoint c = load_checkpoint(ckpt);
    const NetworkGraph g = build_graph(c);
    const AnchorSet anchors = anchors_for(c.spec);
    for (const std::string& path : images) {
      Sample s;
      s.image = read_ppm(path);
      s = resize_square(s, c.spec.input_size);
      const auto dets = detect(g, anchors, s.image, c.spec.num_classes, opt);
      r.emit({{"image", path}, {"detections", detections_json(dets.front())}});
    }
    return kExitOk;
  }
};

struct FoldBn {
  std::string ckpt;
  std::string out;
  int verify = 50;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("--ckpt", ckpt, "Checkpoint to fold")->required();
    app->add_option("--out", out, "Folded checkpoint path");
    app->add_option("--verify", verify, "Random inputs compared between folded and original");
    app->add_option("--seed", seed, "Seed of the verification inputs");
  }

  int run(Reporter& r) const {
    r.config("fold-bn", {{"ckpt", ckpt}, {"out", out}, {"verify", verify}, {"seed", seed}});
    const Checkpoint c = load_checkpoint(ckpt);
    const NetworkGraph g = build_graph(c);
    const NetworkGraph folded = fold_network(g);
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (int i = 0; i < verify; ++i) {
      const Tensor x =
          oracle::random_tensor(Shape{1, 3, c.spec.input_size, c.spec.input_size}, rng);
      const ForwardResult a = forward(g, x);
      const ForwardResult b = forward(folded, x);
      for (std::size_t h = 0; h < g.heads().size(); ++h) {
        worst = std::max(worst, oracle::max_abs_diff(a.class_map(g, h).data(),
                                                     b.class_map(folded, h).data()));
        worst = std::max(worst, oracle::max_abs_diff(a.box_map(g, h).data(),
                                                     b.box_map(folded, h).data()));
      }
    }
    if (!out.empty()) {
      Checkpoint fc = capture(folded, c.spec, c.stage);
      fc.iteration = c.iteration;
      fc.folded = true;
      save_checkpoint(fc, out);
    }
    json rep{{"command", "fold-bn"}, {"pairs_folded", g.nodes().size() - folded.nodes().size()},
             {"nodes_before", g.nodes().size()}, {"nodes_after", folded.nodes().size()},
             {"verified_inputs", verify}};
    rep["max_abs_diff"] = worst;
    if (!out.empty()) rep["checkpoint"] = out;
    r.emit(rep);
    return kExitOk;
  }
};

struct Anchors {
  std::string geometry;

  void add(CLI::App* app) {
    app->add_option("--geometry", geometry, "Geometry preset or spec JSON file")->required();
  }

  int run(Reporter& r) const {
    r.config("anchors", {{"geometry", geometry}});
    const PyramidSpec spec = resolve_spec(geometry);
    const AnchorSet set = anchors_for(spec);
    json levels = json::array();
    for (const LevelGeometry& l : set.levels) {
      levels.push_back({{"size", l.size}, {"boxes_per_location", l.boxes_per_location},
                        {"count", l.count}});
    }
    if (r.pretty()) {
      std::ostream& o = r.out();
      o << "geometry " << geometry << "\n";
      o << std::setw(8) << "size" << std::setw(8) << "boxes" << std::setw(10) << "anchors" << "\n";
      for (const LevelGeometry& l : set.levels) {
        o << std::setw(8) << l.size << std::setw(8) << l.boxes_per_location << std::setw(10)
          << l.count << "\n";
      }
      o << "total " << set.size() << "\n";
      return kExitOk;
    }
    r.emit({{"command", "anchors"}, {"geometry", geometry}, {"levels", levels}, {"total", set.size()}});
    return kExitOk;
  }
};

struct Cluster {
  std::string data;
  std::string weight = "sqrt_area";
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("--data", data, "annotations.jsonl or dataset directory")->required();
    app->add_option("--weight", weight, "Sample weight of each box")
        ->check(CLI::IsMember({"sqrt_area", "uniform"}));
    app->add_option("--seed", seed, "K-means seed");
  }

  int run(Reporter& r) const {
    r.config("cluster", {{"data", data}, {"weight", weight}, {"seed", seed}});
    fs::path path = data;
    if (fs::is_directory(path)) path /= "annotations.jsonl";
    std::vector<Box> boxes;
    for (const auto& image : load_annotations(path)) {
      for (const GroundTruth& g : image) boxes.push_back(g.box);
    }
    const ClusterReport rep = cluster_aspect_ratios(
        boxes, weight == "uniform" ? WeightMode::kUniform : WeightMode::kSqrtArea, seed);
    const std::vector<double> maxr = max_ratio(rep.centers);
    if (r.pretty()) {
      std::ostream& o = r.out();
      o << "k = " << rep.k << " from " << boxes.size() << " boxes\n";
      o << std::setw(14) << "W/H" << std::setw(16) << "Max(W/H,H/W)" << std::setw(10) << "Ratio"
        << "\n";
      o << std::fixed;
      for (int i = 0; i < rep.k; ++i) {
        o << std::setw(14) << std::setprecision(2) << rep.centers[i] << std::setw(16) << maxr[i]
          << std::setw(9) << std::setprecision(1) << 100.0 * rep.fractions[i] << "%\n";
      }
      o << std::defaultfloat;
      return kExitOk;
    }
    json clusters = json::array();
    for (int i = 0; i < rep.k; ++i) {
      clusters.push_back({{"w_over_h", rep.centers[i]}, {"max_ratio", maxr[i]},
                          {"fraction", rep.fractions[i]}});
    }
    r.emit({{"command", "cluster"}, {"boxes", boxes.size()}, {"k", rep.k},
            {"clusters", clusters}, {"errors", rep.errors}});
    return kExitOk;
  }
};

struct GradCheck {
  bool all = false;
  std::vector<std::string> cases;
  std::uint64_t seed = 0;
  int seeds = 1;

  void add(CLI::App* app) {
    app->add_flag("--all", all, "Run every case of the gradient suite");
    app->add_option("--case", cases, "Run the named case(s)");
    app->add_option("--seed", seed, "First seed");
    app->add_option("--seeds", seeds, "Number of consecutive seeds")->check(CLI::PositiveNumber);
  }

  int run(Reporter& r) const {
    if (!all && cases.empty()) throw CLI::ValidationError("gradcheck", "give --all or --case");
    r.config("gradcheck", {{"all", all}, {"cases", cases}, {"seed", seed}, {"seeds", seeds}});
    const auto suite = oracle::gradient_suite();
    for (const std::string& name : cases) {
      const bool known = std::any_of(suite.begin(), suite.end(),
                                     [&](const oracle::GradCase& c) { return c.name == name; });
      if (!known) throw CLI::ValidationError("--case", "unknown gradient case '" + name + "'");
    }
    bool ok = true;
    std::size_t runs = 0;
    for (const oracle::GradCase& c : suite) {
      if (!all && std::find(cases.begin(), cases.end(), c.name) == cases.end()) continue;
      for (int i = 0; i < seeds; ++i) {
        const std::uint64_t s = seed + static_cast<std::uint64_t>(i);
        const oracle::GraphGradCheck g = c.run(s, c.step);
        const bool pass = g.checked > 0 && g.max_relative_error < c.tolerance;
        ok = ok && pass;
        ++runs;
        if (r.pretty()) {
          r.out() << std::left << std::setw(22) << c.name << std::right << " seed " << std::setw(3)
                  << s << "  err " << std::scientific << std::setprecision(2)
                  << g.max_relative_error << " < " << c.tolerance << std::defaultfloat << "  "
                  << (pass ? "ok" : "FAIL") << "\n";
          continue;
        }
        r.emit({{"case", c.name}, {"seed", s}, {"max_relative_error", g.max_relative_error},
                {"max_entry_error", g.max_entry_error}, {"tolerance", c.tolerance},
                {"step", c.step}, {"checked", g.checked}, {"skipped", g.skipped}, {"pass", pass}});
      }
    }
    r.emit({{"command", "gradcheck"}, {"runs", runs}, {"pass", ok}});
    return ok ? kExitOk : kExitDomainError;
  }
};

struct Bench {
  std::string spec = "toy-64";
  bool dssd = false;
  int runs = 20;
  int batch = 1;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("--spec", spec, "Geometry preset or spec JSON file");
    app->add_flag("--dssd", dssd, "Benchmark the DSSD graph instead of the SSD");
    app->add_option("--runs", runs, "Timed forward passes per graph")->check(CLI::PositiveNumber);
    app->add_option("--batch", batch, "Images per forward pass")->check(CLI::PositiveNumber);
    app->add_option("--seed", seed, "Parameter and input seed");
  }

  int run(Reporter& r) const {
    r.config("bench", {{"spec", spec}, {"dssd", dssd}, {"runs", runs}, {"batch", batch},
                       {"seed", seed}, {"threads", num_threads()}});
    const PyramidSpec s = resolve_spec(spec);
    NetworkGraph g = assemble_ssd(s, seed);
    if (dssd) g = assemble_dssd(g, s, seed + 1);
    const NetworkGraph folded = fold_network(g);
    std::mt19937_64 rng(seed);
    const Tensor x = oracle::random_tensor(Shape{batch, 3, s.input_size, s.input_size}, rng);
    auto time_ms = [&](const NetworkGraph& net) {
      forward(net, x);  // warm-up
      double best = INFINITY;
      for (int i = 0; i < runs; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        forward(net, x);
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
      }
      return best;
    };
    const double unfolded_ms = time_ms(g);
    const double folded_ms = time_ms(folded);
    const Footprint fp = footprint(g, Shape{batch, 3, s.input_size, s.input_size});
    r.emit({{"command", "bench"}, {"graph", dssd ? "dssd" : "ssd"}, {"unfolded_ms", unfolded_ms},
            {"folded_ms", folded_ms}, {"speedup", unfolded_ms / folded_ms},
            {"nodes_unfolded", g.nodes().size()}, {"nodes_folded", folded.nodes().size()},
            {"parameter_bytes", fp.parameter_bytes}, {"activation_bytes", fp.activation_bytes}});
    return kExitOk;
  }
};

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Single-shot detectors with a deconvolutional decoder on a CPU tensor core", "dssd"};
  app.require_subcommand(1);
  Global global;
  app.add_option("--threads", global.threads, "Worker threads (1 is the reference mode)")
      ->check(CLI::PositiveNumber);
  app.add_flag("--pretty", global.pretty, "Human-readable tables instead of JSON lines");

  GenData gen_data;
  TrainSsd train_ssd_cmd;
  TrainDssd train_dssd_cmd;
  Eval eval;
  Detect detect_cmd;
  FoldBn fold_bn;
  Anchors anchors;
  Cluster cluster;
  GradCheck gradcheck;
  Bench bench;

  std::vector<std::pair<CLI::App*, std::function<int(Reporter&)>>> commands;
  auto add = [&](auto& cmd, const char* name, const char* about) {
    CLI::App* sub = app.add_subcommand(name, about);
    cmd.add(sub);
    commands.emplace_back(sub, [&cmd](Reporter& r) { return cmd.run(r); });
  };
  add(gen_data, "gen-data", "Generate a synthetic shapes dataset");
  add(train_ssd_cmd, "train-ssd", "Train an SSD from scratch");
  add(train_dssd_cmd, "train-dssd", "Train a DSSD decoder (stage 1) or fine-tune it (stage 2)");
  add(eval, "eval", "Mean average precision of a checkpoint on a dataset");
  add(detect_cmd, "detect", "Detections for PPM images");
  add(fold_bn, "fold-bn", "Fold batch norms into convolutions and verify equivalence");
  add(anchors, "anchors", "Anchor counts of a geometry");
  add(cluster, "cluster", "K-means clustering of box aspect ratios");
  add(gradcheck, "gradcheck", "Finite-difference gradient suite");
  add(bench, "bench", "Folded versus unfolded inference timing");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kExitUsage;
  }

  set_num_threads(global.threads);
  Reporter reporter(out, err, global.pretty);
  for (auto& [sub, run] : commands) {
    if (!sub->parsed()) continue;
    try {
      return run(reporter);
    } catch (const CLI::ParseError& e) {
      err << "usage error: " << e.what() << "\n" << sub->help();
      return kExitUsage;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return kExitDomainError;
    }
  }
  return kExitUsage;
}

}  // namespace dssd::cli
