#include "dssd/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "dssd/errors.hpp"

namespace dssd {
namespace {

struct Lloyd {
  std::vector<double> centers;
  std::vector<int> assignment;
  double error = 0.0;
};

int nearest(const std::vector<double>& centers, double x) {
  int best = 0;
  for (int j = 1; j < static_cast<int>(centers.size()); ++j) {
    if (std::abs(x - centers[j]) < std::abs(x - centers[best])) best = j;
  }
  return best;
}

double within_error(std::span<const double> v, std::span<const double> w,
                    const std::vector<double>& centers, const std::vector<int>& assignment) {
  double e = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double d = v[i] - centers[assignment[i]];
    e += w[i] * d * d;
  }
  return e;
}

Lloyd run_lloyd(std::span<const double> v, std::span<const double> w, std::vector<double> centers,
                int max_iters) {
  Lloyd r;
  r.assignment.assign(v.size(), -1);
  const int k = static_cast<int>(centers.size());
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const int j = nearest(centers, v[i]);
      changed |= j != r.assignment[i];
      r.assignment[i] = j;
    }
    if (!changed) break;
    std::vector<double> sum(k, 0.0);
    std::vector<double> mass(k, 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) {
      sum[r.assignment[i]] += w[i] * v[i];
      mass[r.assignment[i]] += w[i];
    }
    for (int j = 0; j < k; ++j) {
      if (mass[j] > 0.0) centers[j] = sum[j] / mass[j];
    }
  }
  r.centers = std::move(centers);
  r.error = within_error(v, w, r.centers, r.assignment);
  return r;
}

std::vector<double> quantile_seeds(std::span<const double> v, std::span<const double> w, int k) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  std::vector<double> seeds;
  double cum = 0.0;
  std::size_t idx = 0;
  for (int j = 0; j < k; ++j) {
    const double target = (j + 0.5) / k * total;
    while (idx + 1 < order.size() && cum + w[order[idx]] < target) cum += w[order[idx++]];
    seeds.push_back(v[order[idx]]);
  }
  return seeds;
}

KMeansResult finish(Lloyd best) {
  // Relabel clusters in ascending center order.
  const std::size_t k = best.centers.size();
  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return best.centers[a] < best.centers[b]; });
  std::vector<int> rank(k);
  KMeansResult r;
  for (std::size_t i = 0; i < k; ++i) {
    rank[order[i]] = static_cast<int>(i);
    r.centers.push_back(best.centers[order[i]]);
  }
  for (int a : best.assignment) r.assignment.push_back(rank[a]);
  r.error = best.error;
  return r;
}

KMeansResult kmeans_impl(std::span<const double> v, std::span<const double> w, int k,
                         std::uint64_t seed, int restarts, int max_iters,
                         const std::vector<double>& warm_start) {
  if (v.size() != w.size()) throw ShapeError("kmeans: values and weights differ in length");
  if (k < 1 || v.empty()) throw SpecError("kmeans: need k >= 1 and at least one value");
  std::vector<double> distinct(v.begin(), v.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (static_cast<int>(distinct.size()) <= k) {
    return finish(run_lloyd(v, w, distinct, max_iters));
  }

  Lloyd best = run_lloyd(v, w, quantile_seeds(v, w, k), max_iters);
  if (static_cast<int>(warm_start.size()) == k) {
    Lloyd warm = run_lloyd(v, w, warm_start, max_iters);
    if (warm.error < best.error) best = std::move(warm);
  }
  std::mt19937_64 rng(seed);
  for (int r = 1; r < restarts; ++r) {
    std::vector<double> seeds;
    std::sample(distinct.begin(), distinct.end(), std::back_inserter(seeds), k, rng);
    Lloyd cand = run_lloyd(v, w, std::move(seeds), max_iters);
    if (cand.error < best.error) best = std::move(cand);
  }
  return finish(std::move(best));
}

}  // namespace

KMeansResult kmeans_1d(std::span<const double> values, std::span<const double> weights, int k,
                       std::uint64_t seed, int restarts, int max_iters) {
  return kmeans_impl(values, weights, k, seed, restarts, max_iters, {});
}

ClusterReport cluster_aspect_ratios(std::span<const Box> boxes, WeightMode mode, std::uint64_t seed,
                                    double improvement, int max_k) {
  if (boxes.size() < 2) throw SpecError("cluster: at least two boxes are required");
  std::vector<double> ratios;
  std::vector<double> weights;
  for (const Box& b : boxes) {
    if (!(b.w > 0.0 && b.h > 0.0)) throw SpecError("cluster: degenerate box");
    ratios.push_back(b.w / b.h);
    weights.push_back(mode == WeightMode::kSqrtArea ? std::sqrt(b.w * b.h) : 1.0);
  }

  auto seed_for = [&](int k) { return seed * 1000003ull + static_cast<std::uint64_t>(k); };
  ClusterReport report;
  KMeansResult current;
  const bool degenerate =
      std::all_of(ratios.begin(), ratios.end(), [&](double r) { return r == ratios.front(); });
  if (degenerate) {
    current = kmeans_1d(ratios, weights, 1, seed_for(1));
    report.errors.push_back(current.error);
  } else {
    current = kmeans_1d(ratios, weights, 2, seed_for(2));
    report.errors.push_back(current.error);
    for (int k = 3; k <= max_k; ++k) {
      // Warm start from the previous solution plus its worst-fit point keeps
      // the error sweep non-increasing.
      std::vector<double> warm = current.centers;
      std::size_t worst = 0;
      double worst_d = -1.0;
      for (std::size_t i = 0; i < ratios.size(); ++i) {
        const double d = weights[i] * std::pow(ratios[i] - current.centers[current.assignment[i]], 2);
        if (d > worst_d) {
          worst_d = d;
          worst = i;
        }
      }
      warm.push_back(ratios[worst]);
      KMeansResult next = kmeans_impl(ratios, weights, k, seed_for(k), 10, 100, warm);
      report.errors.push_back(next.error);
      if (!(next.error < improvement * current.error)) break;
      current = std::move(next);
    }
  }

  const int k = static_cast<int>(current.centers.size());
  std::vector<double> mass(k, 0.0);
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (std::size_t i = 0; i < ratios.size(); ++i) mass[current.assignment[i]] += weights[i];
  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return mass[a] > mass[b]; });
  report.k = k;
  for (int j : order) {
    report.centers.push_back(current.centers[j]);
    report.fractions.push_back(mass[j] / total);
  }
  return report;
}

std::vector<double> max_ratio(std::span<const double> ratios) {
  std::vector<double> out;
  for (double r : ratios) {
    if (!(r > 0.0)) throw SpecError("max_ratio: ratios must be positive");
    out.push_back(std::max(r, 1.0 / r));
  }
  return out;
}

double average_precision(std::span<const char> is_true_positive, std::size_t num_gts) {
  if (num_gts == 0) return 0.0;
  const std::size_t n = is_true_positive.size();
  std::vector<double> recall(n);
  std::vector<double> precision(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += is_true_positive[i] ? 1 : 0;
    recall[i] = static_cast<double>(tp) / num_gts;
    precision[i] = static_cast<double>(tp) / (i + 1);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

namespace {

struct AreaRange {
  double lo = -1.0;  // exclusive
  double hi = std::numeric_limits<double>::infinity();  // inclusive
  bool contains(double a) const { return a > lo && a <= hi; }
};

// Per-class AP; NaN when the class has no counted gts.
std::vector<double> class_aps(const std::vector<std::vector<Detection>>& detections,
                              const std::vector<std::vector<GroundTruth>>& gts, int num_classes,
                              double iou_threshold, AreaRange range) {
  struct Ranked {
    std::size_t image;
    std::size_t index;
    float score;
  };
  std::vector<double> aps(num_classes, std::numeric_limits<double>::quiet_NaN());
  for (int c = 1; c < num_classes; ++c) {
    std::size_t counted = 0;
    std::vector<std::vector<char>> matched(gts.size());
    for (std::size_t im = 0; im < gts.size(); ++im) {
      matched[im].assign(gts[im].size(), 0);
      for (const GroundTruth& g : gts[im]) {
        if (g.label == c && range.contains(g.box.area())) ++counted;
      }
    }
    std::vector<Ranked> ranked;
    for (std::size_t im = 0; im < detections.size(); ++im) {
      for (std::size_t i = 0; i < detections[im].size(); ++i) {
        if (detections[im][i].label == c) ranked.push_back({im, i, detections[im][i].score});
      }
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const Ranked& a, const Ranked& b) { return a.score > b.score; });
    std::vector<char> tp;
    for (const Ranked& r : ranked) {
      const Box& box = detections[r.image][r.index].box;
      double best = 0.0;
      int best_gt = -1;
      if (r.image < gts.size()) {
        for (std::size_t g = 0; g < gts[r.image].size(); ++g) {
          if (gts[r.image][g].label != c) continue;
          const double iou = jaccard(box, gts[r.image][g].box);
          if (iou > best) {
            best = iou;
            best_gt = static_cast<int>(g);
          }
        }
      }
      if (best_gt >= 0 && best >= iou_threshold) {
        if (!range.contains(gts[r.image][best_gt].box.area())) continue;
        char& m = matched[r.image][best_gt];
        tp.push_back(m ? 0 : 1);
        m = 1;
      } else if (range.contains(box.area())) {
        tp.push_back(0);
      }
    }
    if (counted > 0) aps[c] = average_precision(tp, counted);
  }
  return aps;
}

double mean_present(const std::vector<double>& aps) {
  double sum = 0.0;
  int n = 0;
  for (double a : aps) {
    if (std::isnan(a)) continue;
    sum += a;
    ++n;
  }
  return n > 0 ? sum / n : 0.0;
}

}  // namespace

EvalReport evaluate_map(const std::vector<std::vector<Detection>>& detections,
                        const std::vector<std::vector<GroundTruth>>& gts, int num_classes,
                        double iou_threshold) {
  if (num_classes < 2) throw SpecError("evaluate_map: need at least one foreground class");
  EvalReport report;
  report.ap = class_aps(detections, gts, num_classes, iou_threshold, {});
  report.map = mean_present(report.ap);

  std::vector<double> areas;
  for (const auto& image : gts) {
    for (const GroundTruth& g : image) areas.push_back(g.box.area());
  }
  if (!areas.empty()) {
    std::sort(areas.begin(), areas.end());
    const double b1 = areas[(areas.size() - 1) / 3];
    const double b2 = areas[2 * (areas.size() - 1) / 3];
    report.by_size.small_max_area = b1;
    report.by_size.medium_max_area = b2;
    report.by_size.small = mean_present(class_aps(detections, gts, num_classes, iou_threshold, {-1.0, b1}));
    report.by_size.medium = mean_present(class_aps(detections, gts, num_classes, iou_threshold, {b1, b2}));
    report.by_size.large = mean_present(class_aps(detections, gts, num_classes, iou_threshold,
                                                  {b2, std::numeric_limits<double>::infinity()}));
  }
  return report;
}

}  // namespace dssd
