#include "dssd/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "dssd/errors.hpp"

namespace dssd {
namespace {

std::vector<std::size_t> select_entries(const std::vector<float>& analytic, std::size_t cap) {
  const std::size_t n = analytic.size();
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (cap == 0 || n <= cap) return all;
  const std::size_t top = cap / 2;
  std::partial_sort(all.begin(), all.begin() + top, all.end(), [&](std::size_t a, std::size_t b) {
    const float x = std::abs(analytic[a]);
    const float y = std::abs(analytic[b]);
    return x != y ? x > y : a < b;
  });
  std::vector<std::size_t> picked(all.begin(), all.begin() + top);
  const std::size_t rest = cap - top;
  const std::size_t stride = (n + rest - 1) / rest;
  for (std::size_t i = 0; i < n; i += stride) picked.push_back(i);
  std::sort(picked.begin(), picked.end());
  picked.erase(std::unique(picked.begin(), picked.end()), picked.end());
  return picked;
}

}  // namespace

GradCheckResult grad_check(const std::function<double()>& objective,
                           std::span<Tensor* const> targets, const GradCheckOptions& options,
                           const std::function<std::uint64_t()>& pattern) {
  GradCheckResult result;
  const double base = objective();
  if (!std::isfinite(base)) throw NumericError("grad_check: non-finite objective");
  const std::uint64_t base_pattern = pattern ? pattern() : 0;
  for (Tensor* t : targets) {
    if (!t->has_grad()) throw SpecError("grad_check: target has no analytic gradient");
    const std::vector<float> analytic(t->grad().begin(), t->grad().end());
    const std::vector<std::size_t> entries = select_entries(analytic, options.max_entries_per_tensor);
    double diff_sq = 0.0;
    double analytic_sq = 0.0;
    double numeric_sq = 0.0;
    for (std::size_t i : entries) {
      const float original = (*t)[i];
      // A stencil that crosses a kink falls back to the one-sided difference
      // on the side that stays in the unperturbed regime, then to smaller
      // steps when both sides cross.
      double numeric = std::nan("");
      float step = options.step;
      for (int attempt = 0; attempt <= options.kink_retries; ++attempt, step /= 4.0f) {
        const float up = original + step;
        const float down = original - step;
        (*t)[i] = up;
        const double plus = objective();
        const bool plus_ok = !pattern || pattern() == base_pattern;
        (*t)[i] = down;
        const double minus = objective();
        const bool minus_ok = !pattern || pattern() == base_pattern;
        (*t)[i] = original;
        if (!std::isfinite(plus) || !std::isfinite(minus)) {
          throw NumericError("grad_check: non-finite objective under perturbation");
        }
        // Differences use the perturbations actually applied, after rounding.
        if (plus_ok && minus_ok) {
          numeric = (plus - minus) / (static_cast<double>(up) - static_cast<double>(down));
        } else if (plus_ok) {
          numeric = (plus - base) / (static_cast<double>(up) - static_cast<double>(original));
        } else if (minus_ok) {
          numeric = (base - minus) / (static_cast<double>(original) - static_cast<double>(down));
        } else {
          continue;
        }
        break;
      }
      if (std::isnan(numeric)) {
        ++result.skipped;
        continue;
      }
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      result.max_entry_error = std::max(result.max_entry_error, std::abs(a - numeric) / denom);
      diff_sq += (a - numeric) * (a - numeric);
      analytic_sq += a * a;
      numeric_sq += numeric * numeric;
      ++result.checked;
    }
    const double denom = std::max({std::sqrt(analytic_sq), std::sqrt(numeric_sq), 1e-8});
    result.max_relative_error = std::max(result.max_relative_error, std::sqrt(diff_sq) / denom);
  }
  objective();  // leave any caches consistent with the unperturbed point
  return result;
}

}  // namespace dssd
