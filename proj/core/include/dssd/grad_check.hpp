#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "dssd/tensor.hpp"

namespace dssd {

struct GradCheckOptions {
  float step = 1e-3f;
  /// Caps the number of checked entries per tensor (0 checks every entry).
  /// A capped tensor checks the half of the cap with the largest analytic
  /// magnitude plus a fixed-stride sample for the rest.
  std::size_t max_entries_per_tensor = 0;
  /// When one side of the stencil leaves the activation pattern of the
  /// unperturbed point, the other side gives a one-sided difference. When
  /// both do, the entry is retried at a quarter of the step, this many times.
  int kink_retries = 2;
};

struct GradCheckResult {
  /// Max over target tensors of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8),
  /// with |.| the L2 norm over the tensor's checked entries.
  double max_relative_error = 0.0;
  /// The same ratio taken entry by entry. Float32 rounding dominates it for
  /// entries whose true gradient is near zero, so it is diagnostic only.
  double max_entry_error = 0.0;
  std::size_t checked = 0;
  /// Entries where every attempted stencil left the activation pattern
  /// (relu sign set, pool argmax) of the unperturbed point on both sides. The objective is not differentiable across
  /// those stencils, so they are excluded from the maximum.
  std::size_t skipped = 0;
};

/// Central-difference gradient check.
///
/// `objective` evaluates the scalar loss at the current values of `targets`.
/// Each target's grad() buffer must already hold the analytic gradient.
/// `pattern`, if set, returns a fingerprint of the piecewise-linear regime
/// after the most recent objective evaluation.
GradCheckResult grad_check(const std::function<double()>& objective,
                           std::span<Tensor* const> targets, const GradCheckOptions& options = {},
                           const std::function<std::uint64_t()>& pattern = {});

}  // namespace dssd
