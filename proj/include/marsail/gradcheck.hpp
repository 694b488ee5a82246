#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <string>

#include "marsail/error.hpp"
#include "marsail/tensor.hpp"

namespace marsail {

struct GradCheckConfig {
  double step = 1e-5;
  double rel_tol = 1e-4;
  /// Denominator floor so that near-zero gradients are compared absolutely.
  double scale_floor = 1e-4;

  void validate() const {
    if (!(step > 0.0) || !(rel_tol > 0.0) || !(scale_floor > 0.0)) {
      throw ConfigError("GradCheckConfig: step, rel_tol and scale_floor must be positive");
    }
  }
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool passed(const GradCheckConfig& cfg) const { return max_rel_error < cfg.rel_tol; }
};

/// Compares an analytic gradient against central differences
/// (f(x + h e_i) - f(x - h e_i)) / 2h, coordinate by coordinate.
template <typename F>
  requires std::invocable<F, const Tensor&>
GradCheckResult finite_diff_check_detailed(F&& f, const Tensor& x, const Tensor& analytic_grad,
                                           const GradCheckConfig& cfg = {}) {
  cfg.validate();
  detail::require_same_shape(x, analytic_grad, "finite_diff_check");
  GradCheckResult result;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + cfg.step;
    const double fp = static_cast<double>(f(static_cast<const Tensor&>(probe)));
    probe[i] = orig - cfg.step;
    const double fm = static_cast<double>(f(static_cast<const Tensor&>(probe)));
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw Error("finite_diff_check: non-finite function value at coordinate " +
                  std::to_string(i));
    }
    const double numeric = (fp - fm) / (2.0 * cfg.step);
    const double analytic = analytic_grad[i];
    const double denom = std::max({std::abs(numeric), std::abs(analytic), cfg.scale_floor});
    const double err = std::abs(numeric - analytic) / denom;
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
    }
  }
  return result;
}

template <typename F>
  requires std::invocable<F, const Tensor&>
double finite_diff_check(F&& f, const Tensor& x, const Tensor& analytic_grad,
                         const GradCheckConfig& cfg = {}) {
  return finite_diff_check_detailed(std::forward<F>(f), x, analytic_grad, cfg).max_rel_error;
}

}  // namespace marsail
