#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "epcfusion/diffcore/tensor.hpp"
#include "epcfusion/random.hpp"

namespace epcfusion::diffcore {

struct GradCheckOptions {
  double step = 1e-5;
  // Coordinates sampled per tensor; 0 checks every coordinate.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
  // Relative disagreement of left/right slopes or second differences that
  // marks a non-smooth point.
  double kink_tolerance = 1e-3;
  // Largest tolerated roundoff share of |g_ad| + |g_fd| before the step grows
  // tenfold (at most max_step_growth times).
  double roundoff_budget = 1e-6;
  int max_step_growth = 2;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  // Best one-sided agreement at skipped points; reported, not part of the max.
  double max_kink_one_sided_error = 0.0;
  std::size_t grown_steps = 0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

/// Compares reverse-mode gradients of the scalar `loss` (rebuilt from the
/// current parameter values on every call) against central differences.
/// A coordinate whose left and right second differences disagree sits on a
/// branch point (ReLU at 0, Huber at |e| = delta, ...). Those are compared
/// one-sided only and excluded from the maximum.
inline GradCheckResult grad_check(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                                  const GradCheckOptions& options = {}) {
  for (Tensor& p : params) p.zero_grad();
  const Tensor root = loss();
  const double f0 = root.item();
  backward(root);

  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (Tensor& p : params) {
    analytic.push_back(p.has_grad() ? p.grad() : Matrix::Zero(p.rows(), p.cols()));
  }

  auto evaluate = [&]() {
    NoGradGuard no_grad;
    return loss().item();
  };

  Rng rng(options.seed);
  GradCheckResult result;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = params[t];
    const Index n = p.mutable_value().size();
    std::vector<Index> coords;
    if (options.max_coords_per_tensor == 0 || static_cast<std::size_t>(n) <= options.max_coords_per_tensor) {
      for (Index i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (std::size_t k = 0; k < options.max_coords_per_tensor; ++k) {
        coords.push_back(static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
      }
    }
    for (Index i : coords) {
      double& x = p.mutable_value().data()[i];
      const double saved = x;
      auto at = [&](double offset) {
        x = saved + offset;
        const double f = evaluate();
        x = saved;
        return f;
      };
      const double a = analytic[t].data()[i];
      // Roundoff in the central difference is ~ eps * |f| / h; when that would
      // swamp the comparison for a tiny gradient, retry with a larger step.
      double h = options.step;
      for (int attempt = 0;; ++attempt) {
        const double fp = at(h);
        const double fm = at(-h);
        const double fp2 = at(2.0 * h);
        const double fm2 = at(-2.0 * h);
        const double central = (fp - fm) / (2.0 * h);
        const double forward = (fp - f0) / h;
        const double backward_slope = (f0 - fm) / h;
        const double roundoff =
            4.0 * std::numeric_limits<double>::epsilon() * std::max({std::abs(f0), std::abs(fp), std::abs(fm)}) / h;
        if (roundoff > options.roundoff_budget * (std::abs(a) + std::abs(central)) && attempt < options.max_step_growth) {
          h *= 10.0;
          ++result.grown_steps;
          continue;
        }
        // Slope jump catches C0 kinks, curvature jump catches C1 ones.
        const bool slope_kink = std::abs(forward - backward_slope) >
                                options.kink_tolerance * std::max(std::abs(central), roundoff + 1e-12);
        const double curv_right = (fp2 - 2.0 * fp + f0) / (h * h);
        const double curv_left = (f0 - 2.0 * fm + fm2) / (h * h);
        const double scale = std::max({1.0, std::abs(curv_left), std::abs(curv_right)});
        const bool curvature_kink = std::abs(curv_right - curv_left) > options.kink_tolerance * scale;
        if (slope_kink || curvature_kink) {
          ++result.skipped_kinks;
          const double one_sided = std::min(relative_error(a, forward), relative_error(a, backward_slope));
          result.max_kink_one_sided_error = std::max(result.max_kink_one_sided_error, one_sided);
        } else {
          result.max_rel_error = std::max(result.max_rel_error, relative_error(a, central));
          ++result.checked;
        }
        break;
      }
    }
  }
  return result;
}

}  // namespace epcfusion::diffcore
