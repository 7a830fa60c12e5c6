#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rearec/errors.hpp"
#include "rearec/numeric/tensor.hpp"

namespace rearec::numeric {

// Central-difference gradient verification at double precision.
//
// `f` evaluates the scalar objective from the *current* contents of the
// parameter tensors. When called with a non-null vector pointer it must also
// fill analytic gradients, one tensor per parameter, in parameter order.
// Returns max over all parameter entries of
//   |analytic - central| / max(|analytic|, |central|, 1e-8).
struct GradCheckReport {
  double max_rel_err = 0.0;
  size_t param_index = 0;   // which parameter tensor held the worst entry
  size_t entry_index = 0;
  double analytic = 0.0;
  double central = 0.0;
};

inline GradCheckReport grad_check_report(
    const std::function<double(std::vector<Tensor<double>>*)>& f,
    std::span<Tensor<double>* const> params, double eps = 1e-5) {
  std::vector<Tensor<double>> analytic;
  const double f0 = f(&analytic);
  if (!std::isfinite(f0)) throw NumericError("grad_check: objective is not finite");
  if (analytic.size() != params.size())
    throw ArgumentError("grad_check: analytic gradient count mismatch");

  GradCheckReport report;
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor<double>& theta = *params[p];
    if (!theta.same_shape(analytic[p]))
      throw ArgumentError("grad_check: gradient shape mismatch");
    for (size_t i = 0; i < theta.size(); ++i) {
      const double saved = theta[i];
      theta[i] = saved + eps;
      const double f_plus = f(nullptr);
      theta[i] = saved - eps;
      const double f_minus = f(nullptr);
      theta[i] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
        throw NumericError("grad_check: perturbed objective is not finite");
      const double central = (f_plus - f_minus) / (2.0 * eps);
      const double a = analytic[p][i];
      const double rel =
          std::abs(a - central) / std::max({std::abs(a), std::abs(central), 1e-8});
      if (rel > report.max_rel_err) {
        report = {rel, p, i, a, central};
      }
    }
  }
  return report;
}

inline double grad_check(const std::function<double(std::vector<Tensor<double>>*)>& f,
                         std::span<Tensor<double>* const> params, double eps = 1e-5) {
  return grad_check_report(f, params, eps).max_rel_err;
}

}  // namespace rearec::numeric
