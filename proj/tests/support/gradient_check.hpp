#pragma once

// Central finite differences, independent of the reverse pass: each
// coordinate is perturbed and the loss rebuilt from scratch via the
// supplied forward closure.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "npas/tensor.hpp"

namespace npas::testing {

using LossFn = std::function<double()>;

inline std::vector<double> finite_diff_gradient(Tensor& param,
                                                const LossFn& loss,
                                                double h = 1e-5) {
  auto& values = param.leaf_values();
  std::vector<double> grad(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double fp = loss();
    values[i] = saved - h;
    const double fm = loss();
    values[i] = saved;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

struct GradCheckResult {
  bool ok = true;
  double worst_rel_err = 0.0;
  std::string detail;
};

// relative error with a unit floor, as is conventional for gradient checks
inline GradCheckResult compare_gradients(const std::vector<double>& analytic,
                                         const std::vector<double>& numeric,
                                         double tolerance) {
  GradCheckResult res;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom =
        std::max({1.0, std::abs(analytic[i]), std::abs(numeric[i])});
    const double rel = std::abs(analytic[i] - numeric[i]) / denom;
    if (rel > res.worst_rel_err) res.worst_rel_err = rel;
    if (rel > tolerance && res.ok) {
      res.ok = false;
      res.detail = "coordinate " + std::to_string(i) + ": analytic " +
                   std::to_string(analytic[i]) + " vs numeric " +
                   std::to_string(numeric[i]);
    }
  }
  return res;
}

// Runs backward once, then checks every listed parameter against central
// differences of the rebuilt forward.
inline GradCheckResult check_gradients(std::vector<Tensor> params,
                                       const std::function<Tensor()>& forward,
                                       double tolerance = 1e-5,
                                       double h = 1e-5) {
  for (Tensor& p : params) p.zero_grad();
  const Tensor loss = forward();
  backward(loss);
  const LossFn loss_value = [&] { return forward().scalar_value(); };
  GradCheckResult worst;
  for (Tensor& p : params) {
    const std::vector<double> numeric = finite_diff_gradient(p, loss_value, h);
    const GradCheckResult r = compare_gradients(p.grad(), numeric, tolerance);
    worst.worst_rel_err = std::max(worst.worst_rel_err, r.worst_rel_err);
    if (!r.ok && worst.ok) {
      worst.ok = false;
      worst.detail = r.detail;
    }
  }
  return worst;
}

}  // namespace npas::testing
