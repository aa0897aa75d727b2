#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "eegdm/numerics/autograd.hpp"

namespace eegdm {

// Denominator floor for whole-model checks. Central differences at step 1e-5
// on an O(1) loss resolve gradients only to about 1e-11 in 64-bit, so smaller
// coordinates are compared on absolute error instead.
inline constexpr double kModelGradFloor = 1e-7;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

struct NamedVar {
  std::string name;
  Var<double> var;
};

// Compares reverse-mode gradients of `loss_fn` against central finite
// differences, coordinate by coordinate. Relative error is
// |a - n| / max(|a|, |n|, floor); `floor` only guards exact zeros.
inline GradCheckResult grad_check(const std::vector<NamedVar>& params, const std::function<Var<double>()>& loss_fn,
                                  double step = 1e-5, double floor = 1e-8) {
  for (const auto& p : params) p.var.node()->grad = Tensor<double>();
  {
    const auto loss = loss_fn();
    backward(loss);
  }
  GradCheckResult result;
  NoGradGuard no_grad;
  for (const auto& p : params) {
    Var<double> v = p.var;
    const Tensor<double> analytic = v.grad();
    auto& values = v.mutable_value();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + step;
      const double up = loss_fn().value().item();
      values[i] = orig - step;
      const double down = loss_fn().value().item();
      values[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++result.coordinates;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = p.name;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace eegdm
