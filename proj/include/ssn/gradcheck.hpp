#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "ssn/tensor.hpp"

namespace ssn {

struct GradCheckReport {
  double max_abs_err = 0;
  double max_rel_err = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Central-difference check of analytic gradients. Each tensor in `params`
/// must already hold its analytic gradient (from a prior backward pass);
/// `loss_fn()` recomputes the scalar objective from current parameter values.
/// `step` subsamples large tensors (every step-th element is probed).
template <typename T, typename F>
GradCheckReport gradcheck(const std::vector<Tensor<T>>& params, F&& loss_fn,
                          double eps = 1e-4, std::size_t step = 1) {
  GradCheckReport rep;
  if (step == 0) step = 1;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T> p = params[pi];
    if (!p.has_grad())
      throw ShapeError("gradcheck: parameter " + std::to_string(pi) +
                       " has no gradient buffer");
    for (std::size_t i = 0; i < p.numel(); i += step) {
      const T saved = p.values()[i];
      p.values()[i] = saved + static_cast<T>(eps);
      const double lp = loss_fn();
      p.values()[i] = saved - static_cast<T>(eps);
      const double lm = loss_fn();
      p.values()[i] = saved;
      const double num = (lp - lm) / (2.0 * eps);
      const double ana = static_cast<double>(p.grad()[i]);
      const double abs_err = std::abs(num - ana);
      const double rel_err =
          abs_err / std::max(1e-8, std::abs(num) + std::abs(ana));
      if (abs_err > rep.max_abs_err) rep.max_abs_err = abs_err;
      if (rel_err > rep.max_rel_err) {
        rep.max_rel_err = rel_err;
        rep.worst_param = pi;
        rep.worst_index = i;
      }
      ++rep.checked;
    }
  }
  return rep;
}

}  // namespace ssn
