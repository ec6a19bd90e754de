#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "sdetr/tensor.hpp"

namespace sdetr {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;  // flat index over all checked inputs, in order
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients of a scalar function with central differences
/// (f(x+eps·e) - f(x-eps·e)) / (2·eps). The relative error of one coordinate is
/// |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double eps = 1e-5);

/// Same comparison over leaves captured by `f`, perturbed in place and restored.
/// `max_coords_per_input` > 0 checks an evenly strided subset of each input.
GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           double eps = 1e-5, std::size_t max_coords_per_input = 0);

}  // namespace sdetr
