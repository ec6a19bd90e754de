#include "sdetr/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace sdetr {

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double eps) {
  Tensor leaf = Tensor::parameter(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
  return grad_check([&] { return f(leaf); }, {leaf}, eps);
}

GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           double eps, std::size_t max_coords_per_input) {
  if (!(eps > 0.0)) throw ValidationError("grad_check: eps must be positive");
  for (auto& in : inputs) {
    if (!in.requires_grad()) throw ValidationError("grad_check: inputs must be parameters");
    in.zero_grad();
  }
  backward(f());
  std::vector<Tensor> analytic;
  analytic.reserve(inputs.size());
  for (const auto& in : inputs) analytic.push_back(in.grad_tensor());

  GradCheckResult result;
  std::size_t flat_base = 0;
  NoGradGuard no_grad;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto values = inputs[t].mutable_data();
    const std::size_t n = values.size();
    const std::size_t step =
        (max_coords_per_input == 0 || n <= max_coords_per_input) ? 1 : n / max_coords_per_input;
    for (std::size_t i = 0; i < n; i += step) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = f().item();
      values[i] = saved - eps;
      const double down = f().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[t].data()[i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(a - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error || result.checked == 1) {
        result.max_rel_error = rel;
        result.worst_index = flat_base + i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
    flat_base += n;
  }
  for (auto& in : inputs) in.zero_grad();
  return result;
}

}  // namespace sdetr
