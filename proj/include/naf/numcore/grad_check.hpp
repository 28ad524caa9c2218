#pragma once

// Central finite-difference gradient checking.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "naf/numcore/mlp.hpp"

namespace naf {

struct GradCheckResult {
  double max_relative_error = 0;
  double max_abs_analytic = 0;
  std::size_t checked = 0;
};

// Relative error with an absolute floor: |a - n| / max(|a|, |n|, floor).
// Components whose gradients are both below the floor are compared in
// absolute terms, so exact zeros never divide by zero.
inline double relative_error(double analytic, double numeric, double floor = 1e-2) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Compares d(loss)/d(param) from backward() against central differences for
// every element of every tensor in params. loss_fn must rebuild the graph on
// each call.
template <typename Real>
GradCheckResult grad_check(const std::function<Tensor<Real>()>& loss_fn, std::vector<Tensor<Real>> params,
                           double h = 1e-3, std::size_t max_elements_per_tensor = 0) {
  for (auto& p : params) p.zero_grad();
  backward(loss_fn());
  GradCheckResult res;
  for (auto& p : params) {
    Buffer<Real> analytic(p.size(), Real(0));
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    auto data = p.mutable_data();
    std::size_t n = data.size();
    std::size_t stride = 1;
    if (max_elements_per_tensor && n > max_elements_per_tensor) stride = n / max_elements_per_tensor;
    for (std::size_t i = 0; i < n; i += stride) {
      const Real saved = data[i];
      data[i] = static_cast<Real>(saved + h);
      const double fp = loss_fn().item();
      data[i] = static_cast<Real>(saved - h);
      const double fm = loss_fn().item();
      data[i] = saved;
      const double numeric = (fp - fm) / (2 * h);
      res.max_relative_error = std::max(res.max_relative_error, relative_error(analytic[i], numeric));
      res.max_abs_analytic = std::max(res.max_abs_analytic, std::abs(static_cast<double>(analytic[i])));
      ++res.checked;
    }
  }
  return res;
}

// Gradient check of an MLP under the scalar loss sum(r * mlp(input)) for a
// fixed random projection r. Returns the max relative error over all
// parameters.
template <typename Real>
double grad_check(const Mlp<Real>& model, const Tensor<Real>& input, std::uint64_t seed = 7, double h = 1e-3) {
  Rng rng(seed);
  const std::size_t n = input.rows(), m = model.output_width();
  Buffer<Real> r(n * m);
  for (auto& v : r) v = static_cast<Real>(rng.uniform(-1, 1));
  auto proj = Tensor<Real>::from({n, m}, r);
  auto fn = [&]() { return sum(mul(model.forward(input), proj)); };
  return grad_check<Real>(fn, model.parameters(), h).max_relative_error;
}

}  // namespace naf
