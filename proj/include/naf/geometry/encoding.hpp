#pragma once

// Sinusoidal positional encoding.
//
// Layout (coordinate-major): for coordinate d in (x, y, z) and frequency
// l in [0, L), entries 2*(d*L + l) and 2*(d*L + l) + 1 hold
// sin(2^l * pi * x_d) and cos(2^l * pi * x_d). Output width is 6L.

#include <cmath>
#include <numbers>
#include <vector>

#include "naf/geometry/rotation.hpp"
#include "naf/numcore/ops.hpp"

namespace naf {

inline std::vector<double> positional_encoding(const Vec3& x, int frequencies) {
  if (frequencies < 1) throw std::invalid_argument("positional_encoding: need at least one frequency");
  std::vector<double> out(6 * frequencies);
  for (int d = 0; d < 3; ++d)
    for (int l = 0; l < frequencies; ++l) {
      const double a = std::ldexp(std::numbers::pi, l) * x[d];
      out[2 * (d * frequencies + l)] = std::sin(a);
      out[2 * (d * frequencies + l) + 1] = std::cos(a);
    }
  return out;
}

// Batched, differentiable version: [N, 3] -> [N, 6L].
template <typename Real>
Tensor<Real> encode_positions(const Tensor<Real>& x, int frequencies) {
  detail::require(x.ndim() == 2 && x.dim(1) == 3, "encode_positions", "expected [N, 3], got " + shape_str(x.shape()));
  if (frequencies < 1) throw std::invalid_argument("encode_positions: need at least one frequency");
  const std::size_t n = x.dim(0), L = static_cast<std::size_t>(frequencies), w = 6 * L;
  Buffer<Real> out(n * w);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < 3; ++d)
      for (std::size_t l = 0; l < L; ++l) {
        const Real a = static_cast<Real>(std::ldexp(std::numbers::pi, static_cast<int>(l))) * xv[i * 3 + d];
        out[i * w + 2 * (d * L + l)] = std::sin(a);
        out[i * w + 2 * (d * L + l) + 1] = std::cos(a);
      }
  return make_result<Real>("encode_positions", {n, w}, std::move(out), {x}, [n, L, w](Node<Real>& self) {
    auto* g = detail::parent_grad(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t d = 0; d < 3; ++d) {
        Real acc = 0;
        for (std::size_t l = 0; l < L; ++l) {
          const Real f = static_cast<Real>(std::ldexp(std::numbers::pi, static_cast<int>(l)));
          const std::size_t s = i * w + 2 * (d * L + l);
          // d sin = f cos, d cos = -f sin
          acc += f * (self.grad[s] * self.value[s + 1] - self.grad[s + 1] * self.value[s]);
        }
        (*g)[i * 3 + d] += acc;
      }
  });
}

}  // namespace naf
