#pragma once

// Ray sampling inside a box and alpha compositing.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "naf/geometry/camera.hpp"
#include "naf/geometry/skeleton.hpp"
#include "naf/numcore/ops.hpp"
#include "naf/numcore/rng.hpp"

namespace naf {

// Entry and exit distances of a ray through a box (slab test). Returns false
// when the ray misses or the box lies behind the origin.
inline bool intersect_box(const Ray& ray, const Aabb& box, double& t_near, double& t_far) {
  t_near = 0;
  t_far = std::numeric_limits<double>::infinity();
  for (int d = 0; d < 3; ++d) {
    const double inv = 1.0 / ray.direction[d];
    double a = (box.lo[d] - ray.origin[d]) * inv, b = (box.hi[d] - ray.origin[d]) * inv;
    if (std::isnan(a) || std::isnan(b)) {
      if (ray.origin[d] < box.lo[d] || ray.origin[d] > box.hi[d]) return false;
      continue;
    }
    if (a > b) std::swap(a, b);
    t_near = std::max(t_near, a);
    t_far = std::min(t_far, b);
  }
  return t_near < t_far;
}

struct RaySamples {
  bool empty = true;
  std::vector<double> t;      // D increasing depths
  std::vector<double> delta;  // t[i+1] - t[i]; the last interval is 0
};

// D depths spanning [near, far]. Stratified sampling jitters every depth
// within its own cell of width (far - near) / D; both variants keep the
// endpoints of the covered interval inside [near, far].
inline RaySamples sample_depths(double near, double far, std::size_t d, bool stratified, Rng* rng) {
  if (!(near < far)) throw std::invalid_argument("sample_depths: near must be less than far");
  if (d < 2) throw std::invalid_argument("sample_depths: need at least 2 samples per ray");
  RaySamples s;
  s.empty = false;
  s.t.resize(d);
  if (stratified) {
    const double cell = (far - near) / static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) s.t[i] = near + cell * (static_cast<double>(i) + rng->uniform());
  } else {
    for (std::size_t i = 0; i < d; ++i) s.t[i] = near + (far - near) * static_cast<double>(i) / static_cast<double>(d - 1);
  }
  s.delta.resize(d);
  for (std::size_t i = 0; i + 1 < d; ++i) s.delta[i] = s.t[i + 1] - s.t[i];
  s.delta[d - 1] = 0;
  return s;
}

// Samples along the ray between its entries into and out of `box`.
inline RaySamples sample_ray(const Ray& ray, const Aabb& box, std::size_t d, bool stratified, Rng* rng) {
  double n, f;
  if (!intersect_box(ray, box, n, f)) return {};
  return sample_depths(n, f, d, stratified, rng);
}

// rgb: [R*D, 3], sigma: [R*D, 1], delta: R*D interval lengths.
// Returns [R, 4]: composited colour and accumulated alpha per ray.
template <typename Real>
Tensor<Real> composite(const Tensor<Real>& rgb, const Tensor<Real>& sigma, const Buffer<Real>& delta,
                       std::size_t samples_per_ray) {
  const std::size_t m = rgb.rows(), d = samples_per_ray;
  detail::require(rgb.ndim() == 2 && rgb.dim(1) == 3 && sigma.size() == m && delta.size() == m && d > 0 && m % d == 0,
                  "composite", "inconsistent inputs: rgb " + shape_str(rgb.shape()) + ", sigma " +
                                   shape_str(sigma.shape()) + ", " + std::to_string(delta.size()) + " intervals");
  const std::size_t r = m / d;
  const auto& c = rgb.values();
  const auto& s = sigma.values();
  Buffer<Real> out(r * 4, Real(0));
  Buffer<Real> trans(m + r);  // T_1..T_{D+1} per ray
  for (std::size_t ray = 0; ray < r; ++ray) {
    Real* T = &trans[ray * (d + 1)];
    T[0] = 1;
    for (std::size_t i = 0; i < d; ++i) {
      const std::size_t k = ray * d + i;
      T[i + 1] = T[i] * std::exp(-s[k] * delta[k]);
      const Real w = T[i] - T[i + 1];
      for (int ch = 0; ch < 3; ++ch) out[ray * 4 + ch] += w * c[k * 3 + ch];
    }
    out[ray * 4 + 3] = 1 - T[d];
  }
  return make_result<Real>(
      "composite", {r, 4}, std::move(out), {rgb, sigma},
      [trans = std::move(trans), delta, d, r](Node<Real>& self) {
        auto* gc = detail::parent_grad(self, 0);
        auto* gs = detail::parent_grad(self, 1);
        const auto& c = self.parents[0]->value;
        for (std::size_t ray = 0; ray < r; ++ray) {
          const Real* g = &self.grad[ray * 4];
          const Real* T = &trans[ray * (d + 1)];
          // Suffix sum of w_k (g . c_k) over k > i.
          Real tail = 0;
          for (std::size_t i = d; i-- > 0;) {
            const std::size_t k = ray * d + i;
            const Real w = T[i] - T[i + 1];
            const Real gdotc = g[0] * c[k * 3] + g[1] * c[k * 3 + 1] + g[2] * c[k * 3 + 2];
            if (gc)
              for (int ch = 0; ch < 3; ++ch) (*gc)[k * 3 + ch] += w * g[ch];
            if (gs) (*gs)[k] += delta[k] * (T[i + 1] * gdotc - tail + g[3] * T[d]);
            tail += w * gdotc;
          }
        }
      });
}

}  // namespace naf
