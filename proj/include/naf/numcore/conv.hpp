#pragma once

// 2D convolution on channels-last images [H, W, C] via im2col.

#include "naf/numcore/ops.hpp"

namespace naf {

namespace detail {

struct ConvGeometry {
  std::size_t h, w, cin, k, stride, pad, ho, wo;
  std::size_t patch() const { return k * k * cin; }
};

template <typename Real>
Buffer<Real> im2col(const Buffer<Real>& x, const ConvGeometry& g) {
  Buffer<Real> cols(g.ho * g.wo * g.patch(), Real(0));
  for (std::size_t oy = 0; oy < g.ho; ++oy)
    for (std::size_t ox = 0; ox < g.wo; ++ox) {
      Real* dst = cols.data() + (oy * g.wo + ox) * g.patch();
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
        if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
          if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
          std::copy_n(x.data() + (iy * g.w + ix) * g.cin, g.cin, dst + (ky * g.k + kx) * g.cin);
        }
      }
    }
  return cols;
}

template <typename Real>
void col2im_add(const Buffer<Real>& cols, const ConvGeometry& g, Buffer<Real>& x) {
  for (std::size_t oy = 0; oy < g.ho; ++oy)
    for (std::size_t ox = 0; ox < g.wo; ++ox) {
      const Real* src = cols.data() + (oy * g.wo + ox) * g.patch();
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
        if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
          if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
          Real* d = x.data() + (iy * g.w + ix) * g.cin;
          const Real* s = src + (ky * g.k + kx) * g.cin;
          for (std::size_t c = 0; c < g.cin; ++c) d[c] += s[c];
        }
      }
    }
}

}  // namespace detail

// x: [H, W, Cin]; weight: [k*k*Cin, Cout] laid out (ky, kx, cin); bias: [1, Cout].
// Zero padding of k/2, so stride 1 preserves the spatial size.
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias,
                    std::size_t kernel, std::size_t stride = 1) {
  detail::require(x.ndim() == 3, "conv2d", "expected [H, W, C] input, got " + shape_str(x.shape()));
  detail::ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), kernel, stride, kernel / 2, 0, 0};
  detail::require(weight.ndim() == 2 && weight.dim(0) == g.patch(), "conv2d",
                  "weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()) +
                      " and kernel " + std::to_string(kernel));
  const std::size_t cout = weight.dim(1);
  detail::require(bias.size() == cout, "conv2d", "bias " + shape_str(bias.shape()) + " does not match Cout");
  g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  auto cols = detail::im2col(x.values(), g);
  const std::size_t npix = g.ho * g.wo;
  Buffer<Real> out(npix * cout);
  auto y = detail::as_matrix(out, npix, cout);
  y.noalias() = detail::as_matrix(std::as_const(cols), npix, g.patch()) *
                detail::as_matrix(weight.values(), g.patch(), cout);
  y.rowwise() += detail::as_matrix(bias.values(), 1, cout).row(0);
  return make_result<Real>(
      "conv2d", {g.ho, g.wo, cout}, std::move(out), {x, weight, bias},
      [g, cout, npix, cols = std::move(cols)](Node<Real>& self) {
        auto gy = detail::as_matrix(std::as_const(self.grad), npix, cout);
        if (auto* gx = detail::parent_grad(self, 0)) {
          Buffer<Real> gcols(npix * g.patch());
          detail::as_matrix(gcols, npix, g.patch()).noalias() =
              gy * detail::as_matrix(std::as_const(self.parents[1]->value), g.patch(), cout).transpose();
          detail::col2im_add(gcols, g, *gx);
        }
        if (auto* gw = detail::parent_grad(self, 1))
          detail::as_matrix(*gw, g.patch(), cout).noalias() +=
              detail::as_matrix(cols, npix, g.patch()).transpose() * gy;
        if (auto* gb = detail::parent_grad(self, 2))
          detail::as_matrix(*gb, 1, cout).row(0) += gy.colwise().sum();
      });
}

// Nearest-neighbour 2x upsampling of [H, W, C].
template <typename Real>
Tensor<Real> upsample2x(const Tensor<Real>& x) {
  detail::require(x.ndim() == 3, "upsample2x", "expected [H, W, C] input, got " + shape_str(x.shape()));
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Buffer<Real> out(4 * h * w * c);
  for (std::size_t y = 0; y < 2 * h; ++y)
    for (std::size_t xx = 0; xx < 2 * w; ++xx)
      std::copy_n(x.values().data() + ((y / 2) * w + xx / 2) * c, c, out.data() + (y * 2 * w + xx) * c);
  return make_result<Real>("upsample2x", {2 * h, 2 * w, c}, std::move(out), {x}, [h, w, c](Node<Real>& self) {
    if (auto* g = detail::parent_grad(self, 0))
      for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t xx = 0; xx < 2 * w; ++xx)
          for (std::size_t k = 0; k < c; ++k)
            (*g)[((y / 2) * w + xx / 2) * c + k] += self.grad[(y * 2 * w + xx) * c + k];
  });
}

// Concatenates [H, W, C_i] images along channels.
template <typename Real>
Tensor<Real> concat_channels(const std::vector<Tensor<Real>>& parts) {
  detail::require(!parts.empty() && parts[0].ndim() == 3, "concat_channels", "expected [H, W, C] inputs");
  const std::size_t h = parts[0].dim(0), w = parts[0].dim(1);
  std::vector<Tensor<Real>> flat;
  for (const auto& p : parts) {
    detail::require(p.ndim() == 3 && p.dim(0) == h && p.dim(1) == w, "concat_channels",
                    "spatial mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    flat.push_back(reshape(p, {h * w, p.dim(2)}));
  }
  auto joined = concat_cols(flat);
  return reshape(joined, {h, w, joined.dim(1)});
}

}  // namespace naf
