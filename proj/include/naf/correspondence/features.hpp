#pragma once

// Keyframe appearance: a small convolutional feature extractor, differentiable
// projection of points into a keyframe with bilinear sampling, and the MLP
// that blends the two keyframes' samples.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "naf/geometry/camera.hpp"
#include "naf/io/image.hpp"
#include "naf/numcore/conv.hpp"
#include "naf/numcore/mlp.hpp"

namespace naf {

struct FeatureConfig {
  std::size_t channels = 16;  // output feature width
  std::size_t base = 16;      // width of the first encoder level
};

// Three-level encoder-decoder with skip connections on (RGB, mask). The final
// 1x1 layer starts at zero and background pixels are zeroed.
template <typename Real = float>
class FeatureExtractor {
 public:
  struct Conv {
    Tensor<Real> weight, bias;
    std::size_t kernel, stride;
  };

  FeatureExtractor() = default;
  FeatureExtractor(const FeatureConfig& cfg, Rng& rng) : cfg_(cfg) {
    const std::size_t b = cfg.base;
    auto conv = [&](std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride) {
      return Conv{glorot_parameter<Real>(k * k * cin, cout, rng), Tensor<Real>::zeros({1, cout}, true), k, stride};
    };
    layers_ = {conv(4, b, 3, 1),          conv(b, 2 * b, 3, 2),     conv(2 * b, 2 * b, 3, 2),
               conv(4 * b, 2 * b, 3, 1), conv(3 * b, b, 3, 1),     conv(b, cfg.channels, 1, 1)};
    for (auto& v : layers_.back().weight.mutable_data()) v = Real(0);
  }

  std::size_t channels() const { return cfg_.channels; }

  // image: RGB, mask: 1 channel; returns [H, W, channels].
  Tensor<Real> extract(const Image& image, const Image& mask) const {
    if (image.width % 4 != 0 || image.height % 4 != 0)
      throw ShapeError("feature extractor: image size " + std::to_string(image.width) + "x" +
                       std::to_string(image.height) + " is not divisible by 4");
    if (image.width != mask.width || image.height != mask.height || image.channels != 3 || mask.channels != 1)
      throw ShapeError("feature extractor: expected RGB image and single-channel mask of equal size");
    const std::size_t h = image.height, w = image.width, n = h * w;
    Buffer<Real> in(n * 4), m(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) in[i * 4 + c] = static_cast<Real>(image.data[i * 3 + c]);
      in[i * 4 + 3] = m[i] = static_cast<Real>(mask.data[i]);
    }
    auto x = Tensor<Real>::from({h, w, 4}, std::move(in));
    auto apply = [&](const Tensor<Real>& t, std::size_t l) {
      const auto& c = layers_[l];
      return conv2d(t, c.weight, c.bias, c.kernel, c.stride);
    };
    auto e1 = relu(apply(x, 0));
    auto e2 = relu(apply(e1, 1));
    auto e3 = relu(apply(e2, 2));
    auto d2 = relu(apply(concat_channels<Real>({upsample2x(e3), e2}), 3));
    auto d1 = relu(apply(concat_channels<Real>({upsample2x(d2), e1}), 4));
    auto out = reshape(apply(d1, 5), {n, cfg_.channels});
    out = mul_colvec(out, Tensor<Real>::from({n, 1}, std::move(m)));
    return reshape(out, {h, w, cfg_.channels});
  }

  std::vector<Conv>& layers() { return layers_; }

  std::vector<std::pair<std::string, Tensor<Real>>> named_parameters(const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor<Real>>> out;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      out.emplace_back(prefix + ".conv" + std::to_string(l) + ".weight", layers_[l].weight);
      out.emplace_back(prefix + ".conv" + std::to_string(l) + ".bias", layers_[l].bias);
    }
    return out;
  }
  std::vector<Tensor<Real>> parameters() const {
    std::vector<Tensor<Real>> out;
    for (auto& [n, t] : named_parameters("")) out.push_back(t);
    return out;
  }

 private:
  FeatureConfig cfg_;
  std::vector<Conv> layers_;
};

template <typename Real>
struct KeyframeSample {
  Tensor<Real> values;                 // [N, C + 3]: features then colour
  std::vector<std::uint8_t> occluded;  // behind the camera or outside the image
};

// Projects observation-space points into a keyframe and bilinearly samples its
// feature map [H, W, C] and RGB image at the projected location (pixel
// centres at integer coordinates). Differentiable with respect to the points
// and the feature map. Unusable points get zeros and an occlusion flag. The
// image is referenced by the graph and must outlive backward().
template <typename Real>
KeyframeSample<Real> sample_keyframe(const Tensor<Real>& points, const Camera& cam, const Tensor<Real>& features,
                                     const Image& image) {
  detail::require(points.ndim() == 2 && points.dim(1) == 3, "sample_keyframe",
                  "expected [N, 3] points, got " + shape_str(points.shape()));
  detail::require(features.ndim() == 3 && features.dim(0) == static_cast<std::size_t>(image.height) &&
                      features.dim(1) == static_cast<std::size_t>(image.width) && image.channels == 3,
                  "sample_keyframe", "feature map " + shape_str(features.shape()) + " does not match the image");
  const std::size_t n = points.rows(), c = features.dim(2), w = c + 3;
  const int W = image.width, H = image.height;
  struct Site {
    std::uint32_t idx[4];
    Real wt[4], du[4], dv[4];
    Real jac[2][3];  // d(u, v) / d(point)
  };
  std::vector<Site> sites(n);
  std::vector<std::uint8_t> occ(n, 0);
  Buffer<Real> out(n * w, Real(0));
  const auto& pv = points.values();
  const auto& fv = features.values();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 x(pv[i * 3], pv[i * 3 + 1], pv[i * 3 + 2]);
    const Vec3 pc = cam.to_camera(x);
    if (!(pc.z() > kMinCameraDepth)) {
      occ[i] = 1;
      continue;
    }
    const double u = cam.fx * pc.x() / pc.z() + cam.cx, v = cam.fy * pc.y() / pc.z() + cam.cy;
    if (!(u >= 0 && u <= W - 1 && v >= 0 && v <= H - 1)) {
      occ[i] = 1;
      continue;
    }
    const int x0 = std::min(static_cast<int>(u), W - 2), y0 = std::min(static_cast<int>(v), H - 2);
    const Real fx = static_cast<Real>(u - x0), fy = static_cast<Real>(v - y0);
    auto& s = sites[i];
    for (int k = 0; k < 4; ++k) {
      const int bx = k & 1, by = k >> 1;
      s.idx[k] = static_cast<std::uint32_t>((y0 + by) * W + x0 + bx);
      const Real wx = bx ? fx : 1 - fx, wy = by ? fy : 1 - fy;
      s.wt[k] = wx * wy;
      s.du[k] = (bx ? 1 : -1) * wy;
      s.dv[k] = (by ? 1 : -1) * wx;
    }
    // d(u)/d(pc) = (fx/z, 0, -fx X/z^2), then chain through pc = R x + t.
    const double iz = 1 / pc.z();
    const Eigen::RowVector3d du_dpc(cam.fx * iz, 0, -cam.fx * pc.x() * iz * iz);
    const Eigen::RowVector3d dv_dpc(0, cam.fy * iz, -cam.fy * pc.y() * iz * iz);
    const Eigen::RowVector3d du_dx = du_dpc * cam.R, dv_dx = dv_dpc * cam.R;
    for (int d = 0; d < 3; ++d) {
      s.jac[0][d] = static_cast<Real>(du_dx[d]);
      s.jac[1][d] = static_cast<Real>(dv_dx[d]);
    }
    for (int k = 0; k < 4; ++k) {
      const Real* f = &fv[s.idx[k] * c];
      for (std::size_t j = 0; j < c; ++j) out[i * w + j] += s.wt[k] * f[j];
      for (int j = 0; j < 3; ++j) out[i * w + c + j] += s.wt[k] * static_cast<Real>(image.data[s.idx[k] * 3 + j]);
    }
  }
  KeyframeSample<Real> res{{}, occ};
  res.values = make_result<Real>(
      "sample_keyframe", {n, w}, std::move(out), {points, features},
      [sites = std::move(sites), occ = std::move(occ), n, c, w, &image](Node<Real>& self) {
        auto* gp = detail::parent_grad(self, 0);
        auto* gf = detail::parent_grad(self, 1);
        const auto& fv = self.parents[1]->value;
        for (std::size_t i = 0; i < n; ++i) {
          if (occ[i]) continue;
          const auto& s = sites[i];
          const Real* g = &self.grad[i * w];
          if (gf)
            for (int k = 0; k < 4; ++k)
              for (std::size_t j = 0; j < c; ++j) (*gf)[s.idx[k] * c + j] += s.wt[k] * g[j];
          if (!gp) continue;
          Real gu = 0, gv = 0;
          for (int k = 0; k < 4; ++k) {
            Real dot = 0;
            for (std::size_t j = 0; j < c; ++j) dot += g[j] * fv[s.idx[k] * c + j];
            for (int j = 0; j < 3; ++j) dot += g[c + j] * static_cast<Real>(image.data[s.idx[k] * 3 + j]);
            gu += s.du[k] * dot;
            gv += s.dv[k] * dot;
          }
          for (int d = 0; d < 3; ++d) (*gp)[i * 3 + d] += gu * s.jac[0][d] + gv * s.jac[1][d];
        }
      });
  return res;
}

// Three-layer MLP mapping both keyframe samples to two blend weights.
template <typename Real = float>
class BlendMlp {
 public:
  BlendMlp() = default;
  BlendMlp(std::size_t sample_width, std::size_t hidden, Rng& rng, bool normalize = true)
      : normalize_(normalize), mlp_({2 * sample_width, hidden, hidden, 2}, Activation::kRelu, Activation::kNone, rng) {}

  // Blend weights [N, 2].
  Tensor<Real> weights(const Tensor<Real>& a, const Tensor<Real>& b) const {
    auto logits = mlp_.forward(concat_cols<Real>({a, b}));
    return normalize_ ? softmax_rows(logits) : logits;
  }

  Tensor<Real> blend(const Tensor<Real>& a, const Tensor<Real>& b) const {
    return blend_with(a, b, weights(a, b));
  }

  static Tensor<Real> blend_with(const Tensor<Real>& a, const Tensor<Real>& b, const Tensor<Real>& w) {
    return add(mul_colvec(a, slice_cols(w, 0, 1)), mul_colvec(b, slice_cols(w, 1, 2)));
  }

  bool normalized() const { return normalize_; }
  Mlp<Real>& mlp() { return mlp_; }
  const Mlp<Real>& mlp() const { return mlp_; }

 private:
  bool normalize_ = true;
  Mlp<Real> mlp_;
};

}  // namespace naf
