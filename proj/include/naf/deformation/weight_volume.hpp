#pragma once

// Canonical skinning weight volume: a K-channel grid decoded from a fixed
// latent vector, sampled with trilinear interpolation.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "naf/geometry/skeleton.hpp"
#include "naf/numcore/mlp.hpp"
#include "naf/numcore/ops.hpp"
#include "naf/numcore/rng.hpp"

namespace naf {

// Node-aligned cubic grid: node i along an axis sits at lo + i * (hi - lo) / (R - 1).
// Voxel index (x fastest): (z * R + y) * R + x.
struct GridSpec {
  std::size_t res = 32;
  Vec3 lo = Vec3::Constant(-1), hi = Vec3::Constant(1);

  std::size_t voxels() const { return res * res * res; }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return (z * res + y) * res + x; }
  Vec3 node_position(std::size_t x, std::size_t y, std::size_t z) const {
    const Vec3 step = (hi - lo) / static_cast<double>(res - 1);
    return lo + Vec3(x * step.x(), y * step.y(), z * step.z());
  }
  bool contains(const Vec3& p) const { return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all(); }
};

// The eight grid nodes around a point and their interpolation weights, plus
// the derivative of each weight with respect to the point.
template <typename Real>
struct TrilinearStencil {
  bool inside = false;
  std::array<std::uint32_t, 8> node{};
  std::array<Real, 8> weight{};
  std::array<std::array<Real, 3>, 8> dweight{};
};

template <typename Real>
TrilinearStencil<Real> trilinear_stencil(const GridSpec& g, const Real* p) {
  TrilinearStencil<Real> s;
  std::array<std::size_t, 3> i0{};
  std::array<Real, 3> f{}, inv_step{};
  const auto top = static_cast<Real>(g.res - 1);
  for (int d = 0; d < 3; ++d) {
    const auto lo = static_cast<Real>(g.lo[d]), hi = static_cast<Real>(g.hi[d]);
    inv_step[d] = top / (hi - lo);
    const Real u = (p[d] - lo) * inv_step[d];
    if (!(u >= Real(0) && u <= top)) return s;
    const auto fl = std::min(static_cast<std::size_t>(u), g.res - 2);
    i0[d] = fl;
    f[d] = u - static_cast<Real>(fl);
  }
  s.inside = true;
  for (int c = 0; c < 8; ++c) {
    const int b[3] = {c & 1, (c >> 1) & 1, (c >> 2) & 1};
    Real w[3];
    for (int d = 0; d < 3; ++d) w[d] = b[d] ? f[d] : Real(1) - f[d];
    s.node[c] = static_cast<std::uint32_t>(g.index(i0[0] + b[0], i0[1] + b[1], i0[2] + b[2]));
    s.weight[c] = w[0] * w[1] * w[2];
    for (int d = 0; d < 3; ++d) {
      const Real sign = b[d] ? Real(1) : Real(-1);
      s.dweight[c][d] = sign * inv_step[d] * w[(d + 1) % 3] * w[(d + 2) % 3];
    }
  }
  return s;
}

template <typename Real = float>
struct MotionWeightVolume {
  GridSpec spec;
  std::size_t channels = 0;
  Tensor<Real> weights;  // [voxels, K]

  std::array<std::size_t, 4> shape() const { return {channels, spec.res, spec.res, spec.res}; }
  Real value(std::size_t k, std::size_t x, std::size_t y, std::size_t z) const {
    return weights[spec.index(x, y, z) * channels + k];
  }
};

// Interpolated weights at p; all zero outside the grid bounds.
template <typename Real>
Buffer<Real> sample_weights(const MotionWeightVolume<Real>& vol, const Vec3& p) {
  Buffer<Real> out(vol.channels, Real(0));
  const Real q[3] = {static_cast<Real>(p.x()), static_cast<Real>(p.y()), static_cast<Real>(p.z())};
  const auto s = trilinear_stencil(vol.spec, q);
  if (!s.inside) return out;
  const auto& w = vol.weights.values();
  for (int c = 0; c < 8; ++c)
    for (std::size_t k = 0; k < vol.channels; ++k) out[k] += s.weight[c] * w[s.node[c] * vol.channels + k];
  return out;
}

// [r^3, 8C] -> [(2r)^3, C]: column block o = ox + 2 oy + 4 oz of voxel (x, y, z)
// becomes voxel (2x + ox, 2y + oy, 2z + oz) of the doubled grid.
template <typename Real>
Tensor<Real> voxel_shuffle(const Tensor<Real>& y, std::size_t r) {
  detail::require(y.ndim() == 2 && y.rows() == r * r * r && y.cols() % 8 == 0, "voxel_shuffle",
                  "expected [r^3, 8C] with r=" + std::to_string(r) + ", got " + shape_str(y.shape()));
  const std::size_t c = y.cols() / 8, r2 = 2 * r;
  std::vector<std::uint32_t> map(r2 * r2 * r2);  // output voxel -> source offset in y (times c)
  for (std::size_t z = 0; z < r; ++z)
    for (std::size_t yy = 0; yy < r; ++yy)
      for (std::size_t x = 0; x < r; ++x)
        for (std::size_t o = 0; o < 8; ++o) {
          const std::size_t out = ((2 * z + (o >> 2)) * r2 + 2 * yy + ((o >> 1) & 1)) * r2 + 2 * x + (o & 1);
          map[out] = static_cast<std::uint32_t>(((z * r + yy) * r + x) * 8 + o);
        }
  Buffer<Real> out(map.size() * c);
  const auto& v = y.values();
  for (std::size_t i = 0; i < map.size(); ++i) std::copy_n(v.data() + map[i] * c, c, out.data() + i * c);
  const std::size_t rows = map.size();
  return make_result<Real>("voxel_shuffle", {rows, c}, std::move(out), {y},
                           [map = std::move(map), c](Node<Real>& self) {
                             auto* g = detail::parent_grad(self, 0);
                             if (!g) return;
                             for (std::size_t i = 0; i < map.size(); ++i)
                               for (std::size_t j = 0; j < c; ++j) (*g)[map[i] * c + j] += self.grad[i * c + j];
                           });
}

struct DecoderConfig {
  std::size_t latent_dim = 64;
  std::size_t base_res = 4;
  std::size_t stages = 3;
  std::size_t channels = 16;
  std::size_t res() const { return base_res << stages; }
};

// Fixed latent -> fully connected base grid -> `stages` learned 2x upsamplings
// (each a transposed convolution with kernel 2, stride 2) -> softplus.
// An optional constant prior is added to the final logits.
template <typename Real = float>
class WeightVolumeDecoder {
 public:
  WeightVolumeDecoder() = default;

  WeightVolumeDecoder(const DecoderConfig& cfg, std::size_t bones, GridSpec spec, Rng& rng)
      : cfg_(cfg), bones_(bones), spec_(std::move(spec)) {
    spec_.res = cfg.res();
    Buffer<Real> z(cfg.latent_dim);
    for (auto& v : z) v = static_cast<Real>(rng.normal());
    latent_ = Tensor<Real>::from({1, cfg.latent_dim}, std::move(z));
    const std::size_t base = cfg.base_res * cfg.base_res * cfg.base_res;
    fc_weight_ = glorot_parameter<Real>(cfg.latent_dim, base * cfg.channels, rng);
    fc_bias_ = Tensor<Real>::zeros({1, base * cfg.channels}, true);
    for (std::size_t s = 0; s < cfg.stages; ++s) {
      const std::size_t out = s + 1 == cfg.stages ? bones : cfg.channels;
      stage_weight_.push_back(glorot_parameter<Real>(cfg.channels, 8 * out, rng));
      stage_bias_.push_back(Tensor<Real>::zeros({1, out}, true));
    }
  }

  // Constant logits added before the final softplus, [voxels, K].
  void set_prior(Buffer<Real> logits) {
    detail::require(logits.size() == spec_.voxels() * bones_, "set_prior", "prior size mismatch");
    prior_ = Tensor<Real>::from({spec_.voxels(), bones_}, std::move(logits));
  }
  bool has_prior() const { return prior_.defined(); }

  MotionWeightVolume<Real> generate() const {
    auto h = reshape(linear(latent_, fc_weight_, fc_bias_), {cfg_.base_res * cfg_.base_res * cfg_.base_res, cfg_.channels});
    h = softplus(h);
    std::size_t r = cfg_.base_res;
    for (std::size_t s = 0; s < cfg_.stages; ++s) {
      h = add_rowvec(voxel_shuffle(matmul(h, stage_weight_[s]), r), stage_bias_[s]);
      r *= 2;
      if (s + 1 < cfg_.stages) h = softplus(h);
    }
    if (prior_.defined()) h = add(h, prior_);
    return {spec_, bones_, softplus(h)};
  }

  const GridSpec& spec() const { return spec_; }
  std::size_t bones() const { return bones_; }
  const DecoderConfig& config() const { return cfg_; }
  Tensor<Real>& fc_weight() { return fc_weight_; }
  Tensor<Real>& fc_bias() { return fc_bias_; }
  std::vector<Tensor<Real>>& stage_weights() { return stage_weight_; }
  std::vector<Tensor<Real>>& stage_biases() { return stage_bias_; }

  std::vector<std::pair<std::string, Tensor<Real>>> named_parameters(const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor<Real>>> out{{prefix + ".fc.weight", fc_weight_},
                                                          {prefix + ".fc.bias", fc_bias_}};
    for (std::size_t s = 0; s < stage_weight_.size(); ++s) {
      out.emplace_back(prefix + ".up" + std::to_string(s) + ".weight", stage_weight_[s]);
      out.emplace_back(prefix + ".up" + std::to_string(s) + ".bias", stage_bias_[s]);
    }
    return out;
  }
  std::vector<Tensor<Real>> parameters() const {
    std::vector<Tensor<Real>> out;
    for (auto& [n, t] : named_parameters("")) out.push_back(t);
    return out;
  }

 private:
  DecoderConfig cfg_;
  std::size_t bones_ = 0;
  GridSpec spec_;
  Tensor<Real> latent_, fc_weight_, fc_bias_, prior_;
  std::vector<Tensor<Real>> stage_weight_, stage_bias_;
};

// Distance from p to the segment a-b.
inline double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

// Logits whose softplus is a Gaussian falloff around each rest-pose bone
// segment, so training starts from skinning weights that follow the skeleton.
// Beyond kPriorSupport sigmas from every bone the weights are effectively
// zero, which is what lets the empty-denominator flag mark free space.
inline constexpr double kPriorSupport = 3.0;

template <typename Real>
Buffer<Real> skeleton_prior_logits(const Skeleton& skel, const GridSpec& spec, double sigma) {
  const auto joints = skel.rest_joints();
  const std::size_t k = skel.size();
  Buffer<Real> out(spec.voxels() * k);
  for (std::size_t z = 0; z < spec.res; ++z)
    for (std::size_t y = 0; y < spec.res; ++y)
      for (std::size_t x = 0; x < spec.res; ++x) {
        const Vec3 p = spec.node_position(x, y, z);
        for (std::size_t b = 0; b < k; ++b) {
          const double d = segment_distance(p, joints[b], joints[b] + skel.tails[b]);
          const double w = d <= kPriorSupport * sigma ? std::exp(-d * d / (2 * sigma * sigma)) : 1e-30;
          // inverse softplus
          out[spec.index(x, y, z) * k + b] = static_cast<Real>(std::log(std::expm1(w)));
        }
      }
  return out;
}

}  // namespace naf
