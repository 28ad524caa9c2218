#pragma once

// Bidirectional deformation between observation and canonical space.
//
// Both directions share one canonical weight volume. Backward warps a point by
// every bone's obs->canonical map and weights each candidate by the canonical
// weight found there. Forward reads the weights at the canonical point
// directly and applies the inverse bone maps. Each direction adds its own
// pose-conditioned non-rigid offset.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "naf/deformation/weight_volume.hpp"
#include "naf/geometry/encoding.hpp"
#include "naf/geometry/skeleton.hpp"
#include "naf/numcore/mlp.hpp"

namespace naf {

inline constexpr double kEmptyWeightSum = 1e-9;

// Per-frame quantities the deformation needs.
struct PoseContext {
  std::vector<RigidTransform> to_canonical;  // per bone, obs -> canonical
  std::vector<double> pose_vec;
};

inline PoseContext make_pose_context(const Skeleton& skel, const Pose& pose) {
  return {bone_transforms(skel, pose), pose_vector(pose)};
}

template <typename Real>
struct SkinningResult {
  Tensor<Real> points;            // [N, 3]
  std::vector<std::uint8_t> empty;  // weight sum below kEmptyWeightSum
  Buffer<Real> weights;      // [N, K] normalised, zero for empty rows
};

namespace detail {

template <typename Real>
struct BoneMatrices {
  std::vector<std::array<Real, 9>> r;
  std::vector<std::array<Real, 3>> t;
  explicit BoneMatrices(const std::vector<RigidTransform>& bones) : r(bones.size()), t(bones.size()) {
    for (std::size_t k = 0; k < bones.size(); ++k)
      for (int i = 0; i < 3; ++i) {
        t[k][i] = static_cast<Real>(bones[k].t[i]);
        for (int j = 0; j < 3; ++j) r[k][3 * i + j] = static_cast<Real>(bones[k].R(i, j));
      }
  }
  void apply(std::size_t k, const Real* x, Real* y) const {
    for (int i = 0; i < 3; ++i) y[i] = r[k][3 * i] * x[0] + r[k][3 * i + 1] * x[1] + r[k][3 * i + 2] * x[2] + t[k][i];
  }
  // R^T (x - t)
  void apply_inverse(std::size_t k, const Real* x, Real* y) const {
    const Real d[3] = {x[0] - t[k][0], x[1] - t[k][1], x[2] - t[k][2]};
    for (int i = 0; i < 3; ++i) y[i] = r[k][i] * d[0] + r[k][3 + i] * d[1] + r[k][6 + i] * d[2];
  }
  // R g
  void rotate(std::size_t k, const Real* g, Real* y) const {
    for (int i = 0; i < 3; ++i) y[i] = r[k][3 * i] * g[0] + r[k][3 * i + 1] * g[1] + r[k][3 * i + 2] * g[2];
  }
};

template <typename Real>
Real stencil_sample(const TrilinearStencil<Real>& s, const Buffer<Real>& grid, std::size_t k, std::size_t kk) {
  Real v = 0;
  for (int c = 0; c < 8; ++c) v += s.weight[c] * grid[s.node[c] * kk + k];
  return v;
}

}  // namespace detail

// Observation -> canonical skeletal motion. The result is differentiable with
// respect to the weight volume; the input points are treated as constants.
template <typename Real>
SkinningResult<Real> backward_skeletal(const MotionWeightVolume<Real>& vol, const std::vector<RigidTransform>& bones,
                                       const Tensor<Real>& x_obs) {
  detail::require(x_obs.ndim() == 2 && x_obs.dim(1) == 3, "backward_skeletal",
                  "expected [N, 3] points, got " + shape_str(x_obs.shape()));
  detail::require(bones.size() == vol.channels, "backward_skeletal", "bone count does not match volume channels");
  const std::size_t n = x_obs.rows(), kk = vol.channels;
  const detail::BoneMatrices<Real> m(bones);
  const auto& grid = vol.weights.values();
  const auto& xv = x_obs.values();
  Buffer<Real> out(n * 3), warped(n * kk * 3), raw(kk);
  SkinningResult<Real> res{{}, std::vector<std::uint8_t>(n, 0), Buffer<Real>(n * kk, Real(0))};
  Buffer<Real> sums(n);
  for (std::size_t i = 0; i < n; ++i) {
    Real s = 0;
    for (std::size_t k = 0; k < kk; ++k) {
      Real* y = &warped[(i * kk + k) * 3];
      m.apply(k, &xv[i * 3], y);
      const auto st = trilinear_stencil(vol.spec, static_cast<const Real*>(y));
      raw[k] = st.inside ? detail::stencil_sample(st, grid, k, kk) : Real(0);
      s += raw[k];
    }
    sums[i] = s;
    if (s < static_cast<Real>(kEmptyWeightSum)) {
      res.empty[i] = 1;
      std::copy_n(&xv[i * 3], 3, &out[i * 3]);
      continue;
    }
    for (std::size_t k = 0; k < kk; ++k) {
      const Real w = raw[k] / s;
      res.weights[i * kk + k] = w;
      for (int d = 0; d < 3; ++d) out[i * 3 + d] += w * warped[(i * kk + k) * 3 + d];
    }
  }
  auto empty = res.empty;
  res.points = make_result<Real>(
      "backward_skeletal", {n, 3}, std::move(out), {vol.weights},
      [spec = vol.spec, n, kk, warped = std::move(warped), sums = std::move(sums), empty = std::move(empty)](
          Node<Real>& self) {
        auto* gg = detail::parent_grad(self, 0);
        if (!gg) return;
        for (std::size_t i = 0; i < n; ++i) {
          if (empty[i]) continue;
          const Real* g = &self.grad[i * 3];
          const Real* o = &self.value[i * 3];
          for (std::size_t k = 0; k < kk; ++k) {
            const Real* y = &warped[(i * kk + k) * 3];
            const Real ds = (g[0] * (y[0] - o[0]) + g[1] * (y[1] - o[1]) + g[2] * (y[2] - o[2])) / sums[i];
            if (ds == Real(0)) continue;
            const auto st = trilinear_stencil(spec, y);
            if (!st.inside) continue;
            for (int c = 0; c < 8; ++c) (*gg)[st.node[c] * kk + k] += ds * st.weight[c];
          }
        }
      });
  return res;
}

// Canonical -> observation skeletal motion. Differentiable with respect to
// the weight volume and the canonical points.
template <typename Real>
SkinningResult<Real> forward_skeletal(const MotionWeightVolume<Real>& vol, const std::vector<RigidTransform>& bones,
                                      const Tensor<Real>& x_can) {
  detail::require(x_can.ndim() == 2 && x_can.dim(1) == 3, "forward_skeletal",
                  "expected [N, 3] points, got " + shape_str(x_can.shape()));
  detail::require(bones.size() == vol.channels, "forward_skeletal", "bone count does not match volume channels");
  const std::size_t n = x_can.rows(), kk = vol.channels;
  const detail::BoneMatrices<Real> m(bones);
  const auto& grid = vol.weights.values();
  const auto& xv = x_can.values();
  Buffer<Real> out(n * 3), mapped(n * kk * 3), sums(n);
  SkinningResult<Real> res{{}, std::vector<std::uint8_t>(n, 0), Buffer<Real>(n * kk, Real(0))};
  for (std::size_t i = 0; i < n; ++i) {
    const auto st = trilinear_stencil(vol.spec, &xv[i * 3]);
    Real s = 0;
    for (std::size_t k = 0; k < kk; ++k) {
      const Real w = st.inside ? detail::stencil_sample(st, grid, k, kk) : Real(0);
      res.weights[i * kk + k] = w;
      s += w;
      m.apply_inverse(k, &xv[i * 3], &mapped[(i * kk + k) * 3]);
    }
    sums[i] = s;
    if (s < static_cast<Real>(kEmptyWeightSum)) {
      res.empty[i] = 1;
      std::fill_n(&res.weights[i * kk], kk, Real(0));
      std::copy_n(&xv[i * 3], 3, &out[i * 3]);
      continue;
    }
    for (std::size_t k = 0; k < kk; ++k) {
      auto& w = res.weights[i * kk + k];
      w /= s;
      for (int d = 0; d < 3; ++d) out[i * 3 + d] += w * mapped[(i * kk + k) * 3 + d];
    }
  }
  res.points = make_result<Real>(
      "forward_skeletal", {n, 3}, std::move(out), {vol.weights, x_can},
      [spec = vol.spec, n, kk, m, mapped = std::move(mapped), sums = std::move(sums), w = res.weights,
       empty = res.empty](Node<Real>& self) {
        auto* gg = detail::parent_grad(self, 0);
        auto* gx = detail::parent_grad(self, 1);
        const auto& xv = self.parents[1]->value;
        for (std::size_t i = 0; i < n; ++i) {
          const Real* g = &self.grad[i * 3];
          if (empty[i]) {
            if (gx)
              for (int d = 0; d < 3; ++d) (*gx)[i * 3 + d] += g[d];
            continue;
          }
          const Real* o = &self.value[i * 3];
          const auto st = trilinear_stencil(spec, &xv[i * 3]);
          Real spatial[3] = {0, 0, 0};
          for (std::size_t k = 0; k < kk; ++k) {
            const Real* z = &mapped[(i * kk + k) * 3];
            const Real ds = (g[0] * (z[0] - o[0]) + g[1] * (z[1] - o[1]) + g[2] * (z[2] - o[2])) / sums[i];
            if (gg)
              for (int c = 0; c < 8; ++c) (*gg)[st.node[c] * kk + k] += ds * st.weight[c];
            if (gx) {
              Real rg[3];
              m.rotate(k, g, rg);
              const Real wk = w[i * kk + k];
              for (int d = 0; d < 3; ++d) spatial[d] += wk * rg[d];
              for (int c = 0; c < 8; ++c) {
                const Real v = ds * self.parents[0]->value[st.node[c] * kk + k];
                for (int d = 0; d < 3; ++d) spatial[d] += v * st.dweight[c][d];
              }
            }
          }
          if (gx)
            for (int d = 0; d < 3; ++d) (*gx)[i * 3 + d] += spatial[d];
        }
      });
  return res;
}

struct DeformationConfig {
  DecoderConfig decoder;
  double bounds_margin = 0.15;  // fraction of the largest rest-pose extent
  bool use_prior = true;
  double prior_sigma = 0.08;
  std::size_t nonrigid_width = 64;
  int nonrigid_frequencies = 6;
  long nonrigid_warmup = 5000;
  double theta = 0.05;
};

// Pose-conditioned residual offset: (encoded point, pose vector) -> 3-vector.
template <typename Real = float>
class NonRigidMlp {
 public:
  NonRigidMlp() = default;
  NonRigidMlp(std::size_t pose_dim, std::size_t width, int frequencies, Rng& rng)
      : frequencies_(frequencies),
        pose_dim_(pose_dim),
        mlp_({6 * static_cast<std::size_t>(frequencies) + pose_dim, width, width, width, 3}, Activation::kSoftplus,
             Activation::kNone, rng, true) {}

  Tensor<Real> offsets(const Tensor<Real>& points, const std::vector<double>& pose_vec) const {
    detail::require(pose_vec.size() == pose_dim_, "NonRigidMlp", "pose vector has wrong length");
    auto enc = encode_positions(points, frequencies_);
    if (pose_dim_ == 0) return mlp_.forward(enc);
    Buffer<Real> pv(points.rows() * pose_dim_);
    for (std::size_t i = 0; i < points.rows(); ++i)
      for (std::size_t j = 0; j < pose_dim_; ++j) pv[i * pose_dim_ + j] = static_cast<Real>(pose_vec[j]);
    auto cond = Tensor<Real>::from({points.rows(), pose_dim_}, std::move(pv));
    return mlp_.forward(concat_cols<Real>({enc, cond}));
  }

  Mlp<Real>& mlp() { return mlp_; }
  const Mlp<Real>& mlp() const { return mlp_; }

 private:
  int frequencies_ = 6;
  std::size_t pose_dim_ = 0;
  Mlp<Real> mlp_;
};

template <typename Real>
struct CycleResult {
  Tensor<Real> loss;                   // scalar
  Buffer<Real> distances;         // per point, 0 for empty points
  std::vector<std::uint8_t> violating;  // d >= theta
  std::vector<std::uint8_t> empty;
  std::size_t valid = 0;
};

// Thresholded cycle error: mean over rows of d * [d >= theta], d = |a - b|.
template <typename Real>
CycleResult<Real> thresholded_cycle_loss(const Tensor<Real>& a, const Tensor<Real>& b, double theta) {
  auto d = row_norm(sub(a, b));
  const std::size_t n = d.rows();
  CycleResult<Real> res;
  res.distances.assign(d.values().begin(), d.values().end());
  res.violating.resize(n);
  Buffer<Real> mask(n);
  for (std::size_t i = 0; i < n; ++i) {
    res.violating[i] = res.distances[i] >= static_cast<Real>(theta);
    mask[i] = res.violating[i] ? Real(1) / static_cast<Real>(n) : Real(0);
  }
  res.valid = n;
  res.empty.assign(n, 0);
  res.loss = sum(mul(d, Tensor<Real>::from({n, 1}, std::move(mask))));
  return res;
}

template <typename Real = float>
class DeformationField {
 public:
  DeformationField() = default;

  DeformationField(Skeleton skel, const DeformationConfig& cfg, Rng& rng) : skel_(std::move(skel)), cfg_(cfg) {
    skel_.validate();
    if (!(cfg.theta > 0)) throw std::invalid_argument("consistency threshold must be positive");
    const Aabb box = rest_bounds(skel_, cfg.bounds_margin);
    GridSpec spec{cfg.decoder.res(), box.lo, box.hi};
    auto dec_rng = rng.fork(1);
    decoder_ = WeightVolumeDecoder<Real>(cfg.decoder, skel_.size(), spec, dec_rng);
    if (cfg.use_prior) {
      // Start exactly at the prior: zero the last upsampling stage.
      auto w = decoder_.stage_weights().back().mutable_data();
      std::fill(w.begin(), w.end(), Real(0));
      decoder_.set_prior(skeleton_prior_logits<Real>(skel_, decoder_.spec(), cfg.prior_sigma));
    }
    const std::size_t pose_dim = 3 * (skel_.size() - 1);
    auto rb = rng.fork(2), rf = rng.fork(3);
    nr_backward_ = NonRigidMlp<Real>(pose_dim, cfg.nonrigid_width, cfg.nonrigid_frequencies, rb);
    nr_forward_ = NonRigidMlp<Real>(pose_dim, cfg.nonrigid_width, cfg.nonrigid_frequencies, rf);
  }

  MotionWeightVolume<Real> volume() const { return decoder_.generate(); }

  bool nonrigid_active(long iteration) const { return iteration >= cfg_.nonrigid_warmup; }

  // D_b: observation -> canonical.
  SkinningResult<Real> deform_backward(const MotionWeightVolume<Real>& vol, const PoseContext& ctx,
                                       const Tensor<Real>& x_obs, bool nonrigid) const {
    auto r = backward_skeletal(vol, ctx.to_canonical, x_obs);
    if (nonrigid) r.points = add(r.points, nr_backward_.offsets(r.points, ctx.pose_vec));
    return r;
  }

  // D_f: canonical -> observation.
  SkinningResult<Real> deform_forward(const MotionWeightVolume<Real>& vol, const PoseContext& ctx,
                                      const Tensor<Real>& x_can, bool nonrigid) const {
    auto r = forward_skeletal(vol, ctx.to_canonical, x_can);
    if (nonrigid) r.points = add(r.points, nr_forward_.offsets(r.points, ctx.pose_vec));
    return r;
  }

  // Cycle loss on points already mapped to canonical space. Rows flagged in
  // `empty` are dropped. With stop_backward the canonical points are detached
  // so only the forward direction receives gradient.
  CycleResult<Real> consistency_from(const MotionWeightVolume<Real>& vol, const PoseContext& ctx,
                                     const Tensor<Real>& x_obs, const Tensor<Real>& x_can,
                                     const std::vector<std::uint8_t>& empty, bool nonrigid,
                                     bool stop_backward = false) const {
    std::vector<std::uint32_t> keep;
    for (std::size_t i = 0; i < empty.size(); ++i)
      if (!empty[i]) keep.push_back(static_cast<std::uint32_t>(i));
    CycleResult<Real> res;
    const std::size_t n = x_obs.rows();
    res.distances.assign(n, Real(0));
    res.violating.assign(n, 0);
    res.empty = empty;
    if (keep.empty()) {
      res.loss = Tensor<Real>::scalar(0);
      return res;
    }
    auto xc = gather_rows(x_can, keep);
    if (stop_backward) xc = xc.detach();
    auto fwd = deform_forward(vol, ctx, xc, nonrigid);
    auto part = thresholded_cycle_loss(gather_rows(x_obs, keep), fwd.points, cfg_.theta);
    for (std::size_t j = 0; j < keep.size(); ++j) {
      res.distances[keep[j]] = part.distances[j];
      res.violating[keep[j]] = part.violating[j];
    }
    res.valid = keep.size();
    res.loss = part.loss;
    return res;
  }

  CycleResult<Real> consistency_loss(const MotionWeightVolume<Real>& vol, const PoseContext& ctx,
                                     const Tensor<Real>& x_obs, bool nonrigid, bool stop_backward = false) const {
    auto back = deform_backward(vol, ctx, x_obs, nonrigid);
    return consistency_from(vol, ctx, x_obs, back.points, back.empty, nonrigid, stop_backward);
  }

  const Skeleton& skeleton() const { return skel_; }
  const DeformationConfig& config() const { return cfg_; }
  double theta() const { return cfg_.theta; }
  WeightVolumeDecoder<Real>& decoder() { return decoder_; }
  const WeightVolumeDecoder<Real>& decoder() const { return decoder_; }
  NonRigidMlp<Real>& nonrigid_backward() { return nr_backward_; }
  NonRigidMlp<Real>& nonrigid_forward() { return nr_forward_; }

  std::vector<std::pair<std::string, Tensor<Real>>> named_parameters(const std::string& prefix) const {
    auto out = decoder_.named_parameters(prefix + ".weights");
    for (auto& p : nr_backward_.mlp().named_parameters(prefix + ".nonrigid_backward")) out.push_back(p);
    for (auto& p : nr_forward_.mlp().named_parameters(prefix + ".nonrigid_forward")) out.push_back(p);
    return out;
  }
  std::vector<Tensor<Real>> parameters() const {
    std::vector<Tensor<Real>> out;
    for (auto& [n, t] : named_parameters("")) out.push_back(t);
    return out;
  }

 private:
  Skeleton skel_;
  DeformationConfig cfg_;
  WeightVolumeDecoder<Real> decoder_;
  NonRigidMlp<Real> nr_backward_, nr_forward_;
};

}  // namespace naf
