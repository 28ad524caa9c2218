#pragma once

// Canonical radiance network. Stage one maps the encoded canonical point to
// a 36-wide vector: the first entry is density, the other 35 are a latent
// that stage two combines with the blended keyframe feature to predict colour.

#include <string>
#include <utility>
#include <vector>

#include "naf/geometry/encoding.hpp"
#include "naf/numcore/mlp.hpp"

namespace naf {

inline constexpr std::size_t kStageOneWidth = 36;

struct RadianceConfig {
  std::size_t width = 64;
  std::size_t layers = 8;  // per stage
  int frequencies = 10;
  std::size_t feature_dim = 19;  // blended feature + colour
};

template <typename Real>
struct RadianceOutput {
  Tensor<Real> rgb;    // [N, 3] in [0, 1]
  Tensor<Real> sigma;  // [N, 1] >= 0
};

template <typename Real = float>
class RenderingNetwork {
 public:
  RenderingNetwork() = default;
  RenderingNetwork(const RadianceConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.layers < 2) throw std::invalid_argument("rendering network stages need at least 2 layers");
    std::vector<std::size_t> w1{6 * static_cast<std::size_t>(cfg.frequencies)};
    std::vector<std::size_t> w2{kStageOneWidth - 1 + cfg.feature_dim};
    for (std::size_t l = 0; l + 1 < cfg.layers; ++l) {
      w1.push_back(cfg.width);
      w2.push_back(cfg.width);
    }
    w1.push_back(kStageOneWidth);
    w2.push_back(3);
    stage1_ = Mlp<Real>(w1, Activation::kRelu, Activation::kNone, rng);
    stage2_ = Mlp<Real>(w2, Activation::kRelu, Activation::kNone, rng, true);
  }

  // x: canonical points [N, 3]; feature: [N, feature_dim].
  RadianceOutput<Real> query(const Tensor<Real>& x, const Tensor<Real>& feature) const {
    if (feature.ndim() != 2 || feature.dim(1) != cfg_.feature_dim || feature.rows() != x.rows())
      throw ShapeError("radiance query: feature " + shape_str(feature.shape()) + " does not match [" +
                       std::to_string(x.rows()) + "x" + std::to_string(cfg_.feature_dim) + "]");
    auto h = stage1_.forward(encode_positions(x, cfg_.frequencies));
    auto sigma = softplus(slice_cols(h, 0, 1));
    auto latent = slice_cols(h, 1, kStageOneWidth);
    auto rgb = sigmoid(stage2_.forward(concat_cols<Real>({latent, feature})));
    return {rgb, sigma};
  }

  const RadianceConfig& config() const { return cfg_; }
  Mlp<Real>& stage1() { return stage1_; }
  Mlp<Real>& stage2() { return stage2_; }

  std::vector<std::pair<std::string, Tensor<Real>>> named_parameters(const std::string& prefix) const {
    auto out = stage1_.named_parameters(prefix + ".stage1");
    for (auto& p : stage2_.named_parameters(prefix + ".stage2")) out.push_back(p);
    return out;
  }
  std::vector<Tensor<Real>> parameters() const {
    std::vector<Tensor<Real>> out;
    for (auto& [n, t] : named_parameters("")) out.push_back(t);
    return out;
  }

 private:
  RadianceConfig cfg_;
  Mlp<Real> stage1_, stage2_;
};

}  // namespace naf
