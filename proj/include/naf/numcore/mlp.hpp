#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "naf/numcore/ops.hpp"
#include "naf/numcore/rng.hpp"

namespace naf {

enum class Activation { kNone, kRelu, kSoftplus, kSigmoid };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kNone: return "none";
    case Activation::kRelu: return "relu";
    case Activation::kSoftplus: return "softplus";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "?";
}

template <typename Real>
Tensor<Real> activate(const Tensor<Real>& x, Activation a) {
  switch (a) {
    case Activation::kRelu: return relu(x);
    case Activation::kSoftplus: return softplus(x);
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kNone: break;
  }
  return x;
}

// Glorot-uniform initialised weights, zero biases.
template <typename Real>
Tensor<Real> glorot_parameter(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Buffer<Real> w(fan_in * fan_out);
  for (auto& v : w) v = static_cast<Real>(rng.uniform(-limit, limit));
  return Tensor<Real>::from({fan_in, fan_out}, std::move(w), true);
}

// Fully connected network. Layer l maps widths[l] -> widths[l+1] and applies
// activations[l].
template <typename Real = float>
class Mlp {
 public:
  struct Layer {
    Tensor<Real> weight;  // [in, out]
    Tensor<Real> bias;    // [1, out]
    Activation activation;
  };

  Mlp() = default;

  Mlp(std::vector<std::size_t> widths, std::vector<Activation> activations, Rng& rng,
      bool zero_last_layer = false)
      : widths_(std::move(widths)) {
    if (widths_.size() < 2) throw ShapeError("Mlp: need at least input and output widths");
    if (activations.size() != widths_.size() - 1)
      throw ShapeError("Mlp: one activation per layer required");
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      if (widths_[l] == 0 || widths_[l + 1] == 0) throw ShapeError("Mlp: zero layer width");
      Layer layer{glorot_parameter<Real>(widths_[l], widths_[l + 1], rng),
                  Tensor<Real>::zeros({1, widths_[l + 1]}, true), activations[l]};
      layers_.push_back(std::move(layer));
    }
    if (zero_last_layer) {
      auto w = layers_.back().weight.mutable_data();
      std::fill(w.begin(), w.end(), Real(0));
    }
  }

  // Uniform hidden activation, separate output activation.
  Mlp(std::vector<std::size_t> widths, Activation hidden, Activation output, Rng& rng,
      bool zero_last_layer = false)
      : Mlp(widths, uniform_activations(widths.size(), hidden, output), rng, zero_last_layer) {}

  Tensor<Real> forward(const Tensor<Real>& x) const {
    if (x.ndim() != 2 || x.dim(1) != widths_.front())
      throw ShapeError("Mlp: input " + shape_str(x.shape()) + " does not match input width " +
                       std::to_string(widths_.front()));
    Tensor<Real> h = x;
    for (const auto& layer : layers_) h = activate(linear(h, layer.weight, layer.bias), layer.activation);
    return h;
  }

  std::size_t input_width() const { return widths_.front(); }
  std::size_t output_width() const { return widths_.back(); }
  const std::vector<std::size_t>& widths() const { return widths_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) n += (widths_[l] + 1) * widths_[l + 1];
    return n;
  }

  std::vector<Tensor<Real>> parameters() const {
    std::vector<Tensor<Real>> out;
    for (const auto& layer : layers_) {
      out.push_back(layer.weight);
      out.push_back(layer.bias);
    }
    return out;
  }

  std::vector<std::pair<std::string, Tensor<Real>>> named_parameters(const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor<Real>>> out;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      out.emplace_back(prefix + ".layer" + std::to_string(l) + ".weight", layers_[l].weight);
      out.emplace_back(prefix + ".layer" + std::to_string(l) + ".bias", layers_[l].bias);
    }
    return out;
  }

 private:
  static std::vector<Activation> uniform_activations(std::size_t n_widths, Activation hidden, Activation output) {
    std::vector<Activation> acts(n_widths > 1 ? n_widths - 1 : 0, hidden);
    if (!acts.empty()) acts.back() = output;
    return acts;
  }

  std::vector<std::size_t> widths_;
  std::vector<Layer> layers_;
};

}  // namespace naf
