#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "naf/numcore/tensor.hpp"

namespace naf {

template <typename Real = float>
struct ParamGroup {
  std::string name;
  std::vector<Tensor<Real>> params;
  double lr = 1e-3;
};

class NonFiniteGradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Adam with bias correction and one learning rate per parameter group.
template <typename Real = float>
class Adam {
 public:
  Adam() = default;
  explicit Adam(std::vector<ParamGroup<Real>> groups, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& g : groups_) {
      if (!(g.lr >= 0)) throw std::invalid_argument("Adam: negative learning rate for group " + g.name);
      auto& slots = slots_.emplace_back();
      for (auto& p : g.params) slots.push_back({std::vector<double>(p.size(), 0.0), std::vector<double>(p.size(), 0.0)});
    }
  }

  void zero_grad() {
    for (auto& g : groups_)
      for (auto& p : g.params) p.zero_grad();
  }

  // Applies one update from the gradients currently stored on the
  // parameters. Parameters are left untouched if any gradient is non-finite.
  void step() {
    for (const auto& g : groups_)
      for (const auto& p : g.params) {
        if (!p.has_grad()) continue;
        for (Real v : p.grad())
          if (!std::isfinite(static_cast<double>(v)))
            throw NonFiniteGradientError("Adam: non-finite gradient in parameter group '" + g.name + "'");
      }
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
      auto& g = groups_[gi];
      for (std::size_t pi = 0; pi < g.params.size(); ++pi) {
        auto& p = g.params[pi];
        if (!p.has_grad()) continue;
        auto& [m, v] = slots_[gi][pi];
        auto data = p.mutable_data();
        auto grad = p.grad();
        for (std::size_t i = 0; i < data.size(); ++i) {
          const double gr = grad[i];
          m[i] = beta1_ * m[i] + (1.0 - beta1_) * gr;
          v[i] = beta2_ * v[i] + (1.0 - beta2_) * gr * gr;
          const double mhat = m[i] / bc1;
          const double vhat = v[i] / bc2;
          data[i] = static_cast<Real>(data[i] - g.lr * mhat / (std::sqrt(vhat) + eps_));
        }
      }
    }
  }

  long step_count() const { return step_count_; }
  std::vector<ParamGroup<Real>>& groups() { return groups_; }
  const std::vector<ParamGroup<Real>>& groups() const { return groups_; }

  void set_lr(const std::string& group, double lr) {
    for (auto& g : groups_)
      if (g.name == group) {
        g.lr = lr;
        return;
      }
    throw std::invalid_argument("Adam: unknown parameter group " + group);
  }

 private:
  struct Slot {
    std::vector<double> m, v;
  };
  std::vector<ParamGroup<Real>> groups_;
  std::vector<std::vector<Slot>> slots_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long step_count_ = 0;
};

}  // namespace naf
