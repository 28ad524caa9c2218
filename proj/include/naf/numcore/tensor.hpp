#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a graph Node. Operations (see ops.hpp)
// produce new nodes that remember their parents and a closure that pushes
// the output gradient back into the parents. backward() walks the graph in
// reverse topological order and then releases it, so each graph can be
// differentiated exactly once.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace naf {

// Tensor storage. Every buffer starts on Eigen's maximum alignment so that
// vectorised reductions peel identically on every run; with plain malloc the
// peel (and thus the float summation order) depends on where the heap lands.
template <typename Real>
using Buffer = std::vector<Real, Eigen::aligned_allocator<Real>>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Real>
struct Node {
  Shape shape;
  Buffer<Real> value;
  Buffer<Real> grad;
  bool requires_grad = false;
  bool released = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
  }
};

template <typename Real = float>
class Tensor {
 public:
  using value_type = Real;
  using NodePtr = std::shared_ptr<Node<Real>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Buffer<Real> data(numel(shape), Real(0));
    return from(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor full(Shape shape, Real v, bool requires_grad = false) {
    Buffer<Real> data(numel(shape), v);
    return from(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor from(Shape shape, Buffer<Real> data, bool requires_grad = false) {
    if (shape.empty()) shape = {1};
    for (auto d : shape)
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    if (data.size() != numel(shape))
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node<Real>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  template <typename Alloc>
  static Tensor from(Shape shape, const std::vector<Real, Alloc>& data, bool requires_grad = false) {
    return from(std::move(shape), Buffer<Real>(data.begin(), data.end()), requires_grad);
  }

  static Tensor scalar(Real v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  // Leading dimension; everything else is folded into cols().
  std::size_t rows() const { return node_->shape[0]; }
  std::size_t cols() const { return size() / rows(); }

  std::span<const Real> data() const { return node_->value; }
  std::span<Real> mutable_data() { return node_->value; }
  const Buffer<Real>& values() const { return node_->value; }
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }

  Real operator[](std::size_t i) const { return node_->value[i]; }
  Real at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  Real item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  void zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
    node_->released = false;
  }

  // Copy of the value with no history.
  Tensor detach() const { return from(shape(), node_->value, false); }

  Node<Real>* node() const { return node_.get(); }
  const NodePtr& node_ptr() const { return node_; }

 private:
  NodePtr node_;
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : saved_(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = saved_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

// Builds an op result. The backward closure is dropped when no parent needs
// gradients (or recording is disabled) so inference does not retain the graph.
template <typename Real>
Tensor<Real> make_result(const char* op, Shape shape, Buffer<Real> value,
                         std::vector<Tensor<Real>> parents,
                         std::function<void(Node<Real>&)> backward_fn) {
  auto n = std::make_shared<Node<Real>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  bool needs = false;
  if (grad_enabled())
    for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node_ptr());
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor<Real>(std::move(n));
}

// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
// loss, then releases the intermediate graph.
template <typename Real>
void backward(const Tensor<Real>& loss) {
  if (!loss.defined()) throw GraphError("backward on undefined tensor");
  if (loss.size() != 1)
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  Node<Real>* root = loss.node();
  if (root->released)
    throw GraphError("backward called twice on the same graph; rebuild the graph or zero_grad() the leaf");
  root->released = true;
  if (!root->requires_grad) return;

  // Iterative post-order DFS.
  std::vector<Node<Real>*> order;
  std::unordered_set<Node<Real>*> seen;
  std::vector<std::pair<Node<Real>*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Real>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Real>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  for (Node<Real>* n : order) {
    if (n->is_leaf()) continue;
    n->backward_fn = nullptr;
    n->parents.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
    n->released = true;
  }
}

}  // namespace naf
