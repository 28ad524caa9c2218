#pragma once

// Differentiable tensor operations. Every op checks shapes up front and
// names itself and the offending shapes in the error.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "naf/numcore/tensor.hpp"

namespace naf {

template <typename Real>
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MatMap = Eigen::Map<RowMatrix<Real>>;
template <typename Real>
using ConstMatMap = Eigen::Map<const RowMatrix<Real>>;
template <typename Real>
using ArrMap = Eigen::Map<Eigen::Array<Real, Eigen::Dynamic, 1>>;
template <typename Real>
using ConstArrMap = Eigen::Map<const Eigen::Array<Real, Eigen::Dynamic, 1>>;

namespace detail {

inline void require(bool ok, const char* op, const std::string& msg) {
  if (!ok) throw ShapeError(std::string(op) + ": " + msg);
}

template <typename Real>
ConstMatMap<Real> as_matrix(const Buffer<Real>& v, std::size_t rows, std::size_t cols) {
  return ConstMatMap<Real>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename Real>
MatMap<Real> as_matrix(Buffer<Real>& v, std::size_t rows, std::size_t cols) {
  return MatMap<Real>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename Real>
ConstArrMap<Real> as_array(const Buffer<Real>& v) {
  return ConstArrMap<Real>(v.data(), static_cast<Eigen::Index>(v.size()));
}

template <typename Real>
ArrMap<Real> as_array(Buffer<Real>& v) {
  return ArrMap<Real>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Gradient buffer of parent i, allocated on demand. Returns nullptr when the
// parent does not participate in differentiation.
template <typename Real>
Buffer<Real>* parent_grad(Node<Real>& self, std::size_t i) {
  auto& p = self.parents[i];
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return &p->grad;
}

template <typename Real>
bool is_matrix(const Tensor<Real>& t) {
  return t.ndim() == 2;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require(detail::is_matrix(a) && detail::is_matrix(b) && a.dim(1) == b.dim(0), "matmul",
                  "incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Buffer<Real> out(n * m);
  detail::as_matrix(out, n, m).noalias() =
      detail::as_matrix(a.values(), n, k) * detail::as_matrix(b.values(), k, m);
  return make_result<Real>("matmul", {n, m}, std::move(out), {a, b}, [n, k, m](Node<Real>& self) {
    auto g = detail::as_matrix(std::as_const(self.grad), n, m);
    if (auto* ga = detail::parent_grad(self, 0))
      detail::as_matrix(*ga, n, k).noalias() += g * detail::as_matrix(std::as_const(self.parents[1]->value), k, m).transpose();
    if (auto* gb = detail::parent_grad(self, 1))
      detail::as_matrix(*gb, k, m).noalias() += detail::as_matrix(std::as_const(self.parents[0]->value), n, k).transpose() * g;
  });
}

// x·W + b with W of shape [in, out] and b of shape [1, out].
template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b) {
  detail::require(detail::is_matrix(x) && detail::is_matrix(w) && x.dim(1) == w.dim(0) &&
                      b.size() == w.dim(1),
                  "linear",
                  "incompatible shapes x" + shape_str(x.shape()) + " W" + shape_str(w.shape()) +
                      " b" + shape_str(b.shape()));
  const std::size_t n = x.dim(0), k = x.dim(1), m = w.dim(1);
  Buffer<Real> out(n * m);
  auto y = detail::as_matrix(out, n, m);
  y.noalias() = detail::as_matrix(x.values(), n, k) * detail::as_matrix(w.values(), k, m);
  y.rowwise() += detail::as_matrix(b.values(), 1, m).row(0);
  return make_result<Real>("linear", {n, m}, std::move(out), {x, w, b}, [n, k, m](Node<Real>& self) {
    auto g = detail::as_matrix(std::as_const(self.grad), n, m);
    if (auto* gx = detail::parent_grad(self, 0))
      detail::as_matrix(*gx, n, k).noalias() += g * detail::as_matrix(std::as_const(self.parents[1]->value), k, m).transpose();
    if (auto* gw = detail::parent_grad(self, 1))
      detail::as_matrix(*gw, k, m).noalias() += detail::as_matrix(std::as_const(self.parents[0]->value), n, k).transpose() * g;
    if (auto* gb = detail::parent_grad(self, 2))
      detail::as_matrix(*gb, 1, m).row(0) += g.colwise().sum();
  });
}

// ---------------------------------------------------------------------------
// Elementwise binary ops (identical shapes)

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require(a.shape() == b.shape(), "add",
                  "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Buffer<Real> out(a.size());
  detail::as_array(out) = detail::as_array(a.values()) + detail::as_array(b.values());
  return make_result<Real>("add", a.shape(), std::move(out), {a, b}, [](Node<Real>& self) {
    for (std::size_t i = 0; i < 2; ++i)
      if (auto* g = detail::parent_grad(self, i)) detail::as_array(*g) += detail::as_array(std::as_const(self.grad));
  });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require(a.shape() == b.shape(), "sub",
                  "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Buffer<Real> out(a.size());
  detail::as_array(out) = detail::as_array(a.values()) - detail::as_array(b.values());
  return make_result<Real>("sub", a.shape(), std::move(out), {a, b}, [](Node<Real>& self) {
    if (auto* g = detail::parent_grad(self, 0)) detail::as_array(*g) += detail::as_array(std::as_const(self.grad));
    if (auto* g = detail::parent_grad(self, 1)) detail::as_array(*g) -= detail::as_array(std::as_const(self.grad));
  });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require(a.shape() == b.shape(), "mul",
                  "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Buffer<Real> out(a.size());
  detail::as_array(out) = detail::as_array(a.values()) * detail::as_array(b.values());
  return make_result<Real>("mul", a.shape(), std::move(out), {a, b}, [](Node<Real>& self) {
    auto g = detail::as_array(std::as_const(self.grad));
    if (auto* ga = detail::parent_grad(self, 0)) detail::as_array(*ga) += g * detail::as_array(std::as_const(self.parents[1]->value));
    if (auto* gb = detail::parent_grad(self, 1)) detail::as_array(*gb) += g * detail::as_array(std::as_const(self.parents[0]->value));
  });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real s) {
  Buffer<Real> out(a.size());
  detail::as_array(out) = detail::as_array(a.values()) * s;
  return make_result<Real>("scale", a.shape(), std::move(out), {a}, [s](Node<Real>& self) {
    if (auto* g = detail::parent_grad(self, 0)) detail::as_array(*g) += detail::as_array(std::as_const(self.grad)) * s;
  });
}

template <typename Real>
Tensor<Real> add_scalar(const Tensor<Real>& a, Real s) {
  Buffer<Real> out(a.size());
  detail::as_array(out) = detail::as_array(a.values()) + s;
  return make_result<Real>("add_scalar", a.shape(), std::move(out), {a}, [](Node<Real>& self) {
    if (auto* g = detail::parent_grad(self, 0)) detail::as_array(*g) += detail::as_array(std::as_const(self.grad));
  });
}

// X[N, C] + r[1, C] broadcast over rows.
template <typename Real>
Tensor<Real> add_rowvec(const Tensor<Real>& x, const Tensor<Real>& r) {
  detail::require(detail::is_matrix(x) && r.size() == x.dim(1), "add_rowvec",
                  "incompatible shapes " + shape_str(x.shape()) + " and " + shape_str(r.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1);
  Buffer<Real> out(x.values());
  detail::as_matrix(out, n, c).rowwise() += detail::as_matrix(r.values(), 1, c).row(0);
  return make_result<Real>("add_rowvec", x.shape(), std::move(out), {x, r}, [n, c](Node<Real>& self) {
    auto g = detail::as_matrix(std::as_const(self.grad), n, c);
    if (auto* gx = detail::parent_grad(self, 0)) detail::as_array(*gx) += detail::as_array(std::as_const(self.grad));
    if (auto* gr = detail::parent_grad(self, 1)) detail::as_matrix(*gr, 1, c).row(0) += g.colwise().sum();
  });
}

// X[N, C] scaled row-wise by s[N, 1].
template <typename Real>
Tensor<Real> mul_colvec(const Tensor<Real>& x, const Tensor<Real>& s) {
  detail::require(detail::is_matrix(x) && s.size() == x.dim(0), "mul_colvec",
                  "incompatible shapes " + shape_str(x.shape()) + " and " + shape_str(s.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1);
  Buffer<Real> out(x.size());
  const auto& xv = x.values();
  const auto& sv = s.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] * sv[i];
  return make_result<Real>("mul_colvec", x.shape(), std::move(out), {x, s}, [n, c](Node<Real>& self) {
    const auto& g = self.grad;
    const auto& xv = self.parents[0]->value;
    const auto& sv = self.parents[1]->value;
    if (auto* gx = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gx)[i * c + j] += g[i * c + j] * sv[i];
    if (auto* gs = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < n; ++i) {
        Real acc = 0;
        for (std::size_t j = 0; j < c; ++j) acc += g[i * c + j] * xv[i * c + j];
        (*gs)[i] += acc;
      }
  });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& x) {
  Buffer<Real> out(x.size());
  detail::as_array(out) = detail::as_array(x.values()).max(Real(0));
  return make_result<Real>("relu", x.shape(), std::move(out), {x}, [](Node<Real>& self) {
    if (auto* g = detail::parent_grad(self, 0))
      detail::as_array(*g) += (detail::as_array(std::as_const(self.value)) > Real(0))
                                  .select(detail::as_array(std::as_const(self.grad)), Real(0));
  });
}

// log(1 + e^x), computed without overflow.
template <typename Real>
Tensor<Real> softplus(const Tensor<Real>& x) {
  Buffer<Real> out(x.size());
  auto xa = detail::as_array(x.values());
  detail::as_array(out) = xa.max(Real(0)) + (-xa.abs()).exp().log1p();
  return make_result<Real>("softplus", x.shape(), std::move(out), {x}, [](Node<Real>& self) {
    if (auto* g = detail::parent_grad(self, 0)) {
      auto xa = detail::as_array(std::as_const(self.parents[0]->value));
      detail::as_array(*g) += detail::as_array(std::as_const(self.grad)) / (Real(1) + (-xa).exp());
    }
  });
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
  Buffer<Real> out(x.size());
  detail::as_array(out) = Real(1) / (Real(1) + (-detail::as_array(x.values())).exp());
  return make_result<Real>("sigmoid", x.shape(), std::move(out), {x}, [](Node<Real>& self) {
    if (auto* g = detail::parent_grad(self, 0)) {
      auto y = detail::as_array(std::as_const(self.value));
      detail::as_array(*g) += detail::as_array(std::as_const(self.grad)) * y * (Real(1) - y);
    }
  });
}

template <typename Real>
Tensor<Real> exp(const Tensor<Real>& x) {
  Buffer<Real> out(x.size());
  detail::as_array(out) = detail::as_array(x.values()).exp();
  return make_result<Real>("exp", x.shape(), std::move(out), {x}, [](Node<Real>& self) {
    if (auto* g = detail::parent_grad(self, 0))
      detail::as_array(*g) += detail::as_array(std::as_const(self.grad)) * detail::as_array(std::as_const(self.value));
  });
}

template <typename Real>
Tensor<Real> sin(const Tensor<Real>& x) {
  Buffer<Real> out(x.size());
  detail::as_array(out) = detail::as_array(x.values()).sin();
  return make_result<Real>("sin", x.shape(), std::move(out), {x}, [](Node<Real>& self) {
    if (auto* g = detail::parent_grad(self, 0))
      detail::as_array(*g) += detail::as_array(std::as_const(self.grad)) * detail::as_array(std::as_const(self.parents[0]->value)).cos();
  });
}

template <typename Real>
Tensor<Real> cos(const Tensor<Real>& x) {
  Buffer<Real> out(x.size());
  detail::as_array(out) = detail::as_array(x.values()).cos();
  return make_result<Real>("cos", x.shape(), std::move(out), {x}, [](Node<Real>& self) {
    if (auto* g = detail::parent_grad(self, 0))
      detail::as_array(*g) -= detail::as_array(std::as_const(self.grad)) * detail::as_array(std::as_const(self.parents[0]->value)).sin();
  });
}

// Row-wise softmax of a [N, C] matrix.
template <typename Real>
Tensor<Real> softmax_rows(const Tensor<Real>& x) {
  detail::require(detail::is_matrix(x), "softmax_rows", "expected a matrix, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1);
  Buffer<Real> out(x.size());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    Real mx = xv[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xv[i * c + j]);
    Real z = 0;
    for (std::size_t j = 0; j < c; ++j) z += (out[i * c + j] = std::exp(xv[i * c + j] - mx));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  return make_result<Real>("softmax_rows", x.shape(), std::move(out), {x}, [n, c](Node<Real>& self) {
    auto* g = detail::parent_grad(self, 0);
    if (!g) return;
    const auto& y = self.value;
    const auto& gy = self.grad;
    for (std::size_t i = 0; i < n; ++i) {
      Real dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += gy[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += y[i * c + j] * (gy[i * c + j] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Structural ops

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape) {
  detail::require(numel(shape) == x.size(), "reshape",
                  "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  return make_result<Real>("reshape", std::move(shape), x.values(), {x}, [](Node<Real>& self) {
    if (auto* g = detail::parent_grad(self, 0)) detail::as_array(*g) += detail::as_array(std::as_const(self.grad));
  });
}

// Concatenates [N, C_i] matrices along columns.
template <typename Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts) {
  detail::require(!parts.empty(), "concat_cols", "no inputs");
  const std::size_t n = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require(p.rows() == n, "concat_cols",
                    "row count mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    widths.push_back(p.cols());
    total += p.cols();
  }
  Buffer<Real> out(n * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].values();
    const std::size_t w = widths[k];
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(v.data() + i * w, w, out.data() + i * total + off);
    off += w;
  }
  return make_result<Real>("concat_cols", {n, total}, std::move(out), parts,
                           [n, total, widths](Node<Real>& self) {
                             std::size_t off = 0;
                             for (std::size_t k = 0; k < widths.size(); ++k) {
                               const std::size_t w = widths[k];
                               if (auto* g = detail::parent_grad(self, k))
                                 for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t j = 0; j < w; ++j)
                                     (*g)[i * w + j] += self.grad[i * total + off + j];
                               off += w;
                             }
                           });
}

// Columns [begin, end) of a [N, C] matrix.
template <typename Real>
Tensor<Real> slice_cols(const Tensor<Real>& x, std::size_t begin, std::size_t end) {
  detail::require(detail::is_matrix(x) && begin < end && end <= x.dim(1), "slice_cols",
                  "range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                      shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), w = end - begin;
  Buffer<Real> out(n * w);
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(x.values().data() + i * c + begin, w, out.data() + i * w);
  return make_result<Real>("slice_cols", {n, w}, std::move(out), {x}, [n, c, w, begin](Node<Real>& self) {
    if (auto* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) (*g)[i * c + begin + j] += self.grad[i * w + j];
  });
}

template <typename Real>
Tensor<Real> gather_rows(const Tensor<Real>& x, const std::vector<std::uint32_t>& idx) {
  const std::size_t c = x.cols(), n = x.rows();
  for (auto i : idx)
    detail::require(i < n, "gather_rows", "index " + std::to_string(i) + " out of range for " + shape_str(x.shape()));
  detail::require(!idx.empty(), "gather_rows", "empty index list");
  Buffer<Real> out(idx.size() * c);
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(x.values().data() + idx[r] * c, c, out.data() + r * c);
  return make_result<Real>("gather_rows", {idx.size(), c}, std::move(out), {x}, [idx, c](Node<Real>& self) {
    if (auto* g = detail::parent_grad(self, 0))
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < c; ++j) (*g)[idx[r] * c + j] += self.grad[r * c + j];
  });
}

// Inverse of gather_rows: places row r of x at row idx[r] of an n-row zero matrix.
template <typename Real>
Tensor<Real> scatter_rows(const Tensor<Real>& x, const std::vector<std::uint32_t>& idx, std::size_t n) {
  detail::require(idx.size() == x.rows(), "scatter_rows",
                  "index count " + std::to_string(idx.size()) + " does not match " + shape_str(x.shape()));
  const std::size_t c = x.cols();
  Buffer<Real> out(n * c, Real(0));
  for (std::size_t r = 0; r < idx.size(); ++r) {
    detail::require(idx[r] < n, "scatter_rows", "index out of range");
    for (std::size_t j = 0; j < c; ++j) out[idx[r] * c + j] += x.values()[r * c + j];
  }
  return make_result<Real>("scatter_rows", {n, c}, std::move(out), {x}, [idx, c](Node<Real>& self) {
    if (auto* g = detail::parent_grad(self, 0))
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < c; ++j) (*g)[r * c + j] += self.grad[idx[r] * c + j];
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x) {
  Real s = detail::as_array(x.values()).sum();
  return make_result<Real>("sum", {1}, {s}, {x}, [](Node<Real>& self) {
    if (auto* g = detail::parent_grad(self, 0)) detail::as_array(*g) += self.grad[0];
  });
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& x) {
  return scale(sum(x), Real(1) / static_cast<Real>(x.size()));
}

// [N, C] -> [N, 1]
template <typename Real>
Tensor<Real> row_sum(const Tensor<Real>& x) {
  const std::size_t n = x.rows(), c = x.cols();
  Buffer<Real> out(n);
  detail::as_matrix(out, n, 1).col(0) = detail::as_matrix(x.values(), n, c).rowwise().sum();
  return make_result<Real>("row_sum", {n, 1}, std::move(out), {x}, [n, c](Node<Real>& self) {
    if (auto* g = detail::parent_grad(self, 0))
      detail::as_matrix(*g, n, c).colwise() += detail::as_matrix(std::as_const(self.grad), n, 1).col(0);
  });
}

// Euclidean norm of each row, [N, C] -> [N, 1]. The gradient at a zero row is zero.
template <typename Real>
Tensor<Real> row_norm(const Tensor<Real>& x) {
  const std::size_t n = x.rows(), c = x.cols();
  Buffer<Real> out(n);
  detail::as_matrix(out, n, 1).col(0) = detail::as_matrix(x.values(), n, c).rowwise().norm();
  return make_result<Real>("row_norm", {n, 1}, std::move(out), {x}, [n, c](Node<Real>& self) {
    auto* g = detail::parent_grad(self, 0);
    if (!g) return;
    const auto& xv = self.parents[0]->value;
    for (std::size_t i = 0; i < n; ++i) {
      const Real d = self.value[i];
      if (d <= Real(0)) continue;
      const Real k = self.grad[i] / d;
      for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += k * xv[i * c + j];
    }
  });
}

}  // namespace naf
