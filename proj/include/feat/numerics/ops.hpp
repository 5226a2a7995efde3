/*
 * Copyright 2026 The feat Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// The closed op set of the autodiff core. Scan and attention kernels live
// with the layers that own them and are built on make_op the same way.

#pragma once

#include <Eigen/Core>
#include <cmath>
#include <numbers>
#include <vector>

#include "feat/numerics/tensor.hpp"

namespace feat::ops {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using ConstVec = Eigen::Map<const Eigen::VectorXd>;

inline ConstMap as_mat(std::span<const double> d, std::size_t rows, std::size_t cols) {
  return ConstMap(d.data(), static_cast<Eigen::Index>(rows),
                  static_cast<Eigen::Index>(cols));
}
inline MutMap as_mat(std::vector<double>& d, std::size_t rows, std::size_t cols) {
  return MutMap(d.data(), static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}

inline feat::detail::Node& in(feat::detail::Node& n, std::size_t i) {
  return *n.inputs[i];
}

template <typename F, typename DF>
Tensor unary(const char* name, const Tensor& x, F f, DF df) {
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_op(name, x.shape(), std::move(out), {x},
                 [df](feat::detail::Node& self) {
                   auto& a = in(self, 0);
                   if (!a.requires_grad) return;
                   auto& ga = a.grad_buffer();
                   for (std::size_t i = 0; i < ga.size(); ++i)
                     ga[i] += self.grad[i] * df(a.value[i], self.value[i]);
                 });
}

inline void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kDimension, std::string(what) + ": shapes " +
                                    shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()) + " differ");
  }
}

}  // namespace detail

// ---------------------------------------------------------------- shape ops

inline Tensor reshape(const Tensor& x, Shape shape) {
  check(shape_numel(shape) == x.numel(), ErrorKind::kDimension,
        "reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<double> v(x.data().begin(), x.data().end());
  return make_op("reshape", std::move(shape), std::move(v), {x},
                 [](feat::detail::Node& self) {
                   auto& a = detail::in(self, 0);
                   if (!a.requires_grad) return;
                   auto& ga = a.grad_buffer();
                   for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
                 });
}

/// Rows [begin, end) along axis 0.
inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  check(x.rank() >= 1 && begin <= end && end <= x.dim(0), ErrorKind::kDimension,
        "slice_rows out of range");
  const std::size_t stride = x.numel() / std::max<std::size_t>(1, x.dim(0));
  Shape s = x.shape();
  s[0] = end - begin;
  std::vector<double> v(x.data().begin() + begin * stride,
                        x.data().begin() + end * stride);
  return make_op("slice_rows", std::move(s), std::move(v), {x},
                 [begin, stride](feat::detail::Node& self) {
                   auto& a = detail::in(self, 0);
                   if (!a.requires_grad) return;
                   auto& ga = a.grad_buffer();
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     ga[begin * stride + i] += self.grad[i];
                 });
}

/// Tokens [begin, end) along axis 1 of an [N, T, d] tensor.
inline Tensor slice_tokens(const Tensor& x, std::size_t begin, std::size_t end) {
  check(x.rank() == 3 && begin <= end && end <= x.dim(1), ErrorKind::kDimension,
        "slice_tokens expects [N,T,d] and a valid range");
  const std::size_t n = x.dim(0), t = x.dim(1), d = x.dim(2), w = end - begin;
  std::vector<double> v(n * w * d);
  const auto xv = x.data();
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(xv.begin() + (i * t + begin) * d, w * d, v.begin() + i * w * d);
  return make_op("slice_tokens", Shape{n, w, d}, std::move(v), {x},
                 [n, t, d, w, begin](feat::detail::Node& self) {
                   auto& a = detail::in(self, 0);
                   if (!a.requires_grad) return;
                   auto& ga = a.grad_buffer();
                   for (std::size_t i = 0; i < n; ++i)
                     for (std::size_t k = 0; k < w * d; ++k)
                       ga[(i * t + begin) * d + k] += self.grad[i * w * d + k];
                 });
}

/// Concatenates [N, T1, d] and [N, T2, d] along the token axis.
inline Tensor concat_tokens(const Tensor& a, const Tensor& b) {
  check(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2),
        ErrorKind::kDimension,
        "concat_tokens " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
  const std::size_t n = a.dim(0), t1 = a.dim(1), t2 = b.dim(1), d = a.dim(2);
  std::vector<double> v(n * (t1 + t2) * d);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data().begin() + i * t1 * d, t1 * d, v.begin() + i * (t1 + t2) * d);
    std::copy_n(b.data().begin() + i * t2 * d, t2 * d,
                v.begin() + (i * (t1 + t2) + t1) * d);
  }
  return make_op("concat_tokens", Shape{n, t1 + t2, d}, std::move(v), {a, b},
                 [n, t1, t2, d](feat::detail::Node& self) {
                   auto& x = detail::in(self, 0);
                   auto& y = detail::in(self, 1);
                   const std::size_t t = t1 + t2;
                   if (x.requires_grad) {
                     auto& g = x.grad_buffer();
                     for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t k = 0; k < t1 * d; ++k)
                         g[i * t1 * d + k] += self.grad[i * t * d + k];
                   }
                   if (y.requires_grad) {
                     auto& g = y.grad_buffer();
                     for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t k = 0; k < t2 * d; ++k)
                         g[i * t2 * d + k] += self.grad[(i * t + t1) * d + k];
                   }
                 });
}

/// Concatenates along the last axis; leading shapes must agree.
inline Tensor concat_last(const Tensor& a, const Tensor& b) {
  const std::size_t rows = leading_rows(a);
  check(rows == leading_rows(b) && a.rank() == b.rank(), ErrorKind::kDimension,
        "concat_last " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
  const std::size_t ca = a.shape().back(), cb = b.shape().back();
  std::vector<double> v(rows * (ca + cb));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().begin() + r * ca, ca, v.begin() + r * (ca + cb));
    std::copy_n(b.data().begin() + r * cb, cb, v.begin() + r * (ca + cb) + ca);
  }
  Shape s = a.shape();
  s.back() = ca + cb;
  return make_op("concat_last", std::move(s), std::move(v), {a, b},
                 [rows, ca, cb](feat::detail::Node& self) {
                   auto& x = detail::in(self, 0);
                   auto& y = detail::in(self, 1);
                   if (x.requires_grad) {
                     auto& g = x.grad_buffer();
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t k = 0; k < ca; ++k)
                         g[r * ca + k] += self.grad[r * (ca + cb) + k];
                   }
                   if (y.requires_grad) {
                     auto& g = y.grad_buffer();
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t k = 0; k < cb; ++k)
                         g[r * cb + k] += self.grad[r * (ca + cb) + ca + k];
                   }
                 });
}

/// Gathers rows of x viewed as [R, C]; result is [idx.size(), C].
inline Tensor index_rows(const Tensor& x, std::vector<std::size_t> idx) {
  const std::size_t rows = leading_rows(x), cols = x.shape().back();
  std::vector<double> v(idx.size() * cols);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    check(idx[r] < rows, ErrorKind::kDimension, "index_rows index out of range");
    std::copy_n(x.data().begin() + idx[r] * cols, cols, v.begin() + r * cols);
  }
  const std::size_t count = idx.size();
  return make_op("index_rows", Shape{count, cols}, std::move(v), {x},
                 [idx = std::move(idx), cols](feat::detail::Node& self) {
                   auto& a = detail::in(self, 0);
                   if (!a.requires_grad) return;
                   auto& g = a.grad_buffer();
                   for (std::size_t r = 0; r < idx.size(); ++r)
                     for (std::size_t k = 0; k < cols; ++k)
                       g[idx[r] * cols + k] += self.grad[r * cols + k];
                 });
}

/// Row r of the result is a[r] where keep[r], else the shared token.
inline Tensor select_rows(const std::vector<bool>& keep, const Tensor& a,
                          const Tensor& token) {
  const std::size_t rows = leading_rows(a), cols = a.shape().back();
  check(keep.size() == rows && token.numel() == cols, ErrorKind::kDimension,
        "select_rows: mask/token do not match " + shape_str(a.shape()));
  std::vector<double> v(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = keep[r] ? a.data().data() + r * cols : token.data().data();
    std::copy_n(src, cols, v.begin() + r * cols);
  }
  return make_op("select_rows", a.shape(), std::move(v), {a, token},
                 [keep, rows, cols](feat::detail::Node& self) {
                   auto& x = detail::in(self, 0);
                   auto& t = detail::in(self, 1);
                   for (std::size_t r = 0; r < rows; ++r) {
                     if (keep[r] && x.requires_grad) {
                       auto& g = x.grad_buffer();
                       for (std::size_t k = 0; k < cols; ++k)
                         g[r * cols + k] += self.grad[r * cols + k];
                     } else if (!keep[r] && t.requires_grad) {
                       auto& g = t.grad_buffer();
                       for (std::size_t k = 0; k < cols; ++k)
                         g[k] += self.grad[r * cols + k];
                     }
                   }
                 });
}

/// Broadcasts a single-element tensor to `shape`.
inline Tensor expand(const Tensor& x, Shape shape) {
  check(x.numel() == 1, ErrorKind::kDimension, "expand needs a single element");
  const std::size_t n = shape_numel(shape);
  return make_op("expand", std::move(shape), std::vector<double>(n, x[0]), {x},
                 [](feat::detail::Node& self) {
                   auto& a = detail::in(self, 0);
                   if (!a.requires_grad) return;
                   double s = 0.0;
                   for (double g : self.grad) s += g;
                   a.grad_buffer()[0] += s;
                 });
}

// --------------------------------------------------------- elementwise ops

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "add");
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
  return make_op("add", a.shape(), std::move(v), {a, b},
                 [](feat::detail::Node& self) {
                   for (std::size_t k = 0; k < 2; ++k) {
                     auto& x = detail::in(self, k);
                     if (!x.requires_grad) continue;
                     auto& g = x.grad_buffer();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                   }
                 });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "sub");
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] - b[i];
  return make_op("sub", a.shape(), std::move(v), {a, b},
                 [](feat::detail::Node& self) {
                   auto& x = detail::in(self, 0);
                   auto& y = detail::in(self, 1);
                   if (x.requires_grad) {
                     auto& g = x.grad_buffer();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                   }
                   if (y.requires_grad) {
                     auto& g = y.grad_buffer();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
                   }
                 });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "mul");
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
  return make_op("mul", a.shape(), std::move(v), {a, b},
                 [](feat::detail::Node& self) {
                   auto& x = detail::in(self, 0);
                   auto& y = detail::in(self, 1);
                   if (x.requires_grad) {
                     auto& g = x.grad_buffer();
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += self.grad[i] * y.value[i];
                   }
                   if (y.requires_grad) {
                     auto& g = y.grad_buffer();
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += self.grad[i] * x.value[i];
                   }
                 });
}

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary("scale", x, [c](double v) { return c * v; },
                       [c](double, double) { return c; });
}

/// x + b with b broadcast along the last axis.
inline Tensor add_bias(const Tensor& x, const Tensor& b) {
  const std::size_t cols = x.shape().back();
  check(b.numel() == cols, ErrorKind::kDimension,
        "add_bias: bias " + shape_str(b.shape()) + " vs " + shape_str(x.shape()));
  std::vector<double> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] + b[i % cols];
  return make_op("add_bias", x.shape(), std::move(v), {x, b},
                 [cols](feat::detail::Node& self) {
                   auto& a = detail::in(self, 0);
                   auto& bb = detail::in(self, 1);
                   if (a.requires_grad) {
                     auto& g = a.grad_buffer();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                   }
                   if (bb.requires_grad) {
                     auto& g = bb.grad_buffer();
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       g[i % cols] += self.grad[i];
                   }
                 });
}

/// x[n, ...] + y[...] broadcast over the leading axis.
inline Tensor add_leading(const Tensor& x, const Tensor& y) {
  check(x.rank() == y.rank() + 1 &&
            std::equal(y.shape().begin(), y.shape().end(), x.shape().begin() + 1),
        ErrorKind::kDimension,
        "add_leading " + shape_str(x.shape()) + " + " + shape_str(y.shape()));
  const std::size_t inner = y.numel();
  std::vector<double> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] + y[i % inner];
  return make_op("add_leading", x.shape(), std::move(v), {x, y},
                 [inner](feat::detail::Node& self) {
                   auto& a = detail::in(self, 0);
                   auto& b = detail::in(self, 1);
                   if (a.requires_grad) {
                     auto& g = a.grad_buffer();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                   }
                   if (b.requires_grad) {
                     auto& g = b.grad_buffer();
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       g[i % inner] += self.grad[i];
                   }
                 });
}

inline Tensor square(const Tensor& x) {
  return detail::unary("square", x, [](double v) { return v * v; },
                       [](double v, double) { return 2.0 * v; });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary("exp", x, [](double v) { return std::exp(v); },
                       [](double, double y) { return y; });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary("tanh", x, [](double v) { return std::tanh(v); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline double sigmoid(double v) {
  return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

inline double softplus(double v) {
  return v > 30.0 ? v : std::log1p(std::exp(v));
}

/// Exact GELU, x * Phi(x).
inline double gelu(double v) {
  return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
}

inline double gelu_grad(double v) {
  const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * v * v) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  return cdf + v * pdf;
}

inline double silu(double v) { return v * sigmoid(v); }

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary("sigmoid", x, [](double v) { return sigmoid(v); },
                       [](double, double y) { return y * (1.0 - y); });
}

inline Tensor softplus(const Tensor& x) {
  return detail::unary("softplus", x, [](double v) { return softplus(v); },
                       [](double v, double) { return sigmoid(v); });
}

inline Tensor gelu(const Tensor& x) {
  return detail::unary("gelu", x, [](double v) { return gelu(v); },
                       [](double v, double) { return gelu_grad(v); });
}

inline Tensor silu(const Tensor& x) {
  return detail::unary("silu", x, [](double v) { return silu(v); },
                       [](double v, double) {
                         const double s = sigmoid(v);
                         return s * (1.0 + v * (1.0 - s));
                       });
}

// -------------------------------------------------------------- reductions

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_op("sum", Shape{}, {s}, {x}, [](feat::detail::Node& self) {
    auto& a = detail::in(self, 0);
    if (!a.requires_grad) return;
    auto& g = a.grad_buffer();
    for (auto& gi : g) gi += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) {
  check(x.numel() > 0, ErrorKind::kUsage, "mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// ------------------------------------------------------------- linear algebra

/// [m,k] x [k,n] -> [m,n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.rank() == 2 && b.rank() == 2, ErrorKind::kDimension, "matmul needs 2-D operands");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    fail(ErrorKind::kDimension,
         "matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> v(m * n);
  detail::as_mat(v, m, n).noalias() =
      detail::as_mat(a.data(), m, k) * detail::as_mat(b.data(), k, n);
  return make_op("matmul", Shape{m, n}, std::move(v), {a, b},
                 [m, k, n](feat::detail::Node& self) {
                   auto& x = detail::in(self, 0);
                   auto& y = detail::in(self, 1);
                   const auto g = detail::as_mat(self.grad, m, n);
                   if (x.requires_grad)
                     detail::as_mat(x.grad_buffer(), m, k).noalias() +=
                         g * detail::as_mat(y.value, k, n).transpose();
                   if (y.requires_grad)
                     detail::as_mat(y.grad_buffer(), k, n).noalias() +=
                         detail::as_mat(x.value, m, k).transpose() * g;
                 });
}

/// y = x W^T (+ b) over the last axis of x; W is [out, in].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = Tensor()) {
  check(w.rank() == 2, ErrorKind::kDimension, "linear weight must be 2-D");
  const std::size_t in_dim = w.dim(1), out_dim = w.dim(0);
  if (x.shape().empty() || x.shape().back() != in_dim) {
    fail(ErrorKind::kDimension,
         "linear input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  }
  const bool has_bias = b.defined();
  if (has_bias) check(b.numel() == out_dim, ErrorKind::kDimension, "linear bias size");
  const std::size_t rows = leading_rows(x);
  std::vector<double> v(rows * out_dim);
  auto y = detail::as_mat(v, rows, out_dim);
  y.noalias() = detail::as_mat(x.data(), rows, in_dim) *
                detail::as_mat(w.data(), out_dim, in_dim).transpose();
  if (has_bias)
    y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(
        b.data().data(), static_cast<Eigen::Index>(out_dim));
  Shape s = x.shape();
  s.back() = out_dim;
  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_op("linear", std::move(s), std::move(v), std::move(inputs),
                 [rows, in_dim, out_dim, has_bias](feat::detail::Node& self) {
                   auto& xi = detail::in(self, 0);
                   auto& wi = detail::in(self, 1);
                   const auto g = detail::as_mat(self.grad, rows, out_dim);
                   if (xi.requires_grad)
                     detail::as_mat(xi.grad_buffer(), rows, in_dim).noalias() +=
                         g * detail::as_mat(wi.value, out_dim, in_dim);
                   if (wi.requires_grad)
                     detail::as_mat(wi.grad_buffer(), out_dim, in_dim).noalias() +=
                         g.transpose() * detail::as_mat(xi.value, rows, in_dim);
                   if (has_bias) {
                     auto& bi = detail::in(self, 2);
                     if (bi.requires_grad)
                       detail::as_mat(bi.grad_buffer(), 1, out_dim) += g.colwise().sum();
                   }
                 });
}

// ----------------------------------------------------------- normalization

inline constexpr double kLayerNormEps = 1e-9;

/// Normalizes the last axis to zero mean and unit variance, then applies
/// gain * x + bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = kLayerNormEps) {
  const std::size_t d = x.shape().back();
  check(d >= 1, ErrorKind::kDimension, "layer_norm over an empty axis");
  check(gain.numel() == d && bias.numel() == d, ErrorKind::kDimension,
        "layer_norm affine params must match the last axis");
  const std::size_t rows = leading_rows(x);
  std::vector<double> out(x.numel()), xhat(x.numel()), inv_std(rows);
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t k = 0; k < d; ++k) mu += row[k];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t k = 0; k < d; ++k) var += (row[k] - mu) * (row[k] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t k = 0; k < d; ++k) {
      const double h = (row[k] - mu) * inv;
      xhat[r * d + k] = h;
      out[r * d + k] = gv[k] * h + bv[k];
    }
  }
  return make_op(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          feat::detail::Node& self) {
        auto& xi = detail::in(self, 0);
        auto& gi = detail::in(self, 1);
        auto& bi = detail::in(self, 2);
        const auto& gy = self.grad;
        if (gi.requires_grad) {
          auto& gg = gi.grad_buffer();
          for (std::size_t i = 0; i < gy.size(); ++i) gg[i % d] += gy[i] * xhat[i];
        }
        if (bi.requires_grad) {
          auto& gb = bi.grad_buffer();
          for (std::size_t i = 0; i < gy.size(); ++i) gb[i % d] += gy[i];
        }
        if (!xi.requires_grad) return;
        auto& gx = xi.grad_buffer();
        std::vector<double> gh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t k = 0; k < d; ++k) {
            gh[k] = gy[r * d + k] * gi.value[k];
            m1 += gh[k];
            m2 += gh[k] * xhat[r * d + k];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          for (std::size_t k = 0; k < d; ++k)
            gx[r * d + k] += inv_std[r] * (gh[k] - m1 - xhat[r * d + k] * m2);
        }
      });
}

/// Max-subtracted softmax over the last axis.
inline Tensor softmax(const Tensor& x) {
  const std::size_t n = x.shape().back(), rows = leading_rows(x);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data().data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) z += (out[r * n + k] = std::exp(row[k] - mx));
    for (std::size_t k = 0; k < n; ++k) out[r * n + k] /= z;
  }
  return make_op("softmax", x.shape(), std::move(out), {x},
                 [rows, n](feat::detail::Node& self) {
                   auto& a = detail::in(self, 0);
                   if (!a.requires_grad) return;
                   auto& g = a.grad_buffer();
                   for (std::size_t r = 0; r < rows; ++r) {
                     double dot = 0.0;
                     for (std::size_t k = 0; k < n; ++k)
                       dot += self.grad[r * n + k] * self.value[r * n + k];
                     for (std::size_t k = 0; k < n; ++k)
                       g[r * n + k] += self.value[r * n + k] * (self.grad[r * n + k] - dot);
                   }
                 });
}

inline Tensor log_softmax(const Tensor& x) {
  const std::size_t n = x.shape().back(), rows = leading_rows(x);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data().data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) z += std::exp(row[k] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t k = 0; k < n; ++k) out[r * n + k] = row[k] - lse;
  }
  return make_op("log_softmax", x.shape(), std::move(out), {x},
                 [rows, n](feat::detail::Node& self) {
                   auto& a = detail::in(self, 0);
                   if (!a.requires_grad) return;
                   auto& g = a.grad_buffer();
                   for (std::size_t r = 0; r < rows; ++r) {
                     double s = 0.0;
                     for (std::size_t k = 0; k < n; ++k) s += self.grad[r * n + k];
                     for (std::size_t k = 0; k < n; ++k)
                       g[r * n + k] += self.grad[r * n + k] - std::exp(self.value[r * n + k]) * s;
                   }
                 });
}

}  // namespace feat::ops
