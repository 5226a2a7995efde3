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

// Dense row-major tensor with reverse-mode automatic differentiation.
//
// Every op produces a fresh immutable tensor. When gradient recording is on
// and any input requires a gradient, the result keeps its inputs and a
// backward closure; Tensor::backward() walks that graph in reverse
// topological order.

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_set>
#include <utility>
#include <vector>

#include "feat/errors.hpp"

namespace feat {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  bool is_leaf() const { return !backward; }

  std::vector<double>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline std::size_t& worker_count() {
  static std::size_t workers = 1;
  return workers;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording for its lifetime (inference paths).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = false;
  }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Number of workers used by the column/row-parallel kernels.
inline void set_num_threads(std::size_t n) {
  detail::worker_count() = std::max<std::size_t>(1, n);
}
inline std::size_t num_threads() { return detail::worker_count(); }

/// Runs fn(begin, end) over contiguous chunks of [0, n). Each index is handled
/// by exactly one worker and no cross-worker reduction happens here, so the
/// result does not depend on the worker count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(num_threads(), n);
  if (workers <= 1) {
    if (n) fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : pool) t.join();
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Tensor full(Shape shape, double v) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }

  static Tensor from(Shape shape, std::vector<double> data) {
    return Tensor(std::move(shape), std::move(data));
  }

  Tensor(Shape shape, std::vector<double> data)
      : node_(std::make_shared<detail::Node>()) {
    if (shape_numel(shape) != data.size()) {
      fail(ErrorKind::kDimension, "shape " + shape_str(shape) + " holds " +
                                      std::to_string(shape_numel(shape)) +
                                      " values, got " +
                                      std::to_string(data.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
  }

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  /// In-place access. Only legitimate on leaves (parameters, inputs) and
  /// outside of a recorded graph that reads them.
  std::span<double> mutable_data() { return node_->value; }

  double item() const {
    check(numel() == 1, ErrorKind::kContract,
          "item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  double operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    check(node_->is_leaf(), ErrorKind::kContract,
          "requires_grad can only be set on leaf tensors");
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const double> grad() const {
    check(has_grad(), ErrorKind::kContract, "tensor has no gradient");
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  /// Same values, no history.
  Tensor detach() const { return Tensor(shape(), node_->value); }
  Tensor clone() const { return detach(); }

  const char* op_name() const { return node_->op; }

  /// Reverse-mode sweep from a scalar root. Leaf gradients accumulate across
  /// calls; intermediate gradients are released once propagated, so the same
  /// graph can be swept repeatedly (Jacobian rows).
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Builds an op result. The closure receives the output node; its grad buffer
/// holds dLoss/dOutput and inputs are reachable through node.inputs.
inline Tensor make_op(const char* name, Shape shape, std::vector<double> value,
                      std::vector<Tensor> inputs,
                      std::function<void(detail::Node&)> backward) {
  Tensor out(std::move(shape), std::move(value));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.op = name;
  node.backward = std::move(backward);
  node.inputs.reserve(inputs.size());
  for (auto& t : inputs) node.inputs.push_back(t.node());
  return out;
}

inline void Tensor::backward() const {
  check(numel() == 1, ErrorKind::kContract,
        "backward() needs a scalar root, got " + shape_str(shape()));
  if (!node_->requires_grad) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      detail::Node* child = n->inputs[next++].get();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (!n->is_leaf()) n->grad.clear();
  }
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->is_leaf()) continue;
    n->grad_buffer();
    n->backward(*n);
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

inline bool same_shape(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape();
}

inline void require_shape(const Tensor& a, const Shape& s, const char* what) {
  if (a.shape() != s) {
    fail(ErrorKind::kDimension, std::string(what) + ": expected " +
                                    shape_str(s) + ", got " +
                                    shape_str(a.shape()));
  }
}

/// Row count when the tensor is viewed as [rows, last].
inline std::size_t leading_rows(const Tensor& t) {
  check(t.rank() >= 1, ErrorKind::kDimension, "expected rank >= 1");
  return t.numel() / t.shape().back();
}

}  // namespace feat
