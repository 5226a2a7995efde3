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

// Inference-only helpers that run a shape-preserving layer over slices of a
// large tensor so intermediates stay bounded. Gradient recording must be off.

#pragma once

#include <algorithm>
#include <functional>

#include "feat/numerics/ops.hpp"

namespace feat {

/// Applies fn to row blocks [b, b + chunk) along axis 0 of x.
inline Tensor map_row_chunks(const Tensor& x, std::size_t chunk,
                             const std::function<Tensor(const Tensor&)>& fn) {
  check(!grad_enabled(), ErrorKind::kContract, "map_row_chunks is inference only");
  const std::size_t n = x.dim(0);
  if (n <= chunk) return fn(x);
  const std::size_t stride = x.numel() / n;
  std::vector<double> out(x.numel());
  for (std::size_t b = 0; b < n; b += chunk) {
    const std::size_t e = std::min(n, b + chunk);
    Tensor y = fn(ops::slice_rows(x, b, e));
    check(y.numel() == (e - b) * stride, ErrorKind::kDimension,
          "map_row_chunks: fn must preserve shape");
    std::copy(y.data().begin(), y.data().end(), out.begin() + b * stride);
  }
  return Tensor(x.shape(), std::move(out));
}

/// Applies fn to token blocks [b, b + chunk) along axis 1 of an [N, T, d] x.
inline Tensor map_token_chunks(const Tensor& x, std::size_t chunk,
                               const std::function<Tensor(const Tensor&)>& fn) {
  check(!grad_enabled(), ErrorKind::kContract, "map_token_chunks is inference only");
  check(x.rank() == 3, ErrorKind::kDimension, "map_token_chunks expects [N,T,d]");
  const std::size_t n = x.dim(0), t = x.dim(1), d = x.dim(2);
  if (t <= chunk) return fn(x);
  std::vector<double> out(x.numel());
  for (std::size_t b = 0; b < t; b += chunk) {
    const std::size_t e = std::min(t, b + chunk), w = e - b;
    Tensor y = fn(ops::slice_tokens(x, b, e));
    check(y.shape() == Shape({n, w, d}), ErrorKind::kDimension,
          "map_token_chunks: fn must preserve shape");
    const auto yv = y.data();
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(yv.begin() + i * w * d, w * d, out.begin() + (i * t + b) * d);
  }
  return Tensor(x.shape(), std::move(out));
}

/// Stacks fn(b, e) for row blocks [b, b + chunk) of n rows along axis 0.
/// Unlike map_row_chunks, fn may change every trailing axis.
inline Tensor map_row_blocks(std::size_t n, std::size_t chunk,
                             const std::function<Tensor(std::size_t, std::size_t)>& fn) {
  check(!grad_enabled(), ErrorKind::kContract, "map_row_blocks is inference only");
  check(n > 0 && chunk > 0, ErrorKind::kUsage, "map_row_blocks needs rows and a chunk size");
  std::vector<double> out;
  Shape shape;
  for (std::size_t b = 0; b < n; b += chunk) {
    const std::size_t e = std::min(n, b + chunk);
    Tensor y = fn(b, e);
    check(y.rank() >= 1 && y.dim(0) == e - b, ErrorKind::kDimension,
          "map_row_blocks: fn must return one row per input row");
    if (b == 0) {
      shape = y.shape();
      shape[0] = n;
      out.reserve(shape_numel(shape));
    }
    check(std::equal(shape.begin() + 1, shape.end(), y.shape().begin() + 1), ErrorKind::kDimension,
          "map_row_blocks: blocks disagree on trailing axes");
    out.insert(out.end(), y.data().begin(), y.data().end());
  }
  return Tensor(std::move(shape), std::move(out));
}

}  // namespace feat
