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

#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "feat/numerics/rng.hpp"
#include "feat/numerics/tensor.hpp"

namespace feat {

inline Tensor randn(Shape shape, RngStream& rng, double stddev = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(v));
}

/// Gaussian init with variance 2 / (fan_in + fan_out) for an [out, in] weight.
inline Tensor xavier(std::size_t out, std::size_t in, RngStream& rng) {
  return randn(Shape{out, in}, rng,
               std::sqrt(2.0 / static_cast<double>(in + out)));
}

/// D x r matrix with orthonormal rows: Gaussian draw followed by two passes of
/// modified Gram-Schmidt (the second pass removes the rounding drift of the
/// first). Requires D <= r.
inline Tensor orthonormal_rows(std::size_t rows, std::size_t r, RngStream& rng) {
  if (rows > r) {
    fail(ErrorKind::kRank, "cannot fit " + std::to_string(rows) +
                               " orthonormal rows in dimension " + std::to_string(r));
  }
  std::vector<double> q(rows * r);
  for (std::size_t i = 0; i < rows; ++i) {
    double* qi = q.data() + i * r;
    double norm = 0.0;
    do {
      for (std::size_t k = 0; k < r; ++k) qi[k] = rng.normal();
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t j = 0; j < i; ++j) {
          const double* qj = q.data() + j * r;
          double dot = 0.0;
          for (std::size_t k = 0; k < r; ++k) dot += qi[k] * qj[k];
          for (std::size_t k = 0; k < r; ++k) qi[k] -= dot * qj[k];
        }
      }
      norm = 0.0;
      for (std::size_t k = 0; k < r; ++k) norm += qi[k] * qi[k];
      norm = std::sqrt(norm);
    } while (norm < 1e-8);
    for (std::size_t k = 0; k < r; ++k) qi[k] /= norm;
  }
  return Tensor(Shape{rows, r}, std::move(q));
}

/// Rows of i.i.d. Gaussians scaled to unit norm; near-orthogonal only.
inline Tensor normalized_gaussian_rows(std::size_t rows, std::size_t r, RngStream& rng) {
  std::vector<double> q(rows * r);
  for (std::size_t i = 0; i < rows; ++i) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (std::size_t k = 0; k < r; ++k) {
        q[i * r + k] = rng.normal();
        norm += q[i * r + k] * q[i * r + k];
      }
      norm = std::sqrt(norm);
    } while (norm < 1e-12);
    for (std::size_t k = 0; k < r; ++k) q[i * r + k] /= norm;
  }
  return Tensor(Shape{rows, r}, std::move(q));
}

/// Dirichlet draw through normalized Gamma variates.
inline std::vector<double> sample_dirichlet(const std::vector<double>& alpha,
                                            RngStream& rng) {
  check(!alpha.empty(), ErrorKind::kParameter, "dirichlet needs at least one component");
  std::vector<double> out(alpha.size());
  double total = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    if (!(alpha[i] > 0.0) || !std::isfinite(alpha[i]))
      fail(ErrorKind::kParameter, "dirichlet concentration must be positive");
    std::gamma_distribution<double> gamma(alpha[i], 1.0);
    out[i] = gamma(rng);
    total += out[i];
  }
  if (total <= 0.0) {
    // Every gamma draw underflowed (tiny alpha): the mass sits on one corner.
    std::size_t pick = rng.index(alpha.size());
    std::fill(out.begin(), out.end(), 0.0);
    out[pick] = 1.0;
    return out;
  }
  for (auto& v : out) v /= total;
  return out;
}

/// Kumaraswamy(a, b) inverse CDF: (1 - (1 - u)^(1/b))^(1/a).
inline double kumaraswamy_icdf(double u, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0))
    fail(ErrorKind::kParameter, "kumaraswamy shape parameters must be positive");
  if (!(u >= 0.0 && u <= 1.0))
    fail(ErrorKind::kParameter, "kumaraswamy quantile must lie in [0, 1]");
  const double inner = -std::expm1(std::log1p(-u) / b);
  return std::pow(inner, 1.0 / a);
}

}  // namespace feat
