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

// Cell-level embedding: value MLP with a shared mask token, random orthonormal
// column identities projected to the model width, LayerNorm, and the label
// token column appended after the D feature tokens.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "feat/dataset.hpp"
#include "feat/numerics.hpp"
#include "feat/params.hpp"

namespace feat::embed {

/// Two-layer scalar -> d map with a GELU hidden layer and no output activation.
struct ScalarMlp {
  Tensor w1;  // [d_hidden, 1]
  Tensor b1;  // [d_hidden]
  Tensor w2;  // [d, d_hidden]
  Tensor b2;  // [d]

  static ScalarMlp init(std::size_t d, std::size_t d_hidden, RngStream& rng) {
    // Fan-in uniform biases: with zero biases an input of 0 maps to the zero
    // vector, which downstream LayerNorms cannot normalize.
    auto bias = [&rng](std::size_t n, std::size_t fan_in) {
      Tensor b = Tensor::zeros({n});
      const double r = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& v : b.mutable_data()) v = rng.uniform(-r, r);
      return b;
    };
    Tensor w1 = xavier(d_hidden, 1, rng);
    Tensor b1 = bias(d_hidden, 1);
    Tensor w2 = xavier(d, d_hidden, rng);
    return {w1, b1, w2, bias(d, d_hidden)};
  }

  /// values: [M, 1] -> [M, d]
  Tensor apply(const Tensor& values) const {
    return ops::linear(ops::gelu(ops::linear(values, w1, b1)), w2, b2);
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".w1", w1);
    fn(prefix + ".b1", b1);
    fn(prefix + ".w2", w2);
    fn(prefix + ".b2", b2);
  }
};

struct EmbedParams {
  ScalarMlp value_mlp;
  Tensor mask_token;   // [d]
  Tensor w_dfe;        // [d/4, d]
  ScalarMlp label_mlp;
  Tensor label_mask;   // [d]
  LayerNormParams ln;

  static EmbedParams init(std::size_t d, std::size_t d_hidden, RngStream& rng) {
    if (d % 4 != 0) throw ConfigError("d", "embedding width must be divisible by 4");
    EmbedParams p;
    p.value_mlp = ScalarMlp::init(d, d_hidden, rng);
    p.mask_token = randn({d}, rng, 0.5);
    p.w_dfe = xavier(d / 4, d, rng);
    p.label_mlp = ScalarMlp::init(d, d_hidden, rng);
    p.label_mask = randn({d}, rng, 0.5);
    p.ln = LayerNormParams::identity(d);
    return p;
  }

  std::size_t width() const { return mask_token.numel(); }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    value_mlp.visit(prefix + ".value_mlp", fn);
    fn(prefix + ".mask_token", mask_token);
    fn(prefix + ".w_dfe", w_dfe);
    label_mlp.visit(prefix + ".label_mlp", fn);
    fn(prefix + ".label_mask", label_mask);
    ln.visit(prefix + ".ln", fn);
  }
};

// ------------------------------------------------------------ normalization

/// Per-column z-score statistics estimated on context rows only; query rows
/// reuse them. Regression labels get the same treatment.
struct Scaling {
  std::vector<double> mean;
  std::vector<double> stddev;
  double y_mean = 0.0;
  double y_std = 1.0;

  static Scaling fit(const TabularDataset& ds) {
    Scaling s;
    s.mean.assign(ds.cols, 0.0);
    s.stddev.assign(ds.cols, 1.0);
    const auto ctx = ds.context_rows();
    for (std::size_t j = 0; j < ds.cols; ++j) {
      double sum = 0.0, sq = 0.0;
      std::size_t n = 0;
      for (std::size_t i : ctx) {
        if (!ds.is_observed(i, j)) continue;
        sum += ds.at(i, j);
        ++n;
      }
      if (n == 0) continue;
      const double mu = sum / static_cast<double>(n);
      for (std::size_t i : ctx)
        if (ds.is_observed(i, j)) sq += (ds.at(i, j) - mu) * (ds.at(i, j) - mu);
      const double sd = std::sqrt(sq / static_cast<double>(n));
      s.mean[j] = mu;
      s.stddev[j] = sd > 1e-12 ? sd : 1.0;
    }
    if (!ds.task.is_classification() && !ctx.empty()) {
      double sum = 0.0, sq = 0.0;
      for (std::size_t i : ctx) sum += ds.y[i];
      const double mu = sum / static_cast<double>(ctx.size());
      for (std::size_t i : ctx) sq += (ds.y[i] - mu) * (ds.y[i] - mu);
      const double sd = std::sqrt(sq / static_cast<double>(ctx.size()));
      s.y_mean = mu;
      s.y_std = sd > 1e-12 ? sd : 1.0;
    }
    return s;
  }

  TabularDataset apply(const TabularDataset& ds) const {
    TabularDataset out = ds;
    for (std::size_t i = 0; i < ds.rows; ++i)
      for (std::size_t j = 0; j < ds.cols; ++j)
        if (ds.is_observed(i, j))
          out.x[i * ds.cols + j] = (ds.at(i, j) - mean[j]) / stddev[j];
    if (!ds.task.is_classification())
      for (std::size_t i = 0; i < ds.rows; ++i)
        if (ds.y_observed[i]) out.y[i] = (ds.y[i] - y_mean) / y_std;
    return out;
  }

  double denormalize_y(double v) const { return v * y_std + y_mean; }
};

// ------------------------------------------------------------------- values

/// Embeds M scalar cells at once: observed -> value MLP, otherwise the mask
/// token (bitwise, independent of the hidden value). Result is [M, d].
inline Tensor embed_values(const std::vector<double>& values,
                           const std::vector<bool>& observed, const EmbedParams& p) {
  check(values.size() == observed.size(), ErrorKind::kDimension,
        "embed_values: values and flags differ in length");
  std::vector<double> input(values.size(), 0.0);
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (!observed[k]) continue;
    if (!std::isfinite(values[k]))
      fail(ErrorKind::kInput, "non-finite observed cell value");
    input[k] = values[k];
  }
  Tensor x(Shape{values.size(), 1}, std::move(input));
  return ops::select_rows(observed, p.value_mlp.apply(x), p.mask_token);
}

inline Tensor embed_value(double x, bool observed, const EmbedParams& p) {
  return ops::reshape(embed_values({x}, {observed}, p), {p.width()});
}

// --------------------------------------------------------------- identities

/// Samples the D x (d/4) basis of column identities. In strict mode D > d/4
/// is a rank error; otherwise such tables fall back to unit-norm Gaussian rows
/// and a warning is appended.
inline Tensor sample_identity_basis(std::size_t columns, std::size_t d, RngStream& rng,
                                    bool strict, std::vector<std::string>* warnings) {
  const std::size_t r = d / 4;
  if (columns <= r) return orthonormal_rows(columns, r, rng);
  if (strict) {
    fail(ErrorKind::kRank, std::to_string(columns) +
                               " columns exceed the identity subspace of size " +
                               std::to_string(r));
  }
  if (warnings) {
    warnings->push_back("identity basis: " + std::to_string(columns) +
                        " columns > d/4 = " + std::to_string(r) +
                        ", using near-orthogonal Gaussian rows");
  }
  return normalized_gaussian_rows(columns, r, rng);
}

/// loc^col = O W_dfe, [D, d].
inline Tensor column_identifiers(const Tensor& basis, const EmbedParams& p) {
  return ops::matmul(basis, p.w_dfe);
}

/// Fresh identities for this pass.
inline Tensor sdfe_identifiers(std::size_t columns, const EmbedParams& p, RngStream& rng,
                               bool strict = true,
                               std::vector<std::string>* warnings = nullptr) {
  return column_identifiers(sample_identity_basis(columns, p.width(), rng, strict, warnings),
                            p);
}

// -------------------------------------------------------------------- cells

/// X0[i, j] = LayerNorm(e_val[i, j] + loc[j]) with an explicit identity basis.
inline Tensor assemble_cells_with_basis(const TabularDataset& ds, const EmbedParams& p,
                                        const Tensor& basis) {
  const std::size_t d = p.width();
  Tensor values = embed_values(ds.x, ds.observed, p);
  Tensor cells = ops::reshape(values, {ds.rows, ds.cols, d});
  Tensor loc = column_identifiers(basis, p);
  return p.ln.apply(ops::add_leading(cells, loc));
}

inline Tensor assemble_cells(const TabularDataset& ds, const EmbedParams& p, RngStream& rng,
                             bool strict = true,
                             std::vector<std::string>* warnings = nullptr) {
  return assemble_cells_with_basis(
      ds, p, sample_identity_basis(ds.cols, p.width(), rng, strict, warnings));
}

/// Appends the label column: label MLP of y on context rows (class index as a
/// float for classification), the label mask token on query rows.
inline Tensor append_label_token(const Tensor& cells, const TabularDataset& ds,
                                 const EmbedParams& p) {
  check(cells.rank() == 3 && cells.dim(0) == ds.rows, ErrorKind::kDimension,
        "append_label_token: cells do not match the dataset");
  std::vector<double> labels(ds.rows, 0.0);
  for (std::size_t i = 0; i < ds.rows; ++i) {
    if (!ds.y_observed[i]) continue;
    if (!std::isfinite(ds.y[i])) fail(ErrorKind::kInput, "non-finite context label");
    labels[i] = ds.y[i];
  }
  Tensor lab = ops::select_rows(ds.y_observed,
                                p.label_mlp.apply(Tensor(Shape{ds.rows, 1}, std::move(labels))),
                                p.label_mask);
  return ops::concat_tokens(cells, ops::reshape(lab, {ds.rows, 1, p.width()}));
}

}  // namespace feat::embed
