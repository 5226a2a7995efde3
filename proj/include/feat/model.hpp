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

// Full network: embedding, L dual-axis blocks, prediction heads. Also the
// analytic FLOP counter.

#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "feat/dataset.hpp"
#include "feat/json_util.hpp"
#include "feat/embed.hpp"
#include "feat/feature_axis.hpp"
#include "feat/numerics.hpp"
#include "feat/params.hpp"
#include "feat/sample_axis.hpp"
#include "json.hpp"

namespace feat::model {

using nlohmann::json;

// Stream ids derived from the config seed.
inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kFrozenSdfeStream = 2;
inline constexpr std::size_t kEmbedChunk = 1024;  // rows per inference block

struct ModelConfig {
  std::size_t L = 4;
  std::size_t d = 64;
  std::size_t d_state = 16;
  std::size_t d_hidden = 0;  // 0: 2 d
  std::size_t d_ff = 0;      // 0: 4 d
  std::size_t heads = 4;
  std::size_t K = 5;
  std::size_t C_max = 10;
  std::size_t feature_subblocks = 2;
  std::size_t afbm_layers = 3;
  std::uint64_t seed = 0;
  bool selective = true;
  bool tie_directions = false;
  bool bidirectional = true;
  bool freeze_sdfe = false;
  bool strict_sdfe = false;

  std::size_t hidden() const { return d_hidden ? d_hidden : 2 * d; }
  std::size_t ff() const { return d_ff ? d_ff : 4 * d; }

  sample_axis::AfbmOptions afbm_options() const {
    sample_axis::AfbmOptions o;
    o.mode = selective ? sample_axis::ScanMode::kSelective
                       : sample_axis::ScanMode::kTimeInvariant;
    o.tie_directions = tie_directions;
    o.bidirectional = bidirectional;
    return o;
  }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v < 1) throw ConfigError(name, "must be >= 1");
    };
    positive(L, "L");
    positive(d, "d");
    positive(d_state, "d_state");
    positive(heads, "heads");
    positive(K, "K");
    positive(afbm_layers, "afbm_layers");
    if (d % 4 != 0) throw ConfigError("d", "must be divisible by 4");
    if (d % heads != 0) throw ConfigError("heads", "must divide d");
    if (K % 2 == 0) throw ConfigError("K", "must be odd");
    if (C_max < 2) throw ConfigError("C_max", "must be >= 2");
    if (feature_subblocks < 1 || feature_subblocks > 2)
      throw ConfigError("feature_subblocks", "must be 1 or 2");
  }

  json to_json() const {
    return json{{"L", L},
                {"d", d},
                {"d_state", d_state},
                {"d_hidden", hidden()},
                {"d_ff", ff()},
                {"heads", heads},
                {"K", K},
                {"C_max", C_max},
                {"feature_subblocks", feature_subblocks},
                {"afbm_layers", afbm_layers},
                {"seed", seed},
                {"selective", selective},
                {"tie_directions", tie_directions},
                {"bidirectional", bidirectional},
                {"freeze_sdfe", freeze_sdfe},
                {"strict_sdfe", strict_sdfe}};
  }

  /// Fields absent from j keep their defaults; unknown fields are rejected.
  static ModelConfig from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("model", "expected a JSON object");
    ModelConfig c;
    for (const auto& [key, value] : j.items()) {
      try {
        if (key == "L") c.L = json_uint(value);
        else if (key == "d") c.d = json_uint(value);
        else if (key == "d_state") c.d_state = json_uint(value);
        else if (key == "d_hidden") c.d_hidden = json_uint(value);
        else if (key == "d_ff") c.d_ff = json_uint(value);
        else if (key == "heads") c.heads = json_uint(value);
        else if (key == "K") c.K = json_uint(value);
        else if (key == "C_max") c.C_max = json_uint(value);
        else if (key == "feature_subblocks") c.feature_subblocks = json_uint(value);
        else if (key == "afbm_layers") c.afbm_layers = json_uint(value);
        else if (key == "seed") c.seed = json_uint<std::uint64_t>(value);
        else if (key == "selective") c.selective = value.get<bool>();
        else if (key == "tie_directions") c.tie_directions = value.get<bool>();
        else if (key == "bidirectional") c.bidirectional = value.get<bool>();
        else if (key == "freeze_sdfe") c.freeze_sdfe = value.get<bool>();
        else if (key == "strict_sdfe") c.strict_sdfe = value.get<bool>();
        else throw ConfigError(key, "unknown field");
      } catch (const json::exception& e) {
        throw ConfigError(key, e.what());
      }
    }
    c.validate();
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

// ------------------------------------------------------------------- heads

/// W2 GELU(W1 z): classification over C_max logits.
struct ClassHead {
  Tensor w1, b1, w2, b2;

  static ClassHead init(std::size_t d, std::size_t h, std::size_t c, RngStream& rng) {
    return {xavier(h, d, rng), Tensor::zeros({h}), xavier(c, h, rng), Tensor::zeros({c})};
  }

  /// z: [M, d] -> logits [M, classes].
  Tensor logits(const Tensor& z, std::size_t classes) const {
    check(classes >= 1 && classes <= w2.dim(0), ErrorKind::kConfig,
          "class count exceeds the head size");
    return ops::linear(ops::gelu(ops::linear(z, w1, b1)), ops::slice_rows(w2, 0, classes),
                       ops::slice_rows(b2, 0, classes));
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".w1", w1);
    fn(prefix + ".b1", b1);
    fn(prefix + ".w2", w2);
    fn(prefix + ".b2", b2);
  }
};

/// W2 GELU(LN(W1 z)): a bounded scalar regressor (targets and imputations).
struct ScalarHead {
  Tensor w1, b1;
  LayerNormParams ln;
  Tensor w2, b2;

  static ScalarHead init(std::size_t d, std::size_t h, RngStream& rng) {
    return {xavier(h, d, rng), Tensor::zeros({h}), LayerNormParams::identity(h),
            xavier(1, h, rng), Tensor::zeros({1})};
  }

  /// z: [..., d] -> [...] (trailing unit axis dropped).
  Tensor apply(const Tensor& z) const {
    Tensor out = ops::linear(ops::gelu(ln.apply(ops::linear(z, w1, b1))), w2, b2);
    Shape s = z.shape();
    s.pop_back();
    return ops::reshape(out, std::move(s));
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".w1", w1);
    fn(prefix + ".b1", b1);
    ln.visit(prefix + ".ln", fn);
    fn(prefix + ".w2", w2);
    fn(prefix + ".b2", b2);
  }
};

inline Tensor class_probabilities(const Tensor& logits) { return ops::softmax(logits); }

// ------------------------------------------------------------------ params

struct BlockParams {
  std::vector<feature_axis::FeatureBlockParams> feature;
  sample_axis::SampleBlockParams sample;
};

struct ModelParams {
  embed::EmbedParams embed;
  std::vector<BlockParams> blocks;
  ClassHead cls;
  ScalarHead reg;
  ScalarHead imp;

  static ModelParams init(const ModelConfig& cfg) {
    cfg.validate();
    RngStream rng(cfg.seed, kInitStream);
    ModelParams p;
    p.embed = embed::EmbedParams::init(cfg.d, cfg.hidden(), rng);
    for (std::size_t l = 0; l < cfg.L; ++l) {
      BlockParams b;
      for (std::size_t f = 0; f < cfg.feature_subblocks; ++f)
        b.feature.push_back(
            feature_axis::FeatureBlockParams::init(cfg.d, cfg.ff(), cfg.heads, rng));
      b.sample = sample_axis::SampleBlockParams::init(cfg.d, cfg.d_state, cfg.K,
                                                      cfg.afbm_layers, cfg.afbm_options(), rng);
      p.blocks.push_back(std::move(b));
    }
    p.cls = ClassHead::init(cfg.d, cfg.hidden(), cfg.C_max, rng);
    p.reg = ScalarHead::init(cfg.d, cfg.hidden(), rng);
    p.imp = ScalarHead::init(cfg.d, cfg.hidden(), rng);
    return p;
  }

  /// Every parameter tensor once, in checkpoint order.
  void visit(const ParamVisitor& fn) {
    embed.visit("embed", fn);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const std::string pre = "block" + std::to_string(l);
      for (std::size_t f = 0; f < blocks[l].feature.size(); ++f)
        blocks[l].feature[f].visit(pre + ".feature" + std::to_string(f), fn);
      blocks[l].sample.visit(pre + ".sample", fn);
    }
    cls.visit("head.cls", fn);
    reg.visit("head.reg", fn);
    imp.visit("head.imp", fn);
  }

  void retie() {
    for (auto& b : blocks) b.sample.retie();
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    visit([&n](const std::string&, Tensor& t) { n += t.numel(); });
    return n;
  }
};

// ----------------------------------------------------------------- forward

struct ForwardResult {
  std::vector<std::size_t> order;  // order[r] = original row at internal position r
  std::size_t context = 0;         // internal rows [0, context) are context rows
  embed::Scaling scaling;
  Tensor logits;       // [N_U, C] for classification
  Tensor regression;   // [N_U], normalized label space
  Tensor imputation;   // [N, D], normalized feature space, internal order
  Tensor cells;        // [N, D+1, d]
  std::vector<std::string> warnings;

  /// Query-row regression predictions in the original label units.
  std::vector<double> regression_values() const {
    std::vector<double> out;
    for (double v : regression.data()) out.push_back(scaling.denormalize_y(v));
    return out;
  }

  /// Original row index of the u-th query prediction.
  std::size_t query_row(std::size_t u) const { return order.at(context + u); }
};

/// Context rows first (in their original relative order), then query rows.
inline std::vector<std::size_t> context_first_order(const TabularDataset& ds) {
  auto order = ds.context_rows();
  auto q = ds.query_rows();
  order.insert(order.end(), q.begin(), q.end());
  return order;
}

/// Encoder only: [N, D+1, d] final cells for a dataset already in internal
/// order and already normalized.
inline Tensor encode(const TabularDataset& ds, const ModelConfig& cfg, const ModelParams& p,
                     RngStream& rng, std::vector<std::string>* warnings) {
  Tensor basis;
  if (cfg.freeze_sdfe) {
    RngStream frozen(cfg.seed, kFrozenSdfeStream);
    basis = embed::sample_identity_basis(ds.cols, cfg.d, frozen, cfg.strict_sdfe, warnings);
  } else {
    basis = embed::sample_identity_basis(ds.cols, cfg.d, rng, cfg.strict_sdfe, warnings);
  }
  auto embed_rows = [&](const TabularDataset& part) {
    return embed::append_label_token(embed::assemble_cells_with_basis(part, p.embed, basis), part,
                                     p.embed);
  };
  Tensor x;
  if (grad_enabled() || ds.rows <= kEmbedChunk) {
    x = embed_rows(ds);
  } else {
    // Embedding is row-local, so blocks of rows bound the MLP intermediates.
    x = map_row_blocks(ds.rows, kEmbedChunk, [&](std::size_t b, std::size_t e) {
      std::vector<std::size_t> idx(e - b);
      std::iota(idx.begin(), idx.end(), b);
      return embed_rows(ds.permuted_rows(idx));
    });
  }
  for (const auto& block : p.blocks) {
    for (const auto& f : block.feature) x = feature_axis::feature_block(x, f);
    x = sample_axis::sample_axis_block(x, block.sample);
  }
  return x;
}

inline ForwardResult forward(const TabularDataset& ds, const ModelConfig& cfg,
                             const ModelParams& p, RngStream& rng) {
  ds.validate();
  if (ds.task.is_classification() && ds.task.classes > cfg.C_max)
    throw ConfigError("C_max", std::to_string(ds.task.classes) + " classes exceed C_max = " +
                                   std::to_string(cfg.C_max));
  ForwardResult r;
  r.order = context_first_order(ds);
  r.context = ds.context_rows().size();
  if (r.context == 0) fail(ErrorKind::kUsage, "dataset has no context rows");
  TabularDataset internal = ds.permuted_rows(r.order);
  r.scaling = embed::Scaling::fit(internal);
  internal = r.scaling.apply(internal);

  const std::size_t n = ds.rows, dcols = ds.cols, d = cfg.d;
  r.cells = encode(internal, cfg, p, rng, &r.warnings);

  const std::size_t nq = n - r.context;
  Tensor zy = ops::reshape(
      ops::slice_tokens(ops::slice_rows(r.cells, r.context, n), dcols, dcols + 1), {nq, d});
  if (ds.task.is_classification()) {
    r.logits = p.cls.logits(zy, ds.task.classes);
  } else {
    r.regression = p.reg.apply(zy);
  }
  if (grad_enabled() || n <= kEmbedChunk) {
    r.imputation = p.imp.apply(ops::slice_tokens(r.cells, 0, dcols));
  } else {
    r.imputation = map_row_blocks(n, kEmbedChunk, [&](std::size_t b, std::size_t e) {
      return p.imp.apply(ops::slice_tokens(ops::slice_rows(r.cells, b, e), 0, dcols));
    });
  }
  return r;
}

// ------------------------------------------------------------------- FLOPs

/// Multiply-adds count as 2. Elementwise activations, LayerNorm and softmax
/// are charged a fixed small cost per element (kAct, kNorm).
struct FlopBreakdown {
  std::uint64_t embed = 0;
  std::uint64_t sdfe = 0;  // the only term independent of N
  std::uint64_t feature_axis = 0;
  std::uint64_t afbm = 0;
  std::uint64_t conv = 0;
  std::uint64_t gla = 0;
  std::uint64_t heads = 0;

  std::uint64_t sample_axis() const { return afbm + conv + gla; }
  std::uint64_t total() const { return embed + sdfe + feature_axis + sample_axis() + heads; }
  std::uint64_t per_sample_total() const { return total() - sdfe; }
};

inline FlopBreakdown flop_count(const ModelConfig& cfg, std::uint64_t n, std::uint64_t dcols) {
  constexpr std::uint64_t kAct = 8, kNorm = 8;
  const std::uint64_t d = cfg.d, h = cfg.hidden(), s = cfg.d_state, k = cfg.K,
                      ff = cfg.ff(), t = dcols + 1, dirs = cfg.bidirectional ? 2 : 1;
  FlopBreakdown f;
  // Scalar MLP 1 -> h -> d plus identity add and LayerNorm, per token.
  const std::uint64_t mlp = 2 * h + kAct * h + 2 * h * d;
  f.embed = n * t * mlp + n * dcols * (d + kNorm * d);
  f.sdfe = dcols * 2 * (d / 4) * d;
  // Per row: Q, K, V, O projections; T x T scores and mixing; FFN; two LN.
  const std::uint64_t attn = 4 * 2 * t * d * d + 2 * 2 * t * t * d + kAct * cfg.heads * t * t;
  const std::uint64_t ffn = 2 * 2 * t * d * ff + kAct * t * ff;
  const std::uint64_t feat_row = attn + ffn + 2 * kNorm * t * d + 2 * t * d;
  f.feature_axis = cfg.L * cfg.feature_subblocks * n * feat_row;
  // Per token and direction: B map, step size, scan update, output map.
  const std::uint64_t dir_cost = 2 * d * s + 2 * d + kAct + 4 * s + 2 * s * d;
  const std::uint64_t afbm_tok = dirs * dir_cost + kNorm * d + 2 * d;
  f.afbm = cfg.L * cfg.afbm_layers * n * t * afbm_tok;
  f.conv = cfg.L * n * t * 2 * d * k;
  // Four projections, rank-1 update and readout of the d x d memory.
  const std::uint64_t gla_tok = 4 * 2 * d * d + 2 * d * d + 2 * d * d + 3 * kAct * d + kNorm * d;
  f.gla = cfg.L * n * t * gla_tok;
  // Label head on every row (upper bound) and imputation on every cell.
  const std::uint64_t scalar_head = 2 * d * h + kNorm * h + kAct * h + 2 * h;
  f.heads = n * (2 * d * h + kAct * h + 2 * h * cfg.C_max) + n * dcols * scalar_head;
  return f;
}

}  // namespace feat::model
