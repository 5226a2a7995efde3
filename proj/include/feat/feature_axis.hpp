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

// Feature-axis block: per-row multi-head self-attention over the T tokens of
// one sample plus a GELU feed-forward, both pre-LN with residuals. Rows never
// attend to each other.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "feat/numerics.hpp"
#include "feat/params.hpp"

namespace feat::feature_axis {

namespace detail {

using feat::detail::Node;

// Scaled dot-product attention of one (row, head) pair. q/k/v point at the
// head's first element of token 0; tokens are `stride` apart.
inline void attend_head(const double* q, const double* k, const double* v, double* out,
                        double* probs, std::size_t t, std::size_t dh, std::size_t stride) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t a = 0; a < t; ++a) {
    double* p = probs + a * t;
    double mx = -INFINITY;
    for (std::size_t b = 0; b < t; ++b) {
      double s = 0.0;
      for (std::size_t c = 0; c < dh; ++c) s += q[a * stride + c] * k[b * stride + c];
      p[b] = s * scale;
      mx = std::max(mx, p[b]);
    }
    double z = 0.0;
    for (std::size_t b = 0; b < t; ++b) z += (p[b] = std::exp(p[b] - mx));
    for (std::size_t b = 0; b < t; ++b) p[b] /= z;
    if (!out) continue;
    for (std::size_t c = 0; c < dh; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < t; ++b) s += p[b] * v[b * stride + c];
      out[a * stride + c] = s;
    }
  }
}

}  // namespace detail

/// Fused attention over axis 1 of [R, T, d] q, k, v with `heads` heads of
/// width d / heads. Probabilities are recomputed in the backward pass.
inline Tensor row_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t heads) {
  check(q.rank() == 3 && q.shape() == k.shape() && q.shape() == v.shape(),
        ErrorKind::kDimension, "row_attention expects equal [R,T,d] operands");
  const std::size_t r = q.dim(0), t = q.dim(1), d = q.dim(2);
  check(heads >= 1 && d % heads == 0, ErrorKind::kDimension,
        "row_attention: width not divisible by heads");
  const std::size_t dh = d / heads;
  std::vector<double> out(q.numel());
  {
    const double* qv = q.data().data();
    const double* kv = k.data().data();
    const double* vv = v.data().data();
    parallel_for(r, [&](std::size_t b, std::size_t e) {
      std::vector<double> probs(t * t);
      for (std::size_t i = b; i < e; ++i)
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = i * t * d + h * dh;
          detail::attend_head(qv + off, kv + off, vv + off, out.data() + off, probs.data(), t,
                              dh, d);
        }
    });
  }
  return make_op(
      "row_attention", q.shape(), std::move(out), {q, k, v},
      [r, t, d, dh, heads](detail::Node& self) {
        auto& qn = *self.inputs[0];
        auto& kn = *self.inputs[1];
        auto& vn = *self.inputs[2];
        // Inputs without gradients write into throwaway buffers.
        std::vector<double> sq, sk, sv;
        auto target = [](detail::Node& n, std::vector<double>& scratch) -> std::vector<double>& {
          if (n.requires_grad) return n.grad_buffer();
          scratch.assign(n.value.size(), 0.0);
          return scratch;
        };
        std::vector<double>& gq = target(qn, sq);
        std::vector<double>& gk = target(kn, sk);
        std::vector<double>& gv = target(vn, sv);
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        parallel_for(r, [&](std::size_t b, std::size_t e) {
          std::vector<double> p(t * t), gp(t * t);
          for (std::size_t i = b; i < e; ++i)
            for (std::size_t h = 0; h < heads; ++h) {
              const std::size_t off = i * t * d + h * dh;
              const double* qv = qn.value.data() + off;
              const double* kv = kn.value.data() + off;
              const double* vv = vn.value.data() + off;
              const double* go = self.grad.data() + off;
              detail::attend_head(qv, kv, vv, nullptr, p.data(), t, dh, d);
              for (std::size_t a = 0; a < t; ++a) {
                double dot = 0.0;
                for (std::size_t c = 0; c < t; ++c) {
                  double s = 0.0;
                  for (std::size_t m = 0; m < dh; ++m) s += go[a * d + m] * vv[c * d + m];
                  gp[a * t + c] = s;
                  dot += s * p[a * t + c];
                }
                for (std::size_t c = 0; c < t; ++c)
                  gp[a * t + c] = p[a * t + c] * (gp[a * t + c] - dot) * scale;
              }
              for (std::size_t a = 0; a < t; ++a)
                for (std::size_t c = 0; c < t; ++c) {
                  const double pa = p[a * t + c], ga = gp[a * t + c];
                  for (std::size_t m = 0; m < dh; ++m) {
                    gv[off + c * d + m] += pa * go[a * d + m];
                    gq[off + a * d + m] += ga * kv[c * d + m];
                    gk[off + c * d + m] += ga * qv[a * d + m];
                  }
                }
            }
        });
      });
}

/// Attention probabilities [R, H, T, T] for inspection (no graph).
inline std::vector<double> attention_weights(const Tensor& q, const Tensor& k,
                                             std::size_t heads) {
  const std::size_t r = q.dim(0), t = q.dim(1), d = q.dim(2), dh = d / heads;
  std::vector<double> probs(r * heads * t * t);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = i * t * d + h * dh;
      detail::attend_head(q.data().data() + off, k.data().data() + off, nullptr, nullptr,
                          probs.data() + (i * heads + h) * t * t, t, dh, d);
    }
  return probs;
}

struct FeatureBlockParams {
  LayerNormParams ln_attn;
  Tensor wq, wk, wv, wo;  // [d, d]
  Tensor bo;              // [d]
  LayerNormParams ln_ffn;
  Tensor w1, b1;          // [d_ff, d], [d_ff]
  Tensor w2, b2;          // [d, d_ff], [d]
  std::size_t heads = 4;

  static FeatureBlockParams init(std::size_t d, std::size_t d_ff, std::size_t heads,
                                 RngStream& rng) {
    if (heads == 0 || d % heads != 0)
      throw ConfigError("heads", "width " + std::to_string(d) + " not divisible by heads");
    FeatureBlockParams p;
    p.ln_attn = LayerNormParams::identity(d);
    p.wq = xavier(d, d, rng);
    p.wk = xavier(d, d, rng);
    p.wv = xavier(d, d, rng);
    p.wo = xavier(d, d, rng);
    p.bo = Tensor::zeros({d});
    p.ln_ffn = LayerNormParams::identity(d);
    p.w1 = xavier(d_ff, d, rng);
    p.b1 = Tensor::zeros({d_ff});
    p.w2 = xavier(d, d_ff, rng);
    p.b2 = Tensor::zeros({d});
    p.heads = heads;
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    ln_attn.visit(prefix + ".ln_attn", fn);
    fn(prefix + ".wq", wq);
    fn(prefix + ".wk", wk);
    fn(prefix + ".wv", wv);
    fn(prefix + ".wo", wo);
    fn(prefix + ".bo", bo);
    ln_ffn.visit(prefix + ".ln_ffn", fn);
    fn(prefix + ".w1", w1);
    fn(prefix + ".b1", b1);
    fn(prefix + ".w2", w2);
    fn(prefix + ".b2", b2);
  }
};

/// Multi-head self-attention over the tokens of each row of [R, T, d].
inline Tensor mhsa(const Tensor& f, const FeatureBlockParams& p) {
  Tensor a = row_attention(ops::linear(f, p.wq), ops::linear(f, p.wk), ops::linear(f, p.wv),
                           p.heads);
  return ops::linear(a, p.wo, p.bo);
}

inline Tensor ffn(const Tensor& f, const FeatureBlockParams& p) {
  return ops::linear(ops::gelu(ops::linear(f, p.w1, p.b1)), p.w2, p.b2);
}

inline constexpr std::size_t kRowChunk = 1024;

/// F~ = F + MHSA(LN(F)); F^ = F~ + FFN(LN(F~)), row by row.
inline Tensor feature_block(const Tensor& cells, const FeatureBlockParams& p) {
  check(cells.rank() == 3, ErrorKind::kDimension, "feature_block expects [N,T,d]");
  auto body = [&p](const Tensor& x) {
    Tensor x1 = ops::add(x, mhsa(p.ln_attn.apply(x), p));
    return ops::add(x1, ffn(p.ln_ffn.apply(x1), p));
  };
  if (!grad_enabled()) return map_row_chunks(cells, kRowChunk, body);
  return body(cells);
}

}  // namespace feat::feature_axis
