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

// Sample-axis stack: per feature column, a sequence over the N rows.
//
//   AFBM      forward and backward diagonal SSM scans fused by a projection
//   Conv-GLA  depthwise smoothing conv, then an additive outer-product memory
//
// Every layer computes y = x + LayerNorm(f(x)). Tensors are [N, T, d]; the
// scans run along axis 0 independently for each token column t.

#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <functional>
#include <cmath>
#include <string>
#include <vector>

#include "feat/numerics.hpp"
#include "feat/params.hpp"

namespace feat::sample_axis {

namespace detail {
using feat::detail::Node;

inline std::vector<double>& grad_or(Node& n, std::vector<double>& scratch) {
  if (n.requires_grad) return n.grad_buffer();
  scratch.assign(n.value.size(), 0.0);
  return scratch;
}
}  // namespace detail

enum class Direction { kForward, kBackward };

// -------------------------------------------------------------- SSM scan

/// h_i = exp(dt_i * A) * h_prev + dt_i * u_i with h = 0 before the first step.
/// u: [N,T,s], dt: [N,T,1] (positive), a: [s] (negative). The backward
/// direction walks i = N-1 .. 0, so "prev" is i + 1.
inline Tensor ssm_scan(const Tensor& u, const Tensor& dt, const Tensor& a, Direction dir) {
  check(u.rank() == 3, ErrorKind::kDimension, "ssm_scan expects u as [N,T,s]");
  const std::size_t n = u.dim(0), t = u.dim(1), s = u.dim(2);
  require_shape(dt, {n, t, 1}, "ssm_scan dt");
  require_shape(a, {s}, "ssm_scan A");
  const bool rev = dir == Direction::kBackward;
  auto row = [n, rev](std::size_t step) { return rev ? n - 1 - step : step; };

  std::vector<double> h(u.numel());
  {
    const double* uv = u.data().data();
    const double* dv = dt.data().data();
    const double* av = a.data().data();
    parallel_for(t, [&](std::size_t b, std::size_t e) {
      for (std::size_t col = b; col < e; ++col) {
        const double* prev = nullptr;
        for (std::size_t step = 0; step < n; ++step) {
          const std::size_t i = row(step);
          const double delta = dv[i * t + col];
          const double* ui = uv + (i * t + col) * s;
          double* hi = h.data() + (i * t + col) * s;
          for (std::size_t c = 0; c < s; ++c)
            hi[c] = (prev ? std::exp(delta * av[c]) * prev[c] : 0.0) + delta * ui[c];
          prev = hi;
        }
      }
    });
  }
  return make_op(
      "ssm_scan", u.shape(), std::move(h), {u, dt, a},
      [n, t, s, row](detail::Node& self) {
        auto& un = *self.inputs[0];
        auto& dn = *self.inputs[1];
        auto& an = *self.inputs[2];
        std::vector<double> su, sd;
        auto& gu = detail::grad_or(un, su);
        auto& gd = detail::grad_or(dn, sd);
        std::vector<double> ga_cols(t * s, 0.0);
        const double* hv = self.value.data();
        parallel_for(t, [&](std::size_t b, std::size_t e) {
          std::vector<double> carry(s);
          for (std::size_t col = b; col < e; ++col) {
            std::fill(carry.begin(), carry.end(), 0.0);
            double* ga = ga_cols.data() + col * s;
            for (std::size_t step = n; step-- > 0;) {
              const std::size_t i = row(step);
              const std::size_t off = (i * t + col) * s;
              const double delta = dn.value[i * t + col];
              const double* hp = step > 0 ? hv + (row(step - 1) * t + col) * s : nullptr;
              double gdelta = 0.0;
              for (std::size_t c = 0; c < s; ++c) {
                const double cc = self.grad[off + c] + carry[c];
                const double decay = std::exp(delta * an.value[c]);
                const double hprev = hp ? hp[c] : 0.0;
                gu[off + c] += delta * cc;
                gdelta += cc * (un.value[off + c] + an.value[c] * decay * hprev);
                ga[c] += cc * delta * decay * hprev;
                carry[c] = decay * cc;
              }
              gd[i * t + col] += gdelta;
            }
          }
        });
        if (an.requires_grad) {
          auto& g = an.grad_buffer();
          for (std::size_t col = 0; col < t; ++col)
            for (std::size_t c = 0; c < s; ++c) g[c] += ga_cols[col * s + c];
        }
      });
}

// ------------------------------------------------------------------ AFBM

enum class ScanMode { kSelective, kTimeInvariant };

/// One scan direction: A = -exp(a_log), B-map w_b, step size
/// dt = softplus(w_dt x + b_dt) (selective) or softplus(b_dt) (time invariant).
struct ScanParams {
  Tensor a_log;  // [s]
  Tensor w_b;    // [s, d]
  Tensor w_dt;   // [1, d]
  Tensor b_dt;   // [1]

  static ScanParams init(std::size_t d, std::size_t s, RngStream& rng) {
    ScanParams p;
    std::vector<double> al(s);
    for (auto& v : al) v = std::log(rng.log_uniform(1e-2, 1.0));
    p.a_log = Tensor({s}, std::move(al));
    p.w_b = xavier(s, d, rng);
    p.w_dt = randn({1, d}, rng, 0.1 / std::sqrt(static_cast<double>(d)));
    const double dt0 = rng.log_uniform(1e-2, 1e-1);
    p.b_dt = Tensor({1}, {std::log(std::expm1(dt0))});
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".a_log", a_log);
    fn(prefix + ".w_b", w_b);
    fn(prefix + ".w_dt", w_dt);
    fn(prefix + ".b_dt", b_dt);
  }

  Tensor decay_rates() const { return ops::scale(ops::exp(a_log), -1.0); }

  Tensor step_sizes(const Tensor& x, ScanMode mode) const {
    if (mode == ScanMode::kSelective) return ops::softplus(ops::linear(x, w_dt, b_dt));
    Shape s = x.shape();
    s.back() = 1;
    return ops::expand(ops::softplus(b_dt), std::move(s));
  }

  /// States [N,T,s] of one direction over x [N,T,d].
  Tensor scan(const Tensor& x, ScanMode mode, Direction dir) const {
    return ssm_scan(ops::linear(x, w_b), step_sizes(x, mode), decay_rates(), dir);
  }
};

struct AfbmOptions {
  ScanMode mode = ScanMode::kSelective;
  bool tie_directions = false;
  bool bidirectional = true;
};

/// W_fuse [h_fwd | h_bwd] is stored as its two [d, s] halves plus a bias.
struct AfbmLayerParams {
  ScanParams fwd, bwd;
  Tensor out_fwd, out_bwd;  // [d, s]
  Tensor out_bias;          // [d]
  LayerNormParams ln;
  AfbmOptions opt;

  static AfbmLayerParams init(std::size_t d, std::size_t s, const AfbmOptions& opt,
                              RngStream& rng) {
    AfbmLayerParams p;
    p.opt = opt;
    p.fwd = ScanParams::init(d, s, rng);
    p.out_fwd = xavier(d, s, rng);
    if (opt.tie_directions) {
      p.bwd = p.fwd;
      p.out_bwd = p.out_fwd;
    } else {
      p.bwd = ScanParams::init(d, s, rng);
      p.out_bwd = xavier(d, s, rng);
    }
    p.out_bias = Tensor::zeros({d});
    p.ln = LayerNormParams::identity(d);
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    fwd.visit(prefix + ".fwd", fn);
    fn(prefix + ".out_fwd", out_fwd);
    if (!opt.tie_directions) {
      bwd.visit(prefix + ".bwd", fn);
      fn(prefix + ".out_bwd", out_bwd);
    }
    fn(prefix + ".out_bias", out_bias);
    ln.visit(prefix + ".ln", fn);
  }

  /// Re-links the backward half to the forward tensors after a load.
  void retie() {
    if (!opt.tie_directions) return;
    bwd = fwd;
    out_bwd = out_fwd;
  }
};

/// Single-column states of one direction over seq [N, d]: [N, s].
inline Tensor mamba_scan(const Tensor& seq, const ScanParams& p, ScanMode mode,
                         Direction dir) {
  check(seq.rank() == 2, ErrorKind::kDimension, "mamba_scan expects [N,d]");
  Tensor h = p.scan(ops::reshape(seq, {seq.dim(0), 1, seq.dim(1)}), mode, dir);
  return ops::reshape(h, {seq.dim(0), p.a_log.numel()});
}

/// Fused pre-norm output W_fuse [h_fwd | h_bwd] + b.
inline Tensor afbm_mix(const Tensor& x, const AfbmLayerParams& p) {
  Tensor f = ops::linear(p.fwd.scan(x, p.opt.mode, Direction::kForward), p.out_fwd);
  if (p.opt.bidirectional) {
    f = ops::add(f, ops::linear(p.bwd.scan(x, p.opt.mode, Direction::kBackward), p.out_bwd));
  }
  return ops::add_bias(f, p.out_bias);
}

inline Tensor afbm_layer(const Tensor& x, const AfbmLayerParams& p) {
  return ops::add(x, p.ln.apply(afbm_mix(x, p)));
}

// -------------------------------------------------------------- Conv-GLA

/// Depthwise conv along axis 0 of [N,T,d] with per-channel weights w [d,K]
/// over a centered window; rows past either edge repeat the edge row.
inline Tensor depthwise_conv(const Tensor& x, const Tensor& w) {
  check(x.rank() == 3, ErrorKind::kDimension, "depthwise_conv expects [N,T,d]");
  const std::size_t n = x.dim(0), t = x.dim(1), d = x.dim(2);
  check(w.rank() == 2 && w.dim(0) == d, ErrorKind::kDimension, "conv weights must be [d,K]");
  const std::size_t k = w.dim(1);
  check(k % 2 == 1, ErrorKind::kParameter, "conv kernel size must be odd");
  const long half = static_cast<long>(k / 2);
  auto src = [n, half](std::size_t i, std::size_t m) {
    long r = static_cast<long>(i) + static_cast<long>(m) - half;
    r = std::clamp(r, 0L, static_cast<long>(n) - 1);
    return static_cast<std::size_t>(r);
  };
  std::vector<double> out(x.numel(), 0.0);
  const double* xv = x.data().data();
  const double* wv = w.data().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t m = 0; m < k; ++m) {
      const std::size_t r = src(i, m);
      for (std::size_t col = 0; col < t; ++col) {
        const double* xi = xv + (r * t + col) * d;
        double* oi = out.data() + (i * t + col) * d;
        for (std::size_t c = 0; c < d; ++c) oi[c] += wv[c * k + m] * xi[c];
      }
    }
  return make_op("depthwise_conv", x.shape(), std::move(out), {x, w},
                 [n, t, d, k, src](detail::Node& self) {
                   auto& xn = *self.inputs[0];
                   auto& wn = *self.inputs[1];
                   std::vector<double> sx, sw;
                   auto& gx = detail::grad_or(xn, sx);
                   auto& gw = detail::grad_or(wn, sw);
                   for (std::size_t i = 0; i < n; ++i)
                     for (std::size_t m = 0; m < k; ++m) {
                       const std::size_t r = src(i, m);
                       for (std::size_t col = 0; col < t; ++col) {
                         const std::size_t go = (i * t + col) * d, gi = (r * t + col) * d;
                         for (std::size_t c = 0; c < d; ++c) {
                           gx[gi + c] += wn.value[c * k + m] * self.grad[go + c];
                           gw[c * k + m] += xn.value[gi + c] * self.grad[go + c];
                         }
                       }
                     }
                 });
}

/// phi(x) = x + 1 for x >= 0, exp(x) otherwise: positive and C^1.
inline double phi(double v) { return v >= 0.0 ? v + 1.0 : std::exp(v); }

inline Tensor phi(const Tensor& x) {
  return ops::detail::unary("phi", x, [](double v) { return phi(v); },
                            [](double v, double y) { return v >= 0.0 ? 1.0 : y; });
}

namespace detail {
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;
using CVec = Eigen::Map<const Eigen::VectorXd>;
using Vec = Eigen::Map<Eigen::VectorXd>;

inline CVec cvec(const double* p, std::size_t d) {
  return CVec(p, static_cast<Eigen::Index>(d));
}
inline Vec vec(double* p, std::size_t d) { return Vec(p, static_cast<Eigen::Index>(d)); }
}  // namespace detail

/// Final memories S_N for each column: [T, d, d], S[a][b] at (col * d + a) * d + b.
inline std::vector<double> gla_memory(const Tensor& pk, const Tensor& z) {
  const std::size_t n = pk.dim(0), t = pk.dim(1), d = pk.dim(2);
  std::vector<double> out(t * d * d);
  parallel_for(t, [&](std::size_t b, std::size_t e) {
    detail::Mat s(d, d);
    for (std::size_t col = b; col < e; ++col) {
      s.setZero();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = (i * t + col) * d;
        s.noalias() += detail::cvec(pk.data().data() + off, d) *
                       detail::cvec(z.data().data() + off, d).transpose();
      }
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t c = 0; c < d; ++c) out[(col * d + a) * d + c] = s(a, c);
    }
  });
  return out;
}

/// S_i = S_{i-1} + pk_i z_i^T, o_i = S_i^T pq_i, over axis 0 of [N,T,d].
inline Tensor gla_scan(const Tensor& pk, const Tensor& z, const Tensor& pq) {
  check(pk.rank() == 3 && pk.shape() == z.shape() && pk.shape() == pq.shape(),
        ErrorKind::kDimension, "gla_scan expects equal [N,T,d] operands");
  const std::size_t n = pk.dim(0), t = pk.dim(1), d = pk.dim(2);
  std::vector<double> out(pk.numel());
  std::vector<double> final_s(t * d * d);
  parallel_for(t, [&](std::size_t b, std::size_t e) {
    detail::Mat s(d, d);
    for (std::size_t col = b; col < e; ++col) {
      s.setZero();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = (i * t + col) * d;
        s.noalias() += detail::cvec(pk.data().data() + off, d) *
                       detail::cvec(z.data().data() + off, d).transpose();
        detail::vec(out.data() + off, d).noalias() =
            s.transpose() * detail::cvec(pq.data().data() + off, d);
      }
      std::copy_n(s.data(), d * d, final_s.begin() + col * d * d);
    }
  });
  if (!grad_enabled()) final_s.clear();
  return make_op(
      "gla_scan", pk.shape(), std::move(out), {pk, z, pq},
      [n, t, d, final_s = std::move(final_s)](detail::Node& self) {
        auto& kn = *self.inputs[0];
        auto& zn = *self.inputs[1];
        auto& qn = *self.inputs[2];
        std::vector<double> sk, sz, sq;
        auto& gk = detail::grad_or(kn, sk);
        auto& gz = detail::grad_or(zn, sz);
        auto& gq = detail::grad_or(qn, sq);
        parallel_for(t, [&](std::size_t b, std::size_t e) {
          detail::Mat s(d, d), g(d, d);
          for (std::size_t col = b; col < e; ++col) {
            // S_N snapshot, downdated step by step on the way back.
            s = Eigen::Map<const detail::Mat>(final_s.data() + col * d * d,
                                              static_cast<Eigen::Index>(d),
                                              static_cast<Eigen::Index>(d));
            g.setZero();
            for (std::size_t i = n; i-- > 0;) {
              const std::size_t off = (i * t + col) * d;
              auto ki = detail::cvec(kn.value.data() + off, d);
              auto zi = detail::cvec(zn.value.data() + off, d);
              auto qi = detail::cvec(qn.value.data() + off, d);
              auto go = detail::cvec(self.grad.data() + off, d);
              g.noalias() += qi * go.transpose();
              detail::vec(gq.data() + off, d).noalias() += s * go;
              detail::vec(gk.data() + off, d).noalias() += g * zi;
              detail::vec(gz.data() + off, d).noalias() += g.transpose() * ki;
              s.noalias() -= ki * zi.transpose();
            }
          }
        });
      });
}

struct ConvGlaParams {
  Tensor kernel_logits;  // [d, K]
  Tensor w_k, w_v, w_g, w_q;  // [d, d]
  LayerNormParams ln;

  static ConvGlaParams init(std::size_t d, std::size_t k, RngStream& rng) {
    if (k % 2 == 0) throw ConfigError("K", "conv kernel size must be odd");
    ConvGlaParams p;
    p.kernel_logits = randn({d, k}, rng, 0.1);
    p.w_k = xavier(d, d, rng);
    p.w_v = xavier(d, d, rng);
    p.w_g = xavier(d, d, rng);
    p.w_q = xavier(d, d, rng);
    p.ln = LayerNormParams::identity(d);
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".kernel_logits", kernel_logits);
    fn(prefix + ".w_k", w_k);
    fn(prefix + ".w_v", w_v);
    fn(prefix + ".w_g", w_g);
    fn(prefix + ".w_q", w_q);
    ln.visit(prefix + ".ln", fn);
  }

  Tensor kernel() const { return ops::softmax(kernel_logits); }
};

/// Smoothing conv of a single column [N, d].
inline Tensor conv1d_sample_axis(const Tensor& seq, const ConvGlaParams& p) {
  check(seq.rank() == 2, ErrorKind::kDimension, "conv1d_sample_axis expects [N,d]");
  return ops::reshape(
      depthwise_conv(ops::reshape(seq, {seq.dim(0), 1, seq.dim(1)}), p.kernel()), seq.shape());
}

/// Gate/value/key/query projections of the smoothed input.
struct GlaInputs {
  Tensor pk, z, pq;
};

inline GlaInputs gla_inputs(const Tensor& smoothed, const ConvGlaParams& p) {
  Tensor g = ops::silu(ops::linear(smoothed, p.w_g));
  Tensor v = ops::linear(smoothed, p.w_v);
  return {phi(ops::linear(smoothed, p.w_k)), ops::mul(g, v),
          phi(ops::linear(smoothed, p.w_q))};
}

inline Tensor conv_gla_layer(const Tensor& x, const ConvGlaParams& p) {
  GlaInputs in = gla_inputs(depthwise_conv(x, p.kernel()), p);
  return ops::add(x, p.ln.apply(gla_scan(in.pk, in.z, in.pq)));
}

// --------------------------------------------------------------- the block

struct SampleBlockParams {
  std::vector<AfbmLayerParams> afbm;
  ConvGlaParams gla;

  static SampleBlockParams init(std::size_t d, std::size_t s, std::size_t k,
                                std::size_t afbm_layers, const AfbmOptions& opt,
                                RngStream& rng) {
    SampleBlockParams p;
    for (std::size_t l = 0; l < afbm_layers; ++l)
      p.afbm.push_back(AfbmLayerParams::init(d, s, opt, rng));
    p.gla = ConvGlaParams::init(d, k, rng);
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    for (std::size_t l = 0; l < afbm.size(); ++l)
      afbm[l].visit(prefix + ".afbm" + std::to_string(l), fn);
    gla.visit(prefix + ".gla", fn);
  }

  void retie() {
    for (auto& a : afbm) a.retie();
  }
};

inline constexpr std::size_t kTokenChunk = 4;

inline Tensor sample_axis_block(const Tensor& cells, const SampleBlockParams& p) {
  check(cells.rank() == 3, ErrorKind::kDimension, "sample_axis_block expects [N,T,d]");
  auto body = [&p](const Tensor& x) {
    Tensor h = x;
    for (const auto& layer : p.afbm) h = afbm_layer(h, layer);
    return conv_gla_layer(h, p.gla);
  };
  if (!grad_enabled())
    return map_token_chunks(cells, std::max(kTokenChunk, num_threads()), body);
  return body(cells);
}

// -------------------------------------------------------------- influence

/// Frobenius norms ||d y[i,j,:] / d x[k,j,:]|| for every k, for a layer
/// function y = fn(x) on [N,T,d]. Uses d reverse sweeps over one graph.
inline std::vector<double> influence_profile(const std::function<Tensor(const Tensor&)>& fn,
                                             const Tensor& cells, std::size_t i,
                                             std::size_t j) {
  check(cells.rank() == 3 && i < cells.dim(0) && j < cells.dim(1), ErrorKind::kDimension,
        "influence_profile: index out of range");
  const std::size_t n = cells.dim(0), t = cells.dim(1), d = cells.dim(2);
  Tensor x = cells.detach();
  x.set_requires_grad(true);
  Tensor y = fn(x);
  std::vector<double> sq(n, 0.0);
  for (std::size_t c = 0; c < d; ++c) {
    std::vector<double> sel(y.numel(), 0.0);
    sel[(i * t + j) * d + c] = 1.0;
    x.zero_grad();
    ops::sum(ops::mul(y, Tensor(y.shape(), std::move(sel)))).backward();
    const auto g = x.grad();
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t e = 0; e < d; ++e) sq[k] += g[(k * t + j) * d + e] * g[(k * t + j) * d + e];
  }
  for (auto& v : sq) v = std::sqrt(v);
  return sq;
}

inline double influence_norm(const std::function<Tensor(const Tensor&)>& fn,
                             const Tensor& cells, std::size_t i, std::size_t k,
                             std::size_t j) {
  return influence_profile(fn, cells, i, j).at(k);
}

}  // namespace feat::sample_axis
