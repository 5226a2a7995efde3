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

// Synthetic tables from a random structural causal model:
//
//   (i)   DAG grown by preferential attachment
//   (ii)  root columns as Dirichlet mixtures of Gaussian prototypes
//   (iii) derived columns = random 2-layer map of parents + heteroscedastic noise
//   (iv)  labels from a sparse teacher MLP, then a Kumaraswamy marginal warp

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "feat/dataset.hpp"
#include "feat/json_util.hpp"
#include "feat/numerics.hpp"
#include "json.hpp"

namespace feat::scm {

using nlohmann::json;

enum class Activation { kTanh, kGelu };

inline const char* to_string(Activation a) { return a == Activation::kTanh ? "tanh" : "gelu"; }

inline double activate(Activation a, double v) {
  return a == Activation::kTanh ? std::tanh(v) : ops::gelu(v);
}

enum class WarpColumns { kAll, kRoots, kDerived };

struct ScmGenConfig {
  std::size_t D = 8;
  std::size_t D_root = 2;
  std::size_t N = 256;
  std::size_t M = 4;
  std::vector<double> alpha = {1.0};  // one value is broadcast to all M prototypes
  std::size_t m_attach = 2;
  bool uniform_attachment = false;    // control graph for hub statistics
  std::size_t mech_hidden = 8;
  double sigma = 0.1;
  double gamma = 0.5;
  bool zscore = true;
  Task task{TaskType::kClassification, 2};
  double snr_min = 2.0;
  double snr_max = 20.0;
  bool linear_teacher = false;
  std::size_t teacher_hidden = 16;
  double teacher_density = 0.25;
  bool warp = true;
  WarpColumns warp_columns = WarpColumns::kAll;
  double warp_a_min = 0.3, warp_a_max = 1.0;
  double warp_b_min = 1.0, warp_b_max = 5.0;
  double missing_rate = 0.0;
  double query_fraction = 0.0;
  std::uint64_t seed = 0;

  std::vector<double> alpha_vector() const {
    if (alpha.size() == 1) return std::vector<double>(M, alpha[0]);
    return alpha;
  }

  void validate() const {
    if (D < 1) throw ConfigError("D", "must be >= 1");
    if (D_root < 1 || D_root > D) throw ConfigError("D_root", "must lie in [1, D]");
    if (N < 1) throw ConfigError("N", "must be >= 1");
    if (M < 1) throw ConfigError("M", "must be >= 1");
    if (alpha.size() != 1 && alpha.size() != M)
      throw ConfigError("alpha", "needs 1 or M entries");
    for (double a : alpha)
      if (!(a > 0.0)) throw ConfigError("alpha", "entries must be positive");
    if (D > D_root && m_attach < 1) throw ConfigError("m_attach", "must be >= 1");
    if (mech_hidden < 1) throw ConfigError("mech_hidden", "must be >= 1");
    if (!(sigma >= 0.0)) throw ConfigError("sigma", "must be non-negative");
    if (!(gamma >= 0.0)) throw ConfigError("gamma", "must be non-negative");
    if (!(snr_min > 0.0) || !(snr_max >= snr_min))
      throw ConfigError("snr_range", "must be a positive interval");
    if (task.is_classification() && task.classes < 2)
      throw ConfigError("classes", "must be >= 2");
    if (!(teacher_density > 0.0 && teacher_density <= 1.0))
      throw ConfigError("teacher_density", "must lie in (0, 1]");
    if (!(warp_a_min > 0.0 && warp_a_max >= warp_a_min))
      throw ConfigError("warp_a_range", "must be a positive interval");
    if (!(warp_b_min > 0.0 && warp_b_max >= warp_b_min))
      throw ConfigError("warp_b_range", "must be a positive interval");
    if (!(missing_rate >= 0.0 && missing_rate < 1.0))
      throw ConfigError("missing_rate", "must lie in [0, 1)");
    if (!(query_fraction >= 0.0 && query_fraction < 1.0))
      throw ConfigError("query_fraction", "must lie in [0, 1)");
  }

  json to_json() const {
    const char* wc = warp_columns == WarpColumns::kAll     ? "all"
                     : warp_columns == WarpColumns::kRoots ? "roots"
                                                           : "derived";
    return json{{"D", D},
                {"D_root", D_root},
                {"N", N},
                {"M", M},
                {"alpha", alpha},
                {"m_attach", m_attach},
                {"uniform_attachment", uniform_attachment},
                {"mech_hidden", mech_hidden},
                {"sigma", sigma},
                {"gamma", gamma},
                {"zscore", zscore},
                {"task", task.is_classification() ? "classification" : "regression"},
                {"classes", task.classes},
                {"snr_range", {snr_min, snr_max}},
                {"linear_teacher", linear_teacher},
                {"teacher_hidden", teacher_hidden},
                {"teacher_density", teacher_density},
                {"warp", warp},
                {"warp_columns", wc},
                {"warp_a_range", {warp_a_min, warp_a_max}},
                {"warp_b_range", {warp_b_min, warp_b_max}},
                {"missing_rate", missing_rate},
                {"query_fraction", query_fraction},
                {"seed", seed}};
  }

  static ScmGenConfig from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("generator", "expected a JSON object");
    ScmGenConfig c;
    auto range = [](const json& v, double& lo, double& hi) {
      if (!v.is_array() || v.size() != 2) throw json::type_error::create(302, "expected [lo, hi]", &v);
      lo = v[0].get<double>();
      hi = v[1].get<double>();
    };
    for (const auto& [key, v] : j.items()) {
      try {
        if (key == "D") c.D = json_uint(v);
        else if (key == "D_root") c.D_root = json_uint(v);
        else if (key == "N") c.N = json_uint(v);
        else if (key == "M") c.M = json_uint(v);
        else if (key == "alpha") c.alpha = v.is_array() ? v.get<std::vector<double>>()
                                                        : std::vector<double>{v.get<double>()};
        else if (key == "m_attach") c.m_attach = json_uint(v);
        else if (key == "uniform_attachment") c.uniform_attachment = v.get<bool>();
        else if (key == "mech_hidden") c.mech_hidden = json_uint(v);
        else if (key == "sigma") c.sigma = v.get<double>();
        else if (key == "gamma") c.gamma = v.get<double>();
        else if (key == "zscore") c.zscore = v.get<bool>();
        else if (key == "task") {
          const auto s = v.get<std::string>();
          if (s == "classification") c.task.type = TaskType::kClassification;
          else if (s == "regression") c.task.type = TaskType::kRegression;
          else throw ConfigError("task", "must be classification or regression");
        } else if (key == "classes") c.task.classes = json_uint(v);
        else if (key == "snr_range") range(v, c.snr_min, c.snr_max);
        else if (key == "linear_teacher") c.linear_teacher = v.get<bool>();
        else if (key == "teacher_hidden") c.teacher_hidden = json_uint(v);
        else if (key == "teacher_density") c.teacher_density = v.get<double>();
        else if (key == "warp") c.warp = v.get<bool>();
        else if (key == "warp_columns") {
          const auto s = v.get<std::string>();
          if (s == "all") c.warp_columns = WarpColumns::kAll;
          else if (s == "roots") c.warp_columns = WarpColumns::kRoots;
          else if (s == "derived") c.warp_columns = WarpColumns::kDerived;
          else throw ConfigError("warp_columns", "must be all, roots or derived");
        } else if (key == "warp_a_range") range(v, c.warp_a_min, c.warp_a_max);
        else if (key == "warp_b_range") range(v, c.warp_b_min, c.warp_b_max);
        else if (key == "missing_rate") c.missing_rate = v.get<double>();
        else if (key == "query_fraction") c.query_fraction = v.get<double>();
        else if (key == "seed") c.seed = json_uint<std::uint64_t>(v);
        else throw ConfigError(key, "unknown field");
      } catch (const json::exception& e) {
        throw ConfigError(key, e.what());
      }
    }
    c.validate();
    return c;
  }
};

// -------------------------------------------------------------------- graph

/// x~ = w2 . act(W1 x_parents + b1) + b2.
struct Mechanism {
  std::vector<double> w1;  // [hidden, parents]
  std::vector<double> b1;  // [hidden]
  std::vector<double> w2;  // [hidden]
  double b2 = 0.0;
  Activation act = Activation::kTanh;

  double apply(const double* parents, std::size_t n_parents) const {
    const std::size_t h = b1.size();
    double out = b2;
    for (std::size_t k = 0; k < h; ++k) {
      double s = b1[k];
      for (std::size_t p = 0; p < n_parents; ++p) s += w1[k * n_parents + p] * parents[p];
      out += w2[k] * activate(act, s);
    }
    return out;
  }
};

struct ScmGraph {
  std::size_t D = 0;
  std::size_t D_root = 0;
  std::vector<std::vector<std::size_t>> parents;  // per node
  std::vector<Mechanism> mechanisms;              // per node, empty for roots

  bool is_root(std::size_t j) const { return parents[j].empty(); }

  std::vector<std::pair<std::size_t, std::size_t>> edges() const {
    std::vector<std::pair<std::size_t, std::size_t>> e;
    for (std::size_t j = 0; j < D; ++j)
      for (std::size_t p : parents[j]) e.emplace_back(p, j);
    return e;
  }

  std::vector<std::size_t> out_degrees() const {
    std::vector<std::size_t> deg(D, 0);
    for (const auto& ps : parents)
      for (std::size_t p : ps) ++deg[p];
    return deg;
  }

  /// Kahn's algorithm; throws a contract error on a cycle.
  std::vector<std::size_t> topological_order() const {
    std::vector<std::size_t> indeg(D, 0), order;
    std::vector<std::vector<std::size_t>> children(D);
    for (std::size_t j = 0; j < D; ++j)
      for (std::size_t p : parents[j]) {
        ++indeg[j];
        children[p].push_back(j);
      }
    std::vector<std::size_t> ready;
    for (std::size_t j = 0; j < D; ++j)
      if (!indeg[j]) ready.push_back(j);
    while (!ready.empty()) {
      std::size_t j = ready.front();
      ready.erase(ready.begin());
      order.push_back(j);
      for (std::size_t c : children[j])
        if (--indeg[c] == 0) ready.push_back(c);
    }
    check(order.size() == D, ErrorKind::kContract, "graph has a cycle");
    return order;
  }
};

inline Mechanism sample_mechanism(std::size_t n_parents, std::size_t hidden, RngStream& rng) {
  Mechanism m;
  m.act = rng.bernoulli(0.5) ? Activation::kTanh : Activation::kGelu;
  const double s1 = 1.0 / std::sqrt(static_cast<double>(n_parents));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  m.w1.resize(hidden * n_parents);
  for (auto& v : m.w1) v = rng.normal(0.0, 1.5 * s1);
  m.b1.resize(hidden);
  for (auto& v : m.b1) v = rng.normal(0.0, 0.5);
  m.w2.resize(hidden);
  for (auto& v : m.w2) v = rng.normal(0.0, 1.5 * s2);
  m.b2 = rng.normal(0.0, 0.5);
  return m;
}

/// Nodes join in index order; node j >= D_root draws min(m_attach, j) distinct
/// earlier parents with probability proportional to out-degree + 1 (or
/// uniformly for the control graph).
inline ScmGraph gen_dag(const ScmGenConfig& cfg, RngStream& rng) {
  cfg.validate();
  ScmGraph g;
  g.D = cfg.D;
  g.D_root = cfg.D_root;
  g.parents.assign(cfg.D, {});
  g.mechanisms.assign(cfg.D, {});
  std::vector<double> weight(cfg.D, 1.0);
  for (std::size_t j = cfg.D_root; j < cfg.D; ++j) {
    const std::size_t m = std::min(cfg.m_attach, j);
    std::vector<bool> taken(j, false);
    for (std::size_t pick = 0; pick < m; ++pick) {
      double total = 0.0;
      for (std::size_t c = 0; c < j; ++c)
        if (!taken[c]) total += cfg.uniform_attachment ? 1.0 : weight[c];
      double u = rng.uniform() * total;
      std::size_t chosen = j;
      for (std::size_t c = 0; c < j; ++c) {
        if (taken[c]) continue;
        chosen = c;
        u -= cfg.uniform_attachment ? 1.0 : weight[c];
        if (u < 0.0) break;
      }
      taken[chosen] = true;
      g.parents[j].push_back(chosen);
    }
    std::sort(g.parents[j].begin(), g.parents[j].end());
    for (std::size_t p : g.parents[j]) weight[p] += 1.0;
    g.mechanisms[j] = sample_mechanism(g.parents[j].size(), cfg.mech_hidden, rng);
  }
  return g;
}

// -------------------------------------------------------------------- roots

struct RootSample {
  std::vector<double> prototypes;  // [M, D_root]
  std::vector<double> weights;     // [N, M]
  std::vector<double> x;           // [N, D_root]
};

inline RootSample init_roots(const ScmGenConfig& cfg, RngStream& rng) {
  RootSample r;
  const std::size_t m = cfg.M, dr = cfg.D_root, n = cfg.N;
  r.prototypes.resize(m * dr);
  for (auto& v : r.prototypes) v = rng.normal();
  const auto alpha = cfg.alpha_vector();
  r.weights.resize(n * m);
  r.x.assign(n * dr, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto w = sample_dirichlet(alpha, rng);
    std::copy(w.begin(), w.end(), r.weights.begin() + i * m);
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t c = 0; c < dr; ++c) r.x[i * dr + c] += w[k] * r.prototypes[k * dr + c];
  }
  return r;
}

// ---------------------------------------------------------------- propagate

struct Propagation {
  std::vector<double> x;        // [N, D] final (z-scored when enabled)
  std::vector<double> x_tilde;  // [N, D] mechanism output before noise (derived only)
  std::vector<double> noise;    // [N, D]
  std::vector<double> col_mean, col_std;  // z-score statistics per column
};

/// Column j is finished (noise added, then z-scored) before its children read
/// it. Roots are z-scored as well.
inline Propagation propagate(const ScmGraph& g, const std::vector<double>& x_root,
                             const ScmGenConfig& cfg, RngStream& rng) {
  const std::size_t n = x_root.size() / g.D_root, dcols = g.D;
  Propagation out;
  out.x.assign(n * dcols, 0.0);
  out.x_tilde.assign(n * dcols, 0.0);
  out.noise.assign(n * dcols, 0.0);
  out.col_mean.assign(dcols, 0.0);
  out.col_std.assign(dcols, 1.0);
  std::size_t next_root = 0;
  std::vector<double> buf;
  for (std::size_t j : g.topological_order()) {
    if (g.is_root(j)) {
      const std::size_t r = next_root++;
      for (std::size_t i = 0; i < n; ++i) out.x[i * dcols + j] = x_root[i * g.D_root + r];
    } else {
      const auto& ps = g.parents[j];
      buf.resize(ps.size());
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < ps.size(); ++p) buf[p] = out.x[i * dcols + ps[p]];
        const double xt = g.mechanisms[j].apply(buf.data(), ps.size());
        const double sd = cfg.sigma * std::pow(std::abs(xt), 0.5 * cfg.gamma);
        const double eps = sd > 0.0 ? rng.normal(0.0, sd) : 0.0;
        out.x_tilde[i * dcols + j] = xt;
        out.noise[i * dcols + j] = eps;
        out.x[i * dcols + j] = xt + eps;
      }
    }
    for (std::size_t i = 0; i < n; ++i)
      if (!std::isfinite(out.x[i * dcols + j]))
        fail(ErrorKind::kInput, "non-finite value while propagating node " + std::to_string(j));
    if (cfg.zscore) {
      double mu = 0.0, var = 0.0;
      for (std::size_t i = 0; i < n; ++i) mu += out.x[i * dcols + j];
      mu /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        var += (out.x[i * dcols + j] - mu) * (out.x[i * dcols + j] - mu);
      const double sd = std::sqrt(var / static_cast<double>(n));
      const double s = sd > 1e-12 ? sd : 1.0;
      for (std::size_t i = 0; i < n; ++i) out.x[i * dcols + j] = (out.x[i * dcols + j] - mu) / s;
      out.col_mean[j] = mu;
      out.col_std[j] = s;
    }
  }
  return out;
}

// ------------------------------------------------------------------ targets

/// Sparse teacher over the pre-warp columns: logits = W2 gelu(W1 x_S + b1)
/// (or W x_S when linear), plus Gaussian logit noise at the drawn SNR.
struct Teacher {
  std::vector<std::size_t> inputs;  // selected columns S
  bool linear = false;
  std::vector<double> w1, b1;       // [h, |S|], [h]
  std::vector<double> w2;           // [outputs, h] or [outputs, |S|] when linear
  std::size_t outputs = 1;
  double snr = 1.0;
  double noise_sd = 0.0;

  std::vector<double> signal(const double* row) const {
    const std::size_t s = inputs.size();
    std::vector<double> feat(s);
    for (std::size_t k = 0; k < s; ++k) feat[k] = row[inputs[k]];
    std::vector<double> hidden;
    if (linear) {
      hidden = feat;
    } else {
      const std::size_t h = b1.size();
      hidden.resize(h);
      for (std::size_t a = 0; a < h; ++a) {
        double v = b1[a];
        for (std::size_t k = 0; k < s; ++k) v += w1[a * s + k] * feat[k];
        hidden[a] = ops::gelu(v);
      }
    }
    std::vector<double> out(outputs, 0.0);
    for (std::size_t o = 0; o < outputs; ++o)
      for (std::size_t a = 0; a < hidden.size(); ++a) out[o] += w2[o * hidden.size() + a] * hidden[a];
    return out;
  }
};

struct Targets {
  std::vector<double> y;
  Teacher teacher;
  std::size_t resamples = 0;
};

inline Teacher sample_teacher(std::size_t dcols, const ScmGenConfig& cfg, RngStream& rng) {
  Teacher t;
  t.linear = cfg.linear_teacher;
  t.outputs = cfg.task.is_classification() ? cfg.task.classes : 1;
  for (std::size_t j = 0; j < dcols; ++j)
    if (rng.bernoulli(cfg.teacher_density)) t.inputs.push_back(j);
  if (t.inputs.empty()) t.inputs.push_back(rng.index(dcols));
  const std::size_t s = t.inputs.size();
  const std::size_t h = t.linear ? s : cfg.teacher_hidden;
  if (!t.linear) {
    t.w1.resize(h * s);
    for (auto& v : t.w1) v = rng.normal(0.0, 1.0 / std::sqrt(double(s)));
    t.b1.resize(h);
    for (auto& v : t.b1) v = rng.normal(0.0, 0.5);
  }
  t.w2.resize(t.outputs * h);
  for (auto& v : t.w2) v = rng.normal(0.0, 1.0 / std::sqrt(double(h)));
  t.snr = rng.log_uniform(cfg.snr_min, cfg.snr_max);
  return t;
}

/// Classification resamples the teacher (up to 10 times) until every class
/// is present and none holds more than 95% of rows.
inline Targets synth_targets(const std::vector<double>& x, std::size_t dcols,
                             const ScmGenConfig& cfg, RngStream& rng) {
  const std::size_t n = x.size() / dcols;
  Targets out;
  for (std::size_t attempt = 0; attempt <= 10; ++attempt) {
    Teacher t = sample_teacher(dcols, cfg, rng);
    std::vector<double> sig(n * t.outputs);
    for (std::size_t i = 0; i < n; ++i) {
      auto s = t.signal(x.data() + i * dcols);
      std::copy(s.begin(), s.end(), sig.begin() + i * t.outputs);
    }
    double var = 0.0;
    for (std::size_t o = 0; o < t.outputs; ++o) {
      double mu = 0.0, v = 0.0;
      for (std::size_t i = 0; i < n; ++i) mu += sig[i * t.outputs + o] / double(n);
      for (std::size_t i = 0; i < n; ++i)
        v += (sig[i * t.outputs + o] - mu) * (sig[i * t.outputs + o] - mu) / double(n);
      var += v / double(t.outputs);
    }
    t.noise_sd = std::sqrt(var / t.snr);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (cfg.task.is_classification()) {
        std::size_t best = 0;
        double best_v = -INFINITY;
        for (std::size_t o = 0; o < t.outputs; ++o) {
          const double v = sig[i * t.outputs + o] + (t.noise_sd > 0 ? rng.normal(0.0, t.noise_sd) : 0.0);
          if (v > best_v) best_v = v, best = o;
        }
        y[i] = static_cast<double>(best);
      } else {
        y[i] = sig[i] + (t.noise_sd > 0 ? rng.normal(0.0, t.noise_sd) : 0.0);
      }
    }
    if (cfg.task.is_classification()) {
      std::vector<std::size_t> hist(cfg.task.classes, 0);
      for (double v : y) ++hist[static_cast<std::size_t>(v)];
      const auto mx = *std::max_element(hist.begin(), hist.end());
      const auto mn = *std::min_element(hist.begin(), hist.end());
      if (mn == 0 || double(mx) > 0.95 * double(n)) {
        out.resamples = attempt + 1;
        continue;
      }
    } else {
      double mu = 0.0, v = 0.0;
      for (double a : y) mu += a / double(n);
      for (double a : y) v += (a - mu) * (a - mu) / double(n);
      const double sd = v > 0 ? std::sqrt(v) : 1.0;
      for (auto& a : y) a = (a - mu) / sd;
    }
    out.y = std::move(y);
    out.teacher = std::move(t);
    return out;
  }
  fail(ErrorKind::kInput, "teacher produced collapsed classes after 10 resamples");
}

// --------------------------------------------------------------------- warp

/// Mid-rank empirical CDF: tied values share the average of their ranks.
inline std::vector<double> midrank_ecdf(const std::vector<double>& col) {
  const std::size_t n = col.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return col[a] < col[b]; });
  std::vector<double> u(n);
  for (std::size_t s = 0; s < n;) {
    std::size_t e = s;
    while (e + 1 < n && col[idx[e + 1]] == col[idx[s]]) ++e;
    const double rank = 0.5 * double(s + e) + 1.0;  // 1-based average
    for (std::size_t k = s; k <= e; ++k) u[idx[k]] = (rank - 0.5) / double(n);
    s = e + 1;
  }
  return u;
}

struct WarpRecord {
  std::size_t column = 0;
  double a = 1.0, b = 1.0;
  bool skipped = false;
};

/// Warps one column in place with the given shapes: x' = standardized
/// Kumaraswamy^{-1}(u; a, b). Returns false (untouched) for constant columns.
inline bool warp_column(std::vector<double>& col, double a, double b) {
  const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
  if (*lo == *hi) return false;
  auto u = midrank_ecdf(col);
  const std::size_t n = col.size();
  double mu = 0.0, var = 0.0;
  for (std::size_t i = 0; i < n; ++i) mu += (col[i] = kumaraswamy_icdf(u[i], a, b)) / double(n);
  for (double v : col) var += (v - mu) * (v - mu) / double(n);
  const double sd = var > 0 ? std::sqrt(var) : 1.0;
  for (auto& v : col) v = (v - mu) / sd;
  return true;
}

inline std::vector<WarpRecord> kumaraswamy_warp(std::vector<double>& x, std::size_t dcols,
                                                const std::vector<bool>& selected,
                                                const ScmGenConfig& cfg, RngStream& rng) {
  const std::size_t n = x.size() / dcols;
  std::vector<WarpRecord> rec;
  std::vector<double> col(n);
  for (std::size_t j = 0; j < dcols; ++j) {
    if (!selected[j]) continue;
    WarpRecord r;
    r.column = j;
    r.a = rng.log_uniform(cfg.warp_a_min, cfg.warp_a_max);
    r.b = rng.log_uniform(cfg.warp_b_min, cfg.warp_b_max);
    for (std::size_t i = 0; i < n; ++i) col[i] = x[i * dcols + j];
    r.skipped = !warp_column(col, r.a, r.b);
    if (!r.skipped)
      for (std::size_t i = 0; i < n; ++i) x[i * dcols + j] = col[i];
    rec.push_back(r);
  }
  return rec;
}

// ------------------------------------------------------------------ dataset

struct Generated {
  TabularDataset data;
  std::vector<double> truth;  // labels of every row, including query rows
  ScmGraph graph;
  Teacher teacher;
  std::vector<WarpRecord> warps;
  std::size_t regenerations = 0;
  std::size_t teacher_resamples = 0;

  json metadata(const ScmGenConfig& cfg) const {
    json edges = json::array();
    for (auto [p, c] : graph.edges()) edges.push_back({p, c});
    json nodes = json::array();
    for (std::size_t j = 0; j < graph.D; ++j)
      nodes.push_back({{"id", j},
                       {"role", graph.is_root(j) ? "root" : "derived"},
                       {"parents", graph.parents[j]},
                       {"activation", graph.is_root(j) ? "" : to_string(graph.mechanisms[j].act)}});
    json warp = json::array();
    for (const auto& w : warps)
      warp.push_back({{"column", w.column}, {"a", w.a}, {"b", w.b}, {"skipped", w.skipped}});
    return json{{"config", cfg.to_json()},
                {"rows", data.rows},
                {"columns", data.cols},
                {"task", data.task.is_classification() ? "classification" : "regression"},
                {"classes", data.task.is_classification() ? data.task.classes : 0},
                {"edge_count", edges.size()},
                {"edges", edges},
                {"nodes", nodes},
                {"teacher", {{"inputs", teacher.inputs}, {"linear", teacher.linear}, {"snr", teacher.snr}}},
                {"warp", warp},
                {"zscored", cfg.zscore},
                {"regenerations", regenerations},
                {"teacher_resamples", teacher_resamples},
                {"query_rows", data.query_rows().size()}};
  }
};

inline Generated gen_dataset(const ScmGenConfig& cfg, std::uint64_t stream = 0) {
  cfg.validate();
  Generated g;
  RngStream base(cfg.seed, stream);
  for (std::size_t attempt = 0;; ++attempt) {
    RngStream rng = base.split(attempt);
    try {
      g.graph = gen_dag(cfg, rng);
      auto roots = init_roots(cfg, rng);
      auto prop = propagate(g.graph, roots.x, cfg, rng);
      auto targets = synth_targets(prop.x, cfg.D, cfg, rng);
      std::vector<bool> selected(cfg.D, false);
      for (std::size_t j = 0; j < cfg.D; ++j) {
        const bool root = g.graph.is_root(j);
        selected[j] = cfg.warp && (cfg.warp_columns == WarpColumns::kAll ||
                                   (cfg.warp_columns == WarpColumns::kRoots) == root);
      }
      g.warps = kumaraswamy_warp(prop.x, cfg.D, selected, cfg, rng);

      auto& ds = g.data;
      ds.rows = cfg.N;
      ds.cols = cfg.D;
      ds.x = std::move(prop.x);
      ds.observed.assign(cfg.N * cfg.D, true);
      for (std::size_t k = 0; k < ds.observed.size() && cfg.missing_rate > 0; ++k)
        if (rng.bernoulli(cfg.missing_rate)) ds.observed[k] = false;
      ds.y = targets.y;
      g.truth = targets.y;
      ds.y_observed.assign(cfg.N, true);
      ds.task = cfg.task;
      if (cfg.query_fraction > 0.0) {
        std::size_t nq = static_cast<std::size_t>(std::round(cfg.query_fraction * double(cfg.N)));
        nq = std::min(nq, cfg.N - 1);
        std::vector<std::size_t> idx(cfg.N);
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t q = 0; q < nq; ++q) ds.y_observed[idx[q]] = false;
      }
      g.teacher = std::move(targets.teacher);
      g.teacher_resamples = targets.resamples;
      g.regenerations = attempt;
      return g;
    } catch (const Error&) {
      if (attempt >= 10) throw;
    }
  }
}

}  // namespace feat::scm
