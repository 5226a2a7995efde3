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

// Monte-Carlo and exact probes of the sample-axis mixers and an end-to-end
// finite-difference gradient check. Each probe records metrics and asserted
// properties into a RunReport.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "feat/report.hpp"
#include "feat/sample_axis.hpp"
#include "feat/train.hpp"

namespace feat::probes {

using nlohmann::json;
namespace sa = sample_axis;

namespace detail {

// Reads known keys into `fields`; anything else is a config error.
template <typename Fn>
void read_keys(const json& j, Fn&& fn) {
  if (!j.is_object()) throw ConfigError("config", "expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    try {
      if (!fn(it.key(), *it)) throw ConfigError(it.key(), "unknown key");
    } catch (const json::exception& e) {
      throw ConfigError(it.key(), e.what());
    }
  }
}

inline Tensor gaussian(Shape s, RngStream& rng, double mean, double sd) {
  Tensor t = Tensor::zeros(std::move(s));
  for (auto& v : t.mutable_data()) v = rng.normal(mean, sd);
  return t;
}

inline double variance(const std::vector<double>& v) {
  const double n = double(v.size());
  double m = 0.0, s = 0.0;
  for (double x : v) m += x / n;
  for (double x : v) s += (x - m) * (x - m);
  return s / (n - 1.0);
}

}  // namespace detail

// --------------------------------------------------------------- variance

struct VarianceConfig {
  std::size_t trials = 200;
  std::size_t n = 2000;      // doubled once
  std::size_t m = 32;        // expected gated rows, fixed across N
  std::size_t d = 8;
  std::size_t columns = 4;
  std::size_t K = 5;
  double mean = 0.5;
  double sd = 1.0;
  std::size_t conv_samples = 100000;
  double ungated_lo = 1.85;
  double ungated_hi = 2.15;
  double gated_max = 1.15;
  double conv_slack = 0.05;
  double conv_max = 1.05;

  static VarianceConfig from_json(const json& j) {
    VarianceConfig c;
    detail::read_keys(j, [&c](const std::string& k, const json& v) {
      if (k == "trials") c.trials = json_uint(v);
      else if (k == "n") c.n = json_uint(v);
      else if (k == "m") c.m = json_uint(v);
      else if (k == "d") c.d = json_uint(v);
      else if (k == "columns") c.columns = json_uint(v);
      else if (k == "K") c.K = json_uint(v);
      else if (k == "mean") c.mean = v.get<double>();
      else if (k == "sd") c.sd = v.get<double>();
      else if (k == "conv_samples") c.conv_samples = json_uint(v);
      else if (k == "ungated_lo") c.ungated_lo = v.get<double>();
      else if (k == "ungated_hi") c.ungated_hi = v.get<double>();
      else if (k == "gated_max") c.gated_max = v.get<double>();
      else if (k == "conv_slack") c.conv_slack = v.get<double>();
      else if (k == "conv_max") c.conv_max = v.get<double>();
      else return false;
      return true;
    });
    c.validate();
    return c;
  }

  void validate() const {
    if (trials < 2) throw ConfigError("trials", "need at least 2 trials");
    if (n == 0) throw ConfigError("n", "must be positive");
    if (m == 0 || m > n) throw ConfigError("m", "must lie in [1, n]");
    if (d == 0) throw ConfigError("d", "must be positive");
    if (columns == 0) throw ConfigError("columns", "must be positive");
    if (K == 0 || K % 2 == 0) throw ConfigError("K", "must be odd");
    if (!(sd > 0)) throw ConfigError("sd", "must be positive");
    if (conv_samples < 2) throw ConfigError("conv_samples", "need at least 2 samples");
  }

  json to_json() const {
    return {{"trials", trials},         {"n", n},
            {"m", m},                   {"d", d},
            {"columns", columns},       {"K", K},
            {"mean", mean},             {"sd", sd},
            {"conv_samples", conv_samples}, {"ungated_lo", ungated_lo},
            {"ungated_hi", ungated_hi}, {"gated_max", gated_max},
            {"conv_slack", conv_slack}, {"conv_max", conv_max}};
  }
};

/// Mean over memory entries of the across-trial variance of S_N. Keys are
/// zero so phi(k) = 1 and every row of S equals sum_i g_i z_i.
inline double memory_variance(const VarianceConfig& c, std::size_t n, bool gated,
                              const Tensor& kernel, RngStream& rng) {
  const std::size_t t = c.columns, d = c.d;
  std::vector<std::vector<double>> samples(t * d);
  const Tensor pk = Tensor::full({n, t, d}, sa::phi(0.0));
  const double rate = double(c.m) / double(n);
  for (std::size_t trial = 0; trial < c.trials; ++trial) {
    Tensor z = sa::depthwise_conv(detail::gaussian({n, t, d}, rng, c.mean, c.sd), kernel);
    if (gated) {
      auto zv = z.mutable_data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t col = 0; col < t; ++col) {
          const double g = rng.bernoulli(rate) ? 1.0 : 0.0;
          for (std::size_t e = 0; e < d; ++e) zv[(i * t + col) * d + e] *= g;
        }
    }
    const auto s = sa::gla_memory(pk, z);
    for (std::size_t col = 0; col < t; ++col)
      for (std::size_t e = 0; e < d; ++e) samples[col * d + e].push_back(s[(col * d + 0) * d + e]);
  }
  double mean_var = 0.0;
  for (const auto& v : samples) mean_var += detail::variance(v) / double(samples.size());
  return mean_var;
}

inline void check_variance(const VarianceConfig& c, std::uint64_t seed, RunReport& rep) {
  c.validate();
  NoGradGuard ng;
  RngStream krng(seed, 10);
  const Tensor kernel = ops::softmax(detail::gaussian({c.d, c.K}, krng, 0.0, 1.0));

  RngStream a(seed, 11), b(seed, 12), g1(seed, 13), g2(seed, 14);
  const double v1 = memory_variance(c, c.n, false, kernel, a);
  const double v2 = memory_variance(c, 2 * c.n, false, kernel, b);
  const double w1 = memory_variance(c, c.n, true, kernel, g1);
  const double w2 = memory_variance(c, 2 * c.n, true, kernel, g2);

  // Per-step variance after smoothing i.i.d. unit-variance input.
  RngStream crng(seed, 15);
  Tensor y = sa::depthwise_conv(detail::gaussian({c.conv_samples, 1, c.d}, crng, 0.0, 1.0), kernel);
  double lo = 1e300, hi = 0.0;
  for (std::size_t e = 0; e < c.d; ++e) {
    std::vector<double> col(c.conv_samples);
    for (std::size_t i = 0; i < c.conv_samples; ++i) col[i] = y[i * c.d + e];
    const double v = detail::variance(col);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }

  rep.metrics["ungated_var_n"] = v1;
  rep.metrics["ungated_var_2n"] = v2;
  rep.metrics["gated_var_n"] = w1;
  rep.metrics["gated_var_2n"] = w2;
  rep.metrics["conv_var_min"] = lo;
  rep.metrics["conv_var_max"] = hi;
  rep.add(Property::within("ungated_ratio", v2 / v1, c.ungated_lo, c.ungated_hi));
  rep.add(Property::at_most("gated_ratio", w2 / w1, c.gated_max));
  rep.add(Property::at_least("conv_step_variance_min", lo, 1.0 / double(c.K) - c.conv_slack));
  rep.add(Property::at_most("conv_step_variance_max", hi, c.conv_max));
}

// -------------------------------------------------------------- influence

struct InfluenceConfig {
  std::size_t n = 16;
  std::size_t d = 8;
  std::size_t d_state = 4;
  std::size_t stack = 3;
  double asym_tol = 1e-6;
  double oracle_tol = 1e-9;

  static InfluenceConfig from_json(const json& j) {
    InfluenceConfig c;
    detail::read_keys(j, [&c](const std::string& k, const json& v) {
      if (k == "n") c.n = json_uint(v);
      else if (k == "d") c.d = json_uint(v);
      else if (k == "d_state") c.d_state = json_uint(v);
      else if (k == "stack") c.stack = json_uint(v);
      else if (k == "asym_tol") c.asym_tol = v.get<double>();
      else if (k == "oracle_tol") c.oracle_tol = v.get<double>();
      else return false;
      return true;
    });
    c.validate();
    return c;
  }

  void validate() const {
    if (n < 3) throw ConfigError("n", "need at least 3 rows");
    if (d == 0) throw ConfigError("d", "must be positive");
    if (d_state == 0) throw ConfigError("d_state", "must be positive");
    if (stack == 0) throw ConfigError("stack", "must be positive");
  }

  json to_json() const {
    return {{"n", n}, {"d", d}, {"d_state", d_state}, {"stack", stack},
            {"asym_tol", asym_tol}, {"oracle_tol", oracle_tol}};
  }
};

using LayerFn = std::function<Tensor(const Tensor&)>;

/// Full grid I(i,k) for one column: [n, n].
inline std::vector<std::vector<double>> influence_grid(const LayerFn& fn, const Tensor& x) {
  std::vector<std::vector<double>> grid;
  for (std::size_t i = 0; i < x.dim(0); ++i) grid.push_back(sa::influence_profile(fn, x, i, 0));
  return grid;
}

/// max over i and lags of |I(i,i-l) - I(i,i+l)| / I(i,i-l).
inline double max_asymmetry(const std::vector<std::vector<double>>& grid) {
  double worst = 0.0;
  const std::size_t n = grid.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 1; l <= i && i + l < n; ++l) {
      const double left = grid[i][i - l], right = grid[i][i + l];
      worst = std::max(worst, left > 0 ? std::abs(left - right) / left
                                       : (right > 0 ? 1.0 : 0.0));
    }
  return worst;
}

inline std::vector<sa::AfbmLayerParams> afbm_stack(const InfluenceConfig& c, sa::AfbmOptions opt,
                                                   std::size_t layers, RngStream& rng) {
  std::vector<sa::AfbmLayerParams> out;
  for (std::size_t l = 0; l < layers; ++l) {
    auto p = sa::AfbmLayerParams::init(c.d, c.d_state, opt, rng);
    // Non-trivial fusion bias and norm so the probe is not at a special point.
    p.out_bias = detail::gaussian({c.d}, rng, 0.0, 0.5);
    p.ln.gain = detail::gaussian({c.d}, rng, 1.0, 0.3);
    p.ln.bias = detail::gaussian({c.d}, rng, 0.0, 0.3);
    out.push_back(std::move(p));
  }
  return out;
}

inline LayerFn run_stack(const std::vector<sa::AfbmLayerParams>& ps) {
  return [&ps](const Tensor& x) {
    Tensor y = x;
    for (const auto& p : ps) y = sa::afbm_layer(y, p);
    return y;
  };
}

/// Closed form ||W_out diag(abar^lag) dt W_b|| of a forward time-invariant
/// scan with no normalization.
inline double closed_form_influence(const sa::AfbmLayerParams& p, std::size_t lag) {
  const std::size_t s = p.fwd.a_log.numel(), d = p.out_fwd.dim(0), din = p.fwd.w_b.dim(1);
  const double dt = ops::softplus(p.fwd.b_dt[0]);
  double sq = 0.0;
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < din; ++c) {
      double v = 0.0;
      for (std::size_t q = 0; q < s; ++q) {
        const double abar = std::exp(-dt * std::exp(p.fwd.a_log[q]));
        v += p.out_fwd[r * s + q] * std::pow(abar, double(lag)) * dt * p.fwd.w_b[q * din + c];
      }
      sq += v * v;
    }
  return std::sqrt(sq);
}

inline void check_influence(const InfluenceConfig& c, std::uint64_t seed, RunReport& rep) {
  c.validate();
  RngStream rng(seed, 20);
  const Tensor x = detail::gaussian({c.n, 1, c.d}, rng, 0.0, 1.0);

  // (a) unidirectional: nothing later may reach an earlier row.
  sa::AfbmOptions uni;
  uni.bidirectional = false;
  auto causal = afbm_stack(c, uni, c.stack, rng);
  const auto g_uni = influence_grid(run_stack(causal), x);
  double upper = 0.0, deficit_rows = 0.0;
  for (std::size_t i = 0; i < c.n; ++i) {
    for (std::size_t k = i + 1; k < c.n; ++k) upper = std::max(upper, g_uni[i][k]);
    deficit_rows += double(c.n - 1 - i);
  }
  rep.metrics["causal_deficit_pairs"] = deficit_rows;
  rep.add(Property::equals("unidirectional_upper_triangle_max", upper, 0.0));

  // (b) one tied time-invariant layer: symmetric profile.
  sa::AfbmOptions tied;
  tied.mode = sa::ScanMode::kTimeInvariant;
  tied.tie_directions = true;
  auto single = afbm_stack(c, tied, 1, rng);
  rep.add(Property::less("tied_relative_asymmetry", max_asymmetry(influence_grid(run_stack(single), x)),
                         c.asym_tol));

  // (c) reported only: tied stack and untied layers.
  auto tied_stack = afbm_stack(c, tied, c.stack, rng);
  rep.metrics["tied_stack_asymmetry"] = max_asymmetry(influence_grid(run_stack(tied_stack), x));
  sa::AfbmOptions untied;
  untied.mode = sa::ScanMode::kTimeInvariant;
  auto loose = afbm_stack(c, untied, 1, rng);
  rep.metrics["untied_asymmetry"] = max_asymmetry(influence_grid(run_stack(loose), x));

  // (d) decay: a forward time-invariant scan without normalization follows
  // the closed form, nonincreasing in the lag.
  sa::AfbmOptions fwd_only = uni;
  fwd_only.mode = sa::ScanMode::kTimeInvariant;
  auto bare = afbm_stack(c, fwd_only, 1, rng)[0];
  bare.out_bias = Tensor::zeros({c.d});
  LayerFn mix = [&bare](const Tensor& in) { return sa::afbm_mix(in, bare); };
  const std::size_t last = c.n - 1;
  const auto prof = sa::influence_profile(mix, x, last, 0);
  double oracle_err = 0.0, rises = 0.0;
  std::vector<double> by_lag;
  for (std::size_t lag = 0; lag <= last; ++lag) {
    const double want = closed_form_influence(bare, lag);
    oracle_err = std::max(oracle_err, std::abs(prof[last - lag] - want) / std::max(want, 1e-300));
    if (lag > 0 && prof[last - lag] > prof[last - lag + 1]) rises += 1.0;
    by_lag.push_back(prof[last - lag]);
  }
  rep.metrics["decay_profile"] = by_lag;
  rep.add(Property::less("decay_closed_form_rel_error", oracle_err, c.oracle_tol));
  rep.add(Property::equals("decay_increases", rises, 0.0));
}

// ----------------------------------------------------------- scan oracle

struct ScanOracleConfig {
  std::size_t n_max = 32;
  std::size_t seeds = 20;
  std::size_t d = 4;
  std::size_t d_state = 4;
  double tol = 1e-9;

  static ScanOracleConfig from_json(const json& j) {
    ScanOracleConfig c;
    detail::read_keys(j, [&c](const std::string& k, const json& v) {
      if (k == "n_max") c.n_max = json_uint(v);
      else if (k == "seeds") c.seeds = json_uint(v);
      else if (k == "d") c.d = json_uint(v);
      else if (k == "d_state") c.d_state = json_uint(v);
      else if (k == "tol") c.tol = v.get<double>();
      else return false;
      return true;
    });
    c.validate();
    return c;
  }

  void validate() const {
    if (n_max == 0 || n_max > 32) throw ConfigError("n_max", "must lie in [1, 32]");
    if (seeds == 0) throw ConfigError("seeds", "must be positive");
    if (d == 0) throw ConfigError("d", "must be positive");
    if (d_state == 0) throw ConfigError("d_state", "must be positive");
  }

  json to_json() const {
    return {{"n_max", n_max}, {"seeds", seeds}, {"d", d}, {"d_state", d_state}, {"tol", tol}};
  }
};

/// h_i = sum_m (prod of abar_l for l strictly past m, up to i) dt_m B x_m,
/// evaluated by direct summation.
inline std::vector<double> unrolled_states(const Tensor& seq, const sa::ScanParams& p,
                                           sa::ScanMode mode, sa::Direction dir) {
  const std::size_t n = seq.dim(0), d = seq.dim(1), s = p.a_log.numel();
  const Tensor x3 = ops::reshape(seq, {n, 1, d});
  const Tensor dt = p.step_sizes(x3, mode);
  std::vector<double> out(n * s, 0.0);
  const bool fwd = dir == sa::Direction::kForward;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t m = 0; m < n; ++m) {
      if (fwd ? m > i : m < i) continue;
      for (std::size_t q = 0; q < s; ++q) {
        const double a = -std::exp(p.a_log[q]);
        double log_decay = 0.0;
        const std::size_t lo = fwd ? m + 1 : i, end = fwd ? i + 1 : m;
        for (std::size_t l = lo; l < end; ++l) log_decay += dt[l] * a;
        double bx = 0.0;
        for (std::size_t e = 0; e < d; ++e) bx += p.w_b[q * d + e] * seq[m * d + e];
        out[i * s + q] += std::exp(log_decay) * dt[m] * bx;
      }
    }
  return out;
}

inline void check_scan_oracle(const ScanOracleConfig& c, std::uint64_t seed, RunReport& rep) {
  c.validate();
  NoGradGuard ng;
  double worst = 0.0;
  std::size_t cases = 0;
  for (std::size_t k = 0; k < c.seeds; ++k) {
    RngStream rng(seed + k, 30);
    const std::size_t n = 1 + rng.index(c.n_max);
    auto p = sa::ScanParams::init(c.d, c.d_state, rng);
    p.w_dt = detail::gaussian({1, c.d}, rng, 0.0, 0.5);
    const Tensor seq = detail::gaussian({n, c.d}, rng, 0.0, 1.0);
    for (auto mode : {sa::ScanMode::kSelective, sa::ScanMode::kTimeInvariant})
      for (auto dir : {sa::Direction::kForward, sa::Direction::kBackward}) {
        const Tensor h = sa::mamba_scan(seq, p, mode, dir);
        const auto want = unrolled_states(seq, p, mode, dir);
        for (std::size_t e = 0; e < want.size(); ++e) worst = std::max(worst, std::abs(h[e] - want[e]));
        ++cases;
      }
  }
  rep.metrics["cases"] = cases;
  rep.add(Property::less("scan_max_abs_diff", worst, c.tol));
}

// ------------------------------------------------------------- grad check

struct GradConfig {
  std::size_t n = 6;
  std::size_t D = 3;
  std::size_t d = 8;
  std::size_t L = 1;
  double step = 1e-5;
  double tol = 1e-5;

  static GradConfig from_json(const json& j) {
    GradConfig c;
    detail::read_keys(j, [&c](const std::string& k, const json& v) {
      if (k == "n") c.n = json_uint(v);
      else if (k == "D") c.D = json_uint(v);
      else if (k == "d") c.d = json_uint(v);
      else if (k == "L") c.L = json_uint(v);
      else if (k == "step") c.step = v.get<double>();
      else if (k == "tol") c.tol = v.get<double>();
      else return false;
      return true;
    });
    c.validate();
    return c;
  }

  void validate() const {
    if (n < 4) throw ConfigError("n", "need at least 4 rows");
    if (D < 2) throw ConfigError("D", "need at least 2 columns");
    if (!(step > 0)) throw ConfigError("step", "must be positive");
    model_config(1).validate();
  }

  model::ModelConfig model_config(std::uint64_t seed) const {
    model::ModelConfig m;
    m.L = L;
    m.d = d;
    m.d_state = 4;
    m.heads = 2;
    m.K = 3;
    m.afbm_layers = 2;
    m.C_max = 3;
    m.freeze_sdfe = true;
    m.seed = seed;
    return m;
  }

  json to_json() const {
    return {{"n", n}, {"D", D}, {"d", d}, {"L", L}, {"step", step}, {"tol", tol}};
  }
};

/// Norm-relative error ||a - b|| / max(||a||, ||b||, 1e-10).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-10});
}

/// Total training loss on a classification and a regression table, against
/// central differences for every parameter tensor.
inline void check_grad(const GradConfig& c, std::uint64_t seed, RunReport& rep) {
  c.validate();
  const auto mcfg = c.model_config(seed);
  auto params = model::ModelParams::init(mcfg);

  struct Case {
    train::MaskResult mask;
    std::vector<double> truth;
  };
  std::vector<Case> cases;
  for (bool regression : {false, true}) {
    scm::ScmGenConfig g;
    g.N = c.n;
    g.D = c.D;
    g.D_root = 1;
    g.missing_rate = 0.1;
    g.query_fraction = 0.5;
    g.seed = seed;
    if (regression) g.task.type = TaskType::kRegression;
    auto table = scm::gen_dataset(g, regression ? 2 : 1);
    RngStream mrng(seed, regression ? 42 : 41);
    cases.push_back({train::ccmm_mask(table.data, 0.3, mrng), table.truth});
  }
  auto loss = [&]() {
    Tensor total;
    for (const auto& cs : cases) {
      RngStream rng(seed, 43);
      Tensor l = train::masked_table_loss(mcfg, params, cs.mask, cs.truth, 1.0, rng).total;
      total = total.defined() ? ops::add(total, l) : l;
    }
    return total;
  };

  train::enable_grad(params);
  loss().backward();
  double worst = 0.0;
  json groups = json::object();
  std::size_t checked = 0;
  params.visit([&](const std::string& name, Tensor& t) {
    std::vector<double> analytic =
        t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                     : std::vector<double>(t.numel(), 0.0);
    std::vector<double> numeric(t.numel());
    NoGradGuard ng;
    auto w = t.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + c.step;
      const double up = loss().item();
      w[i] = saved - c.step;
      const double down = loss().item();
      w[i] = saved;
      numeric[i] = (up - down) / (2.0 * c.step);
    }
    const double err = relative_error(analytic, numeric);
    groups[name] = err;
    worst = std::max(worst, err);
    checked += t.numel();
  });
  params.visit([](const std::string&, Tensor& t) { t.zero_grad(); });
  rep.metrics["group_rel_error"] = groups;
  rep.metrics["parameters_checked"] = checked;
  rep.add(Property::less("grad_max_rel_error", worst, c.tol));
}

}  // namespace feat::probes
