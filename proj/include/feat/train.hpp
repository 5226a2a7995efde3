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

// Training objectives, masked-cell pretraining and a toy loop over
// generated tables (one table per step).

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "feat/checkpoint.hpp"
#include "feat/io.hpp"
#include "feat/model.hpp"
#include "feat/scm.hpp"

namespace feat::train {

using nlohmann::json;

// ------------------------------------------------------------ scalar losses

/// Smooth L1: quadratic inside delta, linear outside.
inline double huber(double pred, double target, double delta = 1.0) {
  check(delta > 0.0, ErrorKind::kParameter, "huber delta must be positive");
  const double e = pred - target, a = std::abs(e);
  return a <= delta ? 0.5 * e * e : delta * a - 0.5 * delta * delta;
}

/// d huber / d pred. Bounded by delta.
inline double huber_grad(double pred, double target, double delta = 1.0) {
  const double e = pred - target;
  return std::abs(e) <= delta ? e : (e > 0 ? delta : -delta);
}

inline double cross_entropy(std::span<const double> logits, std::size_t cls) {
  check(cls < logits.size(), ErrorKind::kInput, "class index out of range");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  return mx + std::log(z) - logits[cls];
}

/// Correctly rounded sum (Shewchuk partials). Used for loss means so that
/// duplicating every member of a set leaves the mean bitwise unchanged.
inline double exact_sum(std::span<const double> xs) {
  std::vector<double> partials;
  for (double x : xs) {
    std::size_t i = 0;
    for (double y : partials) {
      if (std::abs(x) < std::abs(y)) std::swap(x, y);
      const double hi = x + y, lo = y - (hi - x);
      if (lo != 0.0) partials[i++] = lo;
      x = hi;
    }
    partials.resize(i);
    partials.push_back(x);
  }
  if (partials.empty()) return 0.0;
  // Add the partials from the top, fixing the half-way rounding case.
  std::size_t n = partials.size();
  double hi = partials[--n], lo = 0.0;
  while (n > 0) {
    const double x = hi, y = partials[--n];
    hi = x + y;
    lo = y - (hi - x);
    if (lo != 0.0) break;
  }
  if (n > 0 && ((lo < 0 && partials[n - 1] < 0) || (lo > 0 && partials[n - 1] > 0))) {
    const double y = lo * 2.0, x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

// --------------------------------------------------------------- task sets

using Cell = std::pair<std::size_t, std::size_t>;

/// Row indices into the logits / regression outputs and (row, col) cells of
/// the imputation output that contribute to each loss term.
struct BatchTaskSets {
  std::vector<std::size_t> cls;
  std::vector<std::size_t> reg;
  std::vector<Cell> mask;
};

/// Ground truth aligned with the prediction tensors. NaN marks a missing
/// target; such members are dropped before any arithmetic.
struct LossTargets {
  std::vector<double> labels;  // per logits row
  std::vector<double> values;  // per regression row
  std::vector<double> cells;   // row-major, imputation shape
};

struct Predictions {
  Tensor logits;      // [R, C]
  Tensor regression;  // [R]
  Tensor imputation;  // [N, D]
};

struct LossReport {
  Tensor total;
  std::optional<double> cls, reg, mask;
  double value() const { return total.item(); }
};

namespace detail {

// Mean cross-entropy over `rows` of logits; differentiable in logits.
inline Tensor ce_mean(const Tensor& logits, const std::vector<std::size_t>& rows,
                      const std::vector<double>& labels) {
  const std::size_t c = logits.shape().back();
  std::vector<double> terms;
  for (std::size_t r : rows)
    terms.push_back(cross_entropy(logits.data().subspan(r * c, c), std::size_t(labels[r])));
  const double n = double(rows.size());
  return make_op("cross_entropy_mean", Shape{}, {exact_sum(terms) / n}, {logits},
                 [rows, labels, c, n](feat::detail::Node& self) {
                   auto& a = ops::detail::in(self, 0);
                   if (!a.requires_grad) return;
                   auto& g = a.grad_buffer();
                   const double s = self.grad[0] / n;
                   for (std::size_t r : rows) {
                     const double* row = a.value.data() + r * c;
                     const double mx = *std::max_element(row, row + c);
                     double z = 0.0;
                     for (std::size_t k = 0; k < c; ++k) z += std::exp(row[k] - mx);
                     for (std::size_t k = 0; k < c; ++k)
                       g[r * c + k] += s * std::exp(row[k] - mx) / z;
                     g[r * c + std::size_t(labels[r])] -= s;
                   }
                 });
}

// Mean Huber over flat indices of `pred`.
inline Tensor huber_mean(const Tensor& pred, const std::vector<std::size_t>& idx,
                         const std::vector<double>& target, double delta) {
  std::vector<double> terms;
  for (std::size_t k = 0; k < idx.size(); ++k) terms.push_back(huber(pred[idx[k]], target[k], delta));
  const double n = double(idx.size());
  return make_op("huber_mean", Shape{}, {exact_sum(terms) / n}, {pred},
                 [idx, target, delta, n](feat::detail::Node& self) {
                   auto& a = ops::detail::in(self, 0);
                   if (!a.requires_grad) return;
                   auto& g = a.grad_buffer();
                   const double s = self.grad[0] / n;
                   for (std::size_t k = 0; k < idx.size(); ++k)
                     g[idx[k]] += s * huber_grad(a.value[idx[k]], target[k], delta);
                 });
}

}  // namespace detail

/// Sum of the active per-set means. A set with no valid member contributes
/// no term at all; all three empty is a usage error.
inline LossReport total_loss(const Predictions& pred, const LossTargets& tgt,
                             const BatchTaskSets& sets, double delta = 1.0) {
  check(delta > 0.0, ErrorKind::kParameter, "huber delta must be positive");
  LossReport rep;
  std::vector<Tensor> terms;

  std::vector<std::size_t> cls;
  for (std::size_t r : sets.cls)
    if (!std::isnan(tgt.labels.at(r))) cls.push_back(r);
  if (!cls.empty()) {
    terms.push_back(detail::ce_mean(pred.logits, cls, tgt.labels));
    rep.cls = terms.back().item();
  }

  std::vector<std::size_t> reg;
  std::vector<double> reg_t;
  for (std::size_t r : sets.reg)
    if (!std::isnan(tgt.values.at(r))) reg.push_back(r), reg_t.push_back(tgt.values[r]);
  if (!reg.empty()) {
    terms.push_back(detail::huber_mean(pred.regression, reg, reg_t, delta));
    rep.reg = terms.back().item();
  }

  std::vector<std::size_t> cells;
  std::vector<double> cell_t;
  if (!sets.mask.empty()) {
    const std::size_t dcols = pred.imputation.shape().back();
    for (auto [i, j] : sets.mask) {
      const std::size_t k = i * dcols + j;
      if (!std::isnan(tgt.cells.at(k))) cells.push_back(k), cell_t.push_back(tgt.cells[k]);
    }
  }
  if (!cells.empty()) {
    terms.push_back(detail::huber_mean(pred.imputation, cells, cell_t, delta));
    rep.mask = terms.back().item();
  }

  if (terms.empty()) fail(ErrorKind::kUsage, "every loss set is empty, nothing to train on");
  rep.total = terms[0];
  for (std::size_t t = 1; t < terms.size(); ++t) rep.total = ops::add(rep.total, terms[t]);
  return rep;
}

// ---------------------------------------------------------------- masking

struct MaskResult {
  TabularDataset data;       // observed flags cleared on masked cells
  std::vector<Cell> cells;   // original row/col coordinates
  std::vector<double> truth; // original values, aligned with cells
};

/// Hides ceil(rate * observed) uniformly chosen observed cells.
inline MaskResult ccmm_mask(const TabularDataset& ds, double rate, RngStream& rng) {
  check(rate > 0.0 && rate < 1.0, ErrorKind::kParameter, "mask rate must lie in (0, 1)");
  std::vector<std::size_t> obs;
  for (std::size_t k = 0; k < ds.observed.size(); ++k)
    if (ds.observed[k]) obs.push_back(k);
  if (obs.empty()) fail(ErrorKind::kUsage, "no observed cells to mask");
  const auto m = std::size_t(std::ceil(rate * double(obs.size())));
  for (std::size_t t = 0; t < m; ++t) std::swap(obs[t], obs[t + rng.index(obs.size() - t)]);
  obs.resize(m);
  std::sort(obs.begin(), obs.end());
  MaskResult r{ds, {}, {}};
  for (std::size_t k : obs) {
    r.data.observed[k] = false;
    r.cells.emplace_back(k / ds.cols, k % ds.cols);
    r.truth.push_back(ds.x[k]);
  }
  return r;
}

// -------------------------------------------------------------- optimizer

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip = 1.0;  // global grad-norm clip, 0 disables
};

struct OptimState {
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;
  AdamConfig cfg;
};

/// Marks every parameter as a gradient leaf and clears old gradients.
inline void enable_grad(model::ModelParams& p) {
  p.visit([](const std::string&, Tensor& t) {
    t.set_requires_grad(true);
    t.zero_grad();
  });
}

inline double grad_norm(model::ModelParams& p) {
  double s = 0.0;
  p.visit([&s](const std::string&, Tensor& t) {
    if (!t.has_grad()) return;
    for (double g : t.grad()) s += g * g;
  });
  return std::sqrt(s);
}

/// One clipped Adam update from the gradients currently held by `p`.
inline void adam_step(model::ModelParams& p, OptimState& st, double norm) {
  const auto& c = st.cfg;
  const double clip = (c.clip > 0.0 && norm > c.clip) ? c.clip / norm : 1.0;
  ++st.step;
  const double b1c = 1.0 - std::pow(c.beta1, double(st.step));
  const double b2c = 1.0 - std::pow(c.beta2, double(st.step));
  std::size_t k = 0;
  p.visit([&](const std::string&, Tensor& t) {
    if (st.m.size() <= k) {
      st.m.emplace_back(t.numel(), 0.0);
      st.v.emplace_back(t.numel(), 0.0);
    }
    auto& m = st.m[k];
    auto& v = st.v[k];
    ++k;
    if (!t.has_grad()) return;
    auto g = t.grad();
    auto w = t.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * clip;
      m[i] = c.beta1 * m[i] + (1 - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1 - c.beta2) * gi * gi;
      w[i] -= c.lr * (m[i] / b1c) / (std::sqrt(v[i] / b2c) + c.eps);
    }
  });
}

/// Independent copy of every parameter value (tied tensors stay tied).
inline model::ModelParams clone_params(const model::ModelParams& p) {
  model::ModelParams out = p;
  out.visit([](const std::string&, Tensor& t) { t = t.clone(); });
  out.retie();
  return out;
}

// ------------------------------------------------------------- one table

/// Loss of the model on one table: query labels feed the task term, masked
/// cells feed the reconstruction term. `truth` holds every row's label.
inline LossReport masked_table_loss(const model::ModelConfig& cfg, const model::ModelParams& p,
                                    const MaskResult& mk, const std::vector<double>& truth,
                                    double delta, RngStream& rng) {
  const TabularDataset& ds = mk.data;
  model::ForwardResult fr = model::forward(ds, cfg, p, rng);
  const std::size_t nq = ds.rows - fr.context;

  std::vector<std::size_t> pos(ds.rows);
  for (std::size_t r = 0; r < fr.order.size(); ++r) pos[fr.order[r]] = r;

  Predictions pred{fr.logits, fr.regression, fr.imputation};
  LossTargets tgt;
  BatchTaskSets sets;
  if (ds.task.is_classification()) {
    tgt.labels.resize(nq);
    for (std::size_t u = 0; u < nq; ++u) {
      tgt.labels[u] = truth.at(fr.query_row(u));
      sets.cls.push_back(u);
    }
  } else {
    tgt.values.resize(nq);
    for (std::size_t u = 0; u < nq; ++u) {
      tgt.values[u] = (truth.at(fr.query_row(u)) - fr.scaling.y_mean) / fr.scaling.y_std;
      sets.reg.push_back(u);
    }
  }
  tgt.cells.assign(ds.rows * ds.cols, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < mk.cells.size(); ++k) {
    const auto [i, j] = mk.cells[k];
    const std::size_t r = pos[i];
    tgt.cells[r * ds.cols + j] = (mk.truth[k] - fr.scaling.mean[j]) / fr.scaling.stddev[j];
    sets.mask.emplace_back(r, j);
  }
  return total_loss(pred, tgt, sets, delta);
}

inline LossReport table_loss(const model::ModelConfig& cfg, const model::ModelParams& p,
                             const TabularDataset& ds, const std::vector<double>& truth,
                             double mask_rate, double delta, RngStream& rng) {
  return masked_table_loss(cfg, p, ccmm_mask(ds, mask_rate, rng), truth, delta, rng);
}

// ------------------------------------------------------------- toy loop

struct TrainConfig {
  std::size_t steps = 200;
  double mask_rate = 0.15;
  double delta = 1.0;
  AdamConfig adam;
  std::uint64_t seed = 0;
  std::size_t max_bad_steps = 3;

  void validate() const {
    if (steps == 0) throw ConfigError("steps", "must be positive");
    if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw ConfigError("mask_rate", "must lie in (0, 1)");
    if (!(delta > 0.0)) throw ConfigError("delta", "must be positive");
    if (!(adam.lr >= 0.0)) throw ConfigError("lr", "must be non-negative");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("beta1", "must lie in [0, 1)");
    if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("beta2", "must lie in [0, 1)");
    if (!(adam.clip >= 0.0)) throw ConfigError("clip", "must be non-negative");
  }

  json to_json() const {
    return {{"steps", steps}, {"mask_rate", mask_rate}, {"delta", delta},
            {"lr", adam.lr},  {"beta1", adam.beta1},    {"beta2", adam.beta2},
            {"eps", adam.eps}, {"clip", adam.clip},     {"seed", seed}};
  }

  static TrainConfig from_json(const json& j) {
    TrainConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      try {
        if (k == "steps") c.steps = json_uint(*it);
        else if (k == "mask_rate") c.mask_rate = it->get<double>();
        else if (k == "delta") c.delta = it->get<double>();
        else if (k == "lr") c.adam.lr = it->get<double>();
        else if (k == "beta1") c.adam.beta1 = it->get<double>();
        else if (k == "beta2") c.adam.beta2 = it->get<double>();
        else if (k == "eps") c.adam.eps = it->get<double>();
        else if (k == "clip") c.adam.clip = it->get<double>();
        else if (k == "seed") c.seed = json_uint<std::uint64_t>(*it);
        else throw ConfigError(k, "unknown key");
      } catch (const json::exception& e) {
        throw ConfigError(k, e.what());
      }
    }
    c.validate();
    return c;
  }
};

struct StepRecord {
  std::size_t step = 0;  // 1-based
  double total = 0.0;
  std::optional<double> cls, reg, mask;
  double grad_norm = 0.0;
  bool skipped = false;
};

struct TrainResult {
  std::vector<StepRecord> curve;
  std::vector<std::string> events;
  model::ModelParams params;

  /// Mean total loss over 1-based steps [from, to], skipped steps ignored.
  double mean_total(std::size_t from, std::size_t to) const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : curve)
      if (r.step >= from && r.step <= to && !r.skipped) s += r.total, ++n;
    return n ? s / double(n) : std::numeric_limits<double>::quiet_NaN();
  }
};

inline void write_loss_csv(const std::string& path, const std::vector<StepRecord>& curve) {
  std::ofstream f(path);
  if (!f) fail(ErrorKind::kIo, "cannot write " + path);
  auto put = [&f](const std::optional<double>& v) {
    f << ',';
    if (v) f << io::format_double(*v);
  };
  f << "step,total,cls,reg,mask,grad_norm\n";
  for (const auto& r : curve) {
    f << r.step << ',' << io::format_double(r.total);
    put(r.cls);
    put(r.reg);
    put(r.mask);
    f << ',' << io::format_double(r.grad_norm) << '\n';
  }
  if (!f) fail(ErrorKind::kIo, "write failed for " + path);
}

/// Step hook, mostly for tests that poison a step.
using StepHook = std::function<void(std::size_t step, model::ModelParams&)>;

/// gen -> mask -> forward -> loss -> backward -> clipped Adam, once per step.
/// Non-finite loss or gradient skips the step; too many in a row aborts.
inline TrainResult train_toy(const model::ModelConfig& mcfg, const scm::ScmGenConfig& gcfg,
                             const TrainConfig& tcfg, const StepHook& hook = {}) {
  mcfg.validate();
  gcfg.validate();
  tcfg.validate();
  TrainResult res{{}, {}, model::ModelParams::init(mcfg)};
  OptimState st;
  st.cfg = tcfg.adam;
  RngStream rng(tcfg.seed, 3);
  std::size_t bad = 0;
  for (std::size_t step = 1; step <= tcfg.steps; ++step) {
    if (hook) hook(step, res.params);
    scm::Generated table = scm::gen_dataset(gcfg, step);
    enable_grad(res.params);
    StepRecord rec;
    rec.step = step;
    LossReport rep = table_loss(mcfg, res.params, table.data, table.truth, tcfg.mask_rate,
                                tcfg.delta, rng);
    rec.total = rep.value();
    rec.cls = rep.cls;
    rec.reg = rep.reg;
    rec.mask = rep.mask;
    bool finite = std::isfinite(rec.total);
    if (finite) {
      rep.total.backward();
      rec.grad_norm = grad_norm(res.params);
      finite = std::isfinite(rec.grad_norm);
    }
    if (!finite) {
      rec.skipped = true;
      enable_grad(res.params);  // drops the poisoned gradients
      res.events.push_back("step " + std::to_string(step) + ": non-finite loss or gradient, skipped");
      res.curve.push_back(rec);
      if (++bad >= tcfg.max_bad_steps)
        fail(ErrorKind::kProperty, std::to_string(bad) + " consecutive non-finite steps, last at step " +
                                       std::to_string(step));
      continue;
    }
    bad = 0;
    adam_step(res.params, st, rec.grad_norm);
    res.curve.push_back(rec);
  }
  res.params.visit([](const std::string&, Tensor& t) {
    t.zero_grad();
    t.set_requires_grad(false);
  });
  return res;
}

}  // namespace feat::train
