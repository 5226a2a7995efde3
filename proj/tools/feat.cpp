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

// feat: generation, zero-shot prediction, toy training, latency benchmark
// and the property probes. Exit codes: 0 ok, 2 io, 3 config, 4 usage,
// 5 property failure.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <new>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "feat/checkpoint.hpp"
#include "feat/io.hpp"
#include "feat/probes.hpp"
#include "feat/report.hpp"
#include "feat/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace feat;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitIo = 2;
constexpr int kExitConfig = 3;
constexpr int kExitUsage = 4;
constexpr int kExitProperty = 5;

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::kIo:
    case ErrorKind::kFormat:
    case ErrorKind::kInput: return kExitIo;
    case ErrorKind::kConfig:
    case ErrorKind::kParameter: return kExitConfig;
    case ErrorKind::kUsage:
    case ErrorKind::kDimension:
    case ErrorKind::kRank: return kExitUsage;
    case ErrorKind::kProperty: return kExitProperty;
    case ErrorKind::kContract: return kExitInternal;
  }
  return kExitInternal;
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::size_t threads = 1;
  // predict only
  std::string data, sidecar, checkpoint;
};

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

json load_config(const Common& c) {
  if (c.config.empty()) return json::object();
  try {
    return io::read_json(c.config);
  } catch (const Error& e) {
    // A config that exists but does not parse is a config problem.
    if (e.kind() == ErrorKind::kFormat) throw ConfigError("config", e.what());
    throw;
  }
}

json section(const json& j, const char* key) {
  if (!j.contains(key)) return json::object();
  if (!j[key].is_object()) throw ConfigError(key, "expected a JSON object");
  return j[key];
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw ConfigError(it.key(), "unknown key");
  }
}

fs::path out_dir(const Common& c) {
  fs::path p(c.out);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) fail(ErrorKind::kIo, "cannot create output directory " + c.out);
  return p;
}

// ------------------------------------------------------------------- gen

void cmd_gen(const Common& c, RunReport& rep) {
  auto cfg = scm::ScmGenConfig::from_json(load_config(c));
  if (c.seed) cfg.seed = *c.seed;
  rep.config = cfg.to_json();
  rep.seed = cfg.seed;
  const auto dir = out_dir(c);
  auto g = scm::gen_dataset(cfg);

  io::write_dataset_csv((dir / "data.csv").string(), g.data);
  io::write_text((dir / "meta.json").string(), g.metadata(cfg).dump(2) + "\n");
  std::string truth = "row,y\n";
  for (std::size_t i = 0; i < g.truth.size(); ++i)
    truth += std::to_string(i) + "," + io::format_double(g.truth[i]) + "\n";
  io::write_text((dir / "truth.csv").string(), truth);
  json side = {{"target", "y"},
               {"task", cfg.task.is_classification() ? "classification" : "regression"}};
  if (cfg.task.is_classification()) side["classes"] = cfg.task.classes;
  io::write_text((dir / "sidecar.json").string(), side.dump(2) + "\n");

  for (const char* f : {"data.csv", "meta.json", "truth.csv", "sidecar.json"})
    rep.artifacts.push_back((dir / f).string());
  rep.metrics["rows"] = g.data.rows;
  rep.metrics["columns"] = g.data.cols;
  rep.metrics["edge_count"] = g.graph.edges().size();
  rep.metrics["query_rows"] = g.data.query_rows().size();
}

// --------------------------------------------------------------- predict

void cmd_predict(const Common& c, RunReport& rep) {
  if (c.data.empty() || c.sidecar.empty() || c.checkpoint.empty())
    fail(ErrorKind::kUsage, "predict needs --data, --sidecar and --checkpoint");
  const json extra = load_config(c);
  reject_unknown(extra, {});
  const auto side = io::parse_sidecar(io::read_json(c.sidecar));
  const auto table = io::read_csv(c.data);
  const auto ds = io::to_dataset(table, side);
  auto loaded = checkpoint::load(c.checkpoint);
  const std::uint64_t seed = c.seed.value_or(loaded.config.seed);
  rep.config = {{"model", loaded.config.to_json()}, {"data", c.data}, {"checkpoint", c.checkpoint}};
  rep.seed = seed;

  NoGradGuard ng;
  RngStream rng(seed, 4);
  const auto fr = model::forward(ds, loaded.config, loaded.params, rng);
  const std::size_t nq = ds.rows - fr.context;
  std::string csv = "row,prediction";
  const bool cls = ds.task.is_classification();
  const std::size_t k = ds.task.classes;
  if (cls)
    for (std::size_t j = 0; j < k; ++j) csv += ",p" + std::to_string(j);
  csv += "\n";
  if (cls) {
    const Tensor prob = model::class_probabilities(fr.logits);
    for (std::size_t u = 0; u < nq; ++u) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j)
        if (prob[u * k + j] > prob[u * k + best]) best = j;
      csv += std::to_string(fr.query_row(u)) + "," + std::to_string(best);
      for (std::size_t j = 0; j < k; ++j) csv += "," + io::format_double(prob[u * k + j]);
      csv += "\n";
    }
  } else {
    const auto vals = fr.regression_values();
    for (std::size_t u = 0; u < nq; ++u)
      csv += std::to_string(fr.query_row(u)) + "," + io::format_double(vals[u]) + "\n";
  }
  const auto dir = out_dir(c);
  io::write_text((dir / "predictions.csv").string(), csv);
  rep.artifacts.push_back((dir / "predictions.csv").string());
  rep.metrics["query_rows"] = nq;
  rep.metrics["context_rows"] = fr.context;
  rep.events.insert(rep.events.end(), fr.warnings.begin(), fr.warnings.end());
}

// --------------------------------------------------------- bench-latency

struct BenchConfig {
  model::ModelConfig model;
  std::vector<std::size_t> n_list = {4096, 8192, 16384, 32768, 65536};
  std::size_t D = 20;
  std::size_t repeats = 20;
  std::size_t warmup = 5;
  double context_fraction = 0.5;
  double ratio_max = 2.4;

  static BenchConfig from_json(const json& j) {
    BenchConfig b;
    // Bench defaults differ from the model defaults in depth only. Merge raw
    // keys, not a resolved config: d_hidden and d_ff must follow d.
    json m = {{"L", 1}, {"feature_subblocks", 1}, {"afbm_layers", 1}};
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      try {
        if (k == "model") m.update(*it);
        else if (k == "n_list") b.n_list = json_uint_list(*it);
        else if (k == "D") b.D = json_uint(*it);
        else if (k == "repeats") b.repeats = json_uint(*it);
        else if (k == "warmup") b.warmup = json_uint(*it);
        else if (k == "context_fraction") b.context_fraction = it->get<double>();
        else if (k == "ratio_max") b.ratio_max = it->get<double>();
        else throw ConfigError(k, "unknown key");
      } catch (const json::exception& e) {
        throw ConfigError(k, e.what());
      }
    }
    b.model = model::ModelConfig::from_json(m);
    if (b.n_list.empty()) throw ConfigError("n_list", "must not be empty");
    for (std::size_t i = 0; i < b.n_list.size(); ++i) {
      if (b.n_list[i] < 2) throw ConfigError("n_list", "every N must be at least 2");
      if (i > 0 && b.n_list[i] <= b.n_list[i - 1]) throw ConfigError("n_list", "must be ascending");
    }
    if (b.D == 0) throw ConfigError("D", "must be positive");
    if (b.repeats == 0) throw ConfigError("repeats", "must be positive");
    if (!(b.context_fraction > 0 && b.context_fraction < 1))
      throw ConfigError("context_fraction", "must lie in (0, 1)");
    return b;
  }

  json to_json() const {
    return {{"model", model.to_json()}, {"n_list", n_list}, {"D", D},
            {"repeats", repeats},        {"warmup", warmup}, {"context_fraction", context_fraction},
            {"ratio_max", ratio_max}};
  }
};

TabularDataset random_table(std::size_t n, std::size_t d, double ctx, RngStream& rng) {
  TabularDataset ds;
  ds.rows = n;
  ds.cols = d;
  ds.x.resize(n * d);
  for (auto& v : ds.x) v = rng.normal();
  ds.observed.assign(n * d, true);
  ds.y.resize(n);
  ds.y_observed.resize(n);
  const auto nc = std::max<std::size_t>(1, static_cast<std::size_t>(ctx * double(n)));
  for (std::size_t i = 0; i < n; ++i) {
    ds.y[i] = double(rng.index(2));
    ds.y_observed[i] = i < nc;
  }
  return ds;
}

/// Least-squares quadratic coefficient of y over x, computed exactly in
/// rationals scaled to integers (x, y are integers).
long double quadratic_coefficient(const std::vector<double>& x, const std::vector<double>& y) {
  // Normal equations for y = c2 x^2 + c1 x + c0, solved in long double.
  long double s[5] = {0, 0, 0, 0, 0}, t[3] = {0, 0, 0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    long double p = 1;
    for (int k = 0; k < 5; ++k) {
      s[k] += p;
      if (k < 3) t[k] += p * y[i];
      p *= x[i];
    }
  }
  long double a[3][4] = {{s[0], s[1], s[2], t[0]}, {s[1], s[2], s[3], t[1]}, {s[2], s[3], s[4], t[2]}};
  for (int col = 0; col < 3; ++col)
    for (int r = col + 1; r < 3; ++r) {
      const long double f = a[r][col] / a[col][col];
      for (int k = col; k < 4; ++k) a[r][k] -= f * a[col][k];
    }
  return a[2][3] / a[2][2];
}

void cmd_bench(const Common& c, RunReport& rep) {
  auto b = BenchConfig::from_json(load_config(c));
  if (c.seed) b.model.seed = *c.seed;
  rep.config = b.to_json();
  rep.seed = b.model.seed;
  const auto params = model::ModelParams::init(b.model);
  std::string csv = "N,mean_ms,std_ms,flops\n";
  std::vector<double> ns, flops, means;
  for (std::size_t n : b.n_list) {
    const auto f = model::flop_count(b.model, n, b.D).total();
    ns.push_back(double(n));
    flops.push_back(double(f));
    try {
      RngStream drng(rep.seed, 50 + n);
      const auto ds = random_table(n, b.D, b.context_fraction, drng);
      NoGradGuard ng;
      std::vector<double> times;
      for (std::size_t r = 0; r < b.warmup + b.repeats; ++r) {
        RngStream rng(rep.seed, 60);
        const auto t0 = Clock::now();
        auto fr = model::forward(ds, b.model, params, rng);
        const double ms = ms_since(t0);
        if (r >= b.warmup) times.push_back(ms);
      }
      double m = 0, v = 0;
      for (double t : times) m += t / double(times.size());
      for (double t : times) v += (t - m) * (t - m) / double(times.size());
      means.push_back(m);
      csv += std::to_string(n) + "," + io::format_double(m) + "," + io::format_double(std::sqrt(v)) +
             "," + std::to_string(f) + "\n";
      std::cerr << "bench N=" << n << " mean_ms=" << m << "\n";
    } catch (const std::bad_alloc&) {
      means.push_back(std::nan(""));
      csv += std::to_string(n) + ",-,-," + std::to_string(f) + "\n";
      rep.events.push_back("N=" + std::to_string(n) + ": out of memory");
    }
  }
  const auto dir = out_dir(c);
  io::write_text((dir / "latency.csv").string(), csv);
  rep.artifacts.push_back((dir / "latency.csv").string());

  // FLOPs are exact integers; the fitted curvature must vanish.
  const long double c2 = ns.size() >= 3 ? quadratic_coefficient(ns, flops) : 0.0L;
  bool exact_linear = true;
  for (std::size_t i = 2; i < ns.size(); ++i) {
    // Equal-step check on integers: (f_i - f_0)(n_1 - n_0) == (f_1 - f_0)(n_i - n_0).
    const auto n0 = b.n_list[0], n1 = b.n_list[1], ni = b.n_list[i];
    const auto f0 = model::flop_count(b.model, n0, b.D).total();
    const auto f1 = model::flop_count(b.model, n1, b.D).total();
    const auto fi = model::flop_count(b.model, ni, b.D).total();
    exact_linear = exact_linear && (fi - f0) * (n1 - n0) == (f1 - f0) * (ni - n0);
  }
  rep.metrics["flops_quadratic_coefficient_fit"] = double(c2);
  rep.add(Property::equals("flops_collinear_in_N", exact_linear ? 1.0 : 0.0, 1.0));
  json ratios = json::array();
  for (std::size_t i = 1; i < means.size(); ++i) {
    if (b.n_list[i] != 2 * b.n_list[i - 1]) continue;
    const double r = means[i] / means[i - 1];
    ratios.push_back(r);
    rep.add(Property::at_most("time_ratio_" + std::to_string(b.n_list[i]), std::isnan(r) ? 1e300 : r,
                              b.ratio_max));
  }
  rep.metrics["time_ratios"] = ratios;
}

// ---------------------------------------------------------------- probes

template <typename Cfg, typename Fn>
void run_probe(const Common& c, RunReport& rep, Fn&& probe) {
  const auto cfg = Cfg::from_json(load_config(c));
  rep.config = cfg.to_json();
  rep.seed = c.seed.value_or(0);
  probe(cfg, rep.seed, rep);
}

// ------------------------------------------------------------- train-toy

void cmd_train(const Common& c, RunReport& rep) {
  const json j = load_config(c);
  reject_unknown(j, {"model", "gen", "train"});
  auto mcfg = model::ModelConfig::from_json(section(j, "model"));
  auto gcfg = scm::ScmGenConfig::from_json(section(j, "gen"));
  auto tcfg = train::TrainConfig::from_json(section(j, "train"));
  if (c.seed) mcfg.seed = gcfg.seed = tcfg.seed = *c.seed;
  rep.config = {{"model", mcfg.to_json()}, {"gen", gcfg.to_json()}, {"train", tcfg.to_json()}};
  rep.seed = tcfg.seed;
  const auto dir = out_dir(c);

  auto res = train::train_toy(mcfg, gcfg, tcfg);
  train::write_loss_csv((dir / "loss.csv").string(), res.curve);
  checkpoint::save((dir / "checkpoint.bin").string(), mcfg, res.params);
  rep.artifacts = {(dir / "loss.csv").string(), (dir / "checkpoint.bin").string()};
  rep.events = res.events;
  const std::size_t steps = tcfg.steps, w = std::min<std::size_t>(20, steps / 2);
  rep.metrics["steps"] = steps;
  rep.metrics["parameters"] = res.params.parameter_count();
  if (w > 0) {
    rep.metrics["mean_total_first"] = res.mean_total(1, w);
    rep.metrics["mean_total_last"] = res.mean_total(steps - w + 1, steps);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"feat: tabular in-context learning with linear-time sample mixing"};
  app.require_subcommand(1);
  Common c;
  auto add_common = [&c](CLI::App* sub) {
    sub->add_option("--config", c.config, "JSON config file");
    sub->add_option("--seed", c.seed, "RNG seed (overrides config)");
    sub->add_option("--out", c.out, "output directory");
    sub->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
  };
  struct Cmd {
    const char* name;
    const char* help;
    std::function<void(const Common&, RunReport&)> run;
  };
  const std::vector<Cmd> cmds = {
      {"gen", "generate a synthetic table", cmd_gen},
      {"predict", "zero-shot prediction with a checkpoint", cmd_predict},
      {"bench-latency", "forward latency over N", cmd_bench},
      {"check-variance", "memory variance probes",
       [](const Common& c, RunReport& r) { run_probe<probes::VarianceConfig>(c, r, probes::check_variance); }},
      {"check-influence", "influence symmetry probes",
       [](const Common& c, RunReport& r) { run_probe<probes::InfluenceConfig>(c, r, probes::check_influence); }},
      {"check-grad", "end-to-end finite-difference check",
       [](const Common& c, RunReport& r) { run_probe<probes::GradConfig>(c, r, probes::check_grad); }},
      {"scan-oracle", "scan against direct summation",
       [](const Common& c, RunReport& r) { run_probe<probes::ScanOracleConfig>(c, r, probes::check_scan_oracle); }},
      {"train-toy", "toy pretraining on generated tables", cmd_train},
  };
  std::vector<CLI::App*> subs;
  for (const auto& cmd : cmds) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    add_common(sub);
    if (std::string(cmd.name) == "predict") {
      sub->add_option("--data", c.data, "CSV with header; empty target = query row");
      sub->add_option("--sidecar", c.sidecar, "JSON target declaration");
      sub->add_option("--checkpoint", c.checkpoint, "model checkpoint");
    }
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  RunReport rep;
  int code = kExitOk;
  const auto t0 = Clock::now();
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    rep.command = cmds[i].name;
    try {
      detail::worker_count() = c.threads;
      cmds[i].run(c, rep);
      if (!rep.passed()) code = kExitProperty;
    } catch (const ConfigError& e) {
      std::cerr << "feat: " << e.what() << " (field: " << e.field() << ")\n";
      return kExitConfig;
    } catch (const Error& e) {
      std::cerr << "feat: " << e.what() << "\n";
      return exit_code(e.kind());
    } catch (const std::bad_alloc&) {
      std::cerr << "feat: out of memory\n";
      return kExitInternal;
    } catch (const std::exception& e) {
      std::cerr << "feat: " << e.what() << "\n";
      return kExitInternal;
    }
  }
  rep.wall_ms["total"] = ms_since(t0);
  const std::string doc = rep.to_json().dump(2);
  try {
    io::write_text((out_dir(c) / "report.json").string(), doc + "\n");
  } catch (const Error& e) {
    std::cerr << "feat: " << e.what() << "\n";
    return kExitIo;
  }
  std::cout << doc << "\n";
  for (const auto& f : rep.failures()) std::cerr << "feat: property failed: " << f << "\n";
  return code;
}
