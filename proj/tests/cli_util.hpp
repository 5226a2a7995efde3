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

// Helpers for tests that drive the feat binary through a shell.

#pragma once

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace feat::testing {

namespace fs = std::filesystem;
using nlohmann::json;

inline std::string quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

/// Runs `bin args...`, stdout and stderr go to files under `log_dir`.
/// Returns the process exit status, or -1 if it did not exit normally.
inline int run(const std::string& bin, const std::vector<std::string>& args,
               const fs::path& log_dir) {
  fs::create_directories(log_dir);
  std::string cmd = quote(bin);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " >" + quote((log_dir / "stdout.txt").string());
  cmd += " 2>" + quote((log_dir / "stderr.txt").string());
  const int status = std::system(cmd.c_str());
  if (status == -1 || !WIFEXITED(status)) return -1;
  return WEXITSTATUS(status);
}

inline std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

inline fs::path write_json(const fs::path& p, const json& j) {
  write_file(p, j.dump(2));
  return p;
}

inline json read_json(const fs::path& p) { return json::parse(slurp(p)); }

/// Report minus wall clock and artifact paths, for run-to-run comparisons.
inline json stable_report(const fs::path& p) {
  json r = read_json(p);
  r.erase("wall_ms");
  r.erase("artifacts");  // paths differ by output directory
  return r;
}

inline std::vector<std::vector<std::string>> read_csv_rows(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

/// A representative invocation and the exit status the contract requires.
struct ExitCase {
  std::string name;
  std::vector<std::string> args;  // "{dir}" is replaced by a scratch directory
  int expected;
};

// Inputs referenced here are written by write_exit_fixtures.
inline std::vector<ExitCase> exit_cases() {
  return {
      {"no_subcommand", {}, 4},
      {"unknown_subcommand", {"frobnicate"}, 4},
      {"unknown_flag", {"gen", "--bogus"}, 4},
      {"bad_thread_count", {"gen", "--threads", "0", "--out", "{dir}/o"}, 4},
      {"config_not_json", {"gen", "--config", "{dir}/garbage.json", "--out", "{dir}/o"}, 3},
      {"config_unknown_key", {"gen", "--config", "{dir}/unknown.json", "--out", "{dir}/o"}, 3},
      {"config_bad_value", {"gen", "--config", "{dir}/badvalue.json", "--out", "{dir}/o"}, 3},
      {"config_missing_file", {"gen", "--config", "{dir}/absent.json", "--out", "{dir}/o"}, 2},
      {"predict_without_inputs", {"predict", "--out", "{dir}/o"}, 4},
      {"predict_missing_data",
       {"predict", "--data", "{dir}/absent.csv", "--sidecar", "{dir}/t/sidecar.json", "--checkpoint",
        "{dir}/ck.bin", "--out", "{dir}/o"},
       2},
      {"predict_corrupt_checkpoint",
       {"predict", "--data", "{dir}/t/data.csv", "--sidecar", "{dir}/t/sidecar.json", "--checkpoint",
        "{dir}/garbage.json", "--out", "{dir}/o"},
       2},
      {"predict_sidecar_missing_target",
       {"predict", "--data", "{dir}/t/data.csv", "--sidecar", "{dir}/wrong_target.json",
        "--checkpoint", "{dir}/ck.bin", "--out", "{dir}/o"},
       3},
      {"predict_no_context_rows",
       {"predict", "--data", "{dir}/no_context.csv", "--sidecar", "{dir}/t/sidecar.json",
        "--checkpoint", "{dir}/ck.bin", "--out", "{dir}/o"},
       4},
      {"property_failure", {"scan-oracle", "--config", "{dir}/zero_tol.json", "--out", "{dir}/o"}, 5},
      {"success", {"scan-oracle", "--config", "{dir}/small_scan.json", "--out", "{dir}/o"}, 0},
  };
}

inline std::vector<std::string> expand(const std::vector<std::string>& args, const fs::path& dir) {
  std::vector<std::string> out;
  for (auto a : args) {
    const auto pos = a.find("{dir}");
    if (pos != std::string::npos) a.replace(pos, 5, dir.string());
    out.push_back(a);
  }
  return out;
}

/// Writes the inputs the exit cases refer to. Uses the binary itself for a
/// small table (t/) and a two-step checkpoint (ck.bin). Returns false if
/// either helper run fails.
inline bool write_exit_fixtures(const std::string& bin, const fs::path& dir) {
  fs::create_directories(dir);
  write_file(dir / "garbage.json", "{ this is not json");
  write_json(dir / "unknown.json", {{"no_such_field", 1}});
  write_json(dir / "badvalue.json", {{"D", -3}});
  write_json(dir / "wrong_target.json", {{"target", "not_a_column"}, {"task", "classification"}});
  write_json(dir / "zero_tol.json", {{"tol", 0.0}, {"seeds", 2}});
  write_json(dir / "small_scan.json", {{"seeds", 2}, {"n_max", 8}});
  write_json(dir / "gen.json", {{"N", 10}, {"D", 3}, {"D_root", 2}, {"query_fraction", 0.3}});
  write_json(dir / "train.json",
             {{"model", {{"d", 8}, {"L", 1}, {"d_state", 4}, {"heads", 2}, {"C_max", 2}}},
              {"gen", {{"N", 12}, {"D", 3}, {"D_root", 2}, {"query_fraction", 0.25}}},
              {"train", {{"steps", 2}}}});
  if (run(bin, {"gen", "--config", (dir / "gen.json").string(), "--seed", "3", "--out",
                (dir / "t").string()},
          dir / "log_gen") != 0)
    return false;
  if (run(bin, {"train-toy", "--config", (dir / "train.json").string(), "--out",
                (dir / "tt").string()},
          dir / "log_train") != 0)
    return false;
  fs::copy_file(dir / "tt" / "checkpoint.bin", dir / "ck.bin", fs::copy_options::overwrite_existing);
  // Every target cell empty: no labelled context rows.
  std::istringstream in(slurp(dir / "t" / "data.csv"));
  std::string line, out;
  std::getline(in, line);
  out += line + "\n";
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',') + 1) + "\n";
  write_file(dir / "no_context.csv", out);
  return true;
}

}  // namespace feat::testing
