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

// CSV tables (header row, '.' decimal, empty field = missing) and the JSON
// sidecar {"target": name, "task": "classification"|"regression", "classes": n}.

#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "feat/dataset.hpp"
#include "feat/json_util.hpp"
#include "json.hpp"

namespace feat::io {

using nlohmann::json;

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::optional<double>>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return j;
    throw ConfigError("target", "column '" + name + "' not found in the CSV header");
  }
};

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::optional<double> parse_cell(const std::string& raw, std::size_t line) {
  std::size_t b = raw.find_first_not_of(" \t"), e = raw.find_last_not_of(" \t");
  if (b == std::string::npos) return std::nullopt;
  const std::string s = raw.substr(b, e - b + 1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    fail(ErrorKind::kFormat, "line " + std::to_string(line) + ": cannot parse '" + s + "'");
  return v;
}

inline CsvTable parse_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::kFormat, "empty CSV");
  t.header = split_line(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split_line(line);
    if (fields.size() != t.header.size())
      fail(ErrorKind::kFormat, "line " + std::to_string(lineno) + ": expected " +
                                   std::to_string(t.header.size()) + " fields");
    std::vector<std::optional<double>> row;
    for (const auto& f : fields) row.push_back(parse_cell(f, lineno));
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorKind::kIo, "cannot open " + path);
  return parse_csv(f);
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Sidecar {
  std::string target;
  Task task;
  bool classes_given = false;
};

inline Sidecar parse_sidecar(const json& j) {
  if (!j.is_object()) throw ConfigError("sidecar", "expected a JSON object");
  if (!j.contains("target") || !j["target"].is_string())
    throw ConfigError("target", "sidecar must declare the target column");
  Sidecar s;
  s.target = j["target"].get<std::string>();
  const std::string task = j.value("task", "");
  if (task == "classification") s.task.type = TaskType::kClassification;
  else if (task == "regression") s.task.type = TaskType::kRegression;
  else throw ConfigError("task", "must be classification or regression");
  if (j.contains("classes")) {
    if (!j["classes"].is_number_integer() || j["classes"].get<long>() < 2)
      throw ConfigError("classes", "must be an integer >= 2");
    s.task.classes = json_uint(j["classes"]);
    s.classes_given = true;
  }
  return s;
}

inline json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorKind::kIo, "cannot open " + path);
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, path + ": " + e.what());
  }
}

/// Rows with an empty target are queries. Class count defaults to max + 1.
inline TabularDataset to_dataset(const CsvTable& t, const Sidecar& s) {
  const std::size_t target = t.column(s.target);
  TabularDataset ds;
  ds.rows = t.rows.size();
  ds.cols = t.header.size() - 1;
  ds.task = s.task;
  double max_class = -1;
  for (const auto& row : t.rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j == target) continue;
      ds.x.push_back(row[j].value_or(0.0));
      ds.observed.push_back(row[j].has_value());
    }
    ds.y.push_back(row[target].value_or(0.0));
    ds.y_observed.push_back(row[target].has_value());
    if (row[target]) max_class = std::max(max_class, *row[target]);
  }
  if (ds.task.is_classification() && !s.classes_given)
    ds.task.classes = std::max<std::size_t>(2, static_cast<std::size_t>(max_class) + 1);
  ds.validate();
  return ds;
}

inline std::vector<std::string> feature_names(const CsvTable& t, const std::string& target) {
  std::vector<std::string> out;
  for (const auto& h : t.header)
    if (h != target) out.push_back(h);
  return out;
}

/// Header x0..x{D-1},y; missing cells and query labels are empty fields.
inline void write_dataset_csv(const std::string& path, const TabularDataset& ds) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) fail(ErrorKind::kIo, "cannot open " + path + " for writing");
  for (std::size_t j = 0; j < ds.cols; ++j) f << "x" << j << ",";
  f << "y\n";
  for (std::size_t i = 0; i < ds.rows; ++i) {
    for (std::size_t j = 0; j < ds.cols; ++j) {
      if (ds.is_observed(i, j)) f << format_double(ds.at(i, j));
      f << ",";
    }
    if (ds.y_observed[i])
      f << (ds.task.is_classification() ? std::to_string(static_cast<long>(ds.y[i]))
                                        : format_double(ds.y[i]));
    f << "\n";
  }
  if (!f) fail(ErrorKind::kIo, "write failed for " + path);
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot open " + path + " for writing");
  f << text;
  if (!f) fail(ErrorKind::kIo, "write failed for " + path);
}

}  // namespace feat::io
