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

#include <string>
#include <vector>

#include "json.hpp"

namespace feat {

/// One asserted property: value compared against an explicit threshold.
struct Property {
  std::string name;
  double value = 0.0;
  std::string op;  // "<", "<=", ">=", "in", "=="
  double lo = 0.0;
  double hi = 0.0;  // only for "in"
  bool pass = false;

  static Property less(std::string name, double v, double t) {
    return {std::move(name), v, "<", t, 0.0, v < t};
  }
  static Property at_most(std::string name, double v, double t) {
    return {std::move(name), v, "<=", t, 0.0, v <= t};
  }
  static Property at_least(std::string name, double v, double t) {
    return {std::move(name), v, ">=", t, 0.0, v >= t};
  }
  static Property within(std::string name, double v, double lo, double hi) {
    return {std::move(name), v, "in", lo, hi, v >= lo && v <= hi};
  }
  static Property equals(std::string name, double v, double t) {
    return {std::move(name), v, "==", t, 0.0, v == t};
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"name", name}, {"value", value}, {"op", op}, {"pass", pass}};
    if (op == "in") {
      j["threshold"] = {lo, hi};
    } else {
      j["threshold"] = lo;
    }
    return j;
  }
};

/// Machine-readable outcome of one command.
struct RunReport {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  nlohmann::json metrics = nlohmann::json::object();
  std::vector<Property> properties;
  nlohmann::json wall_ms = nlohmann::json::object();
  std::vector<std::string> artifacts;
  std::vector<std::string> events;

  bool passed() const {
    for (const auto& p : properties)
      if (!p.pass) return false;
    return true;
  }

  std::vector<std::string> failures() const {
    std::vector<std::string> out;
    for (const auto& p : properties)
      if (!p.pass) out.push_back(p.name);
    return out;
  }

  void add(Property p) { properties.push_back(std::move(p)); }
  void add_all(const std::vector<Property>& ps) {
    properties.insert(properties.end(), ps.begin(), ps.end());
  }

  nlohmann::json to_json() const {
    nlohmann::json props = nlohmann::json::array();
    for (const auto& p : properties) props.push_back(p.to_json());
    return {{"command", command}, {"config", config},       {"seed", seed},
            {"metrics", metrics}, {"properties", props},    {"passed", passed()},
            {"wall_ms", wall_ms}, {"artifacts", artifacts}, {"events", events}};
  }
};

}  // namespace feat
