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

#include <cstdint>
#include <limits>
#include <vector>

#include "json.hpp"

namespace feat {

/// Strict unsigned read. nlohmann's get<size_t>() wraps -3 and truncates
/// 2.5; a config count should reject both. Throws json::type_error so the
/// callers' existing handlers attach the field name.
template <typename T = std::size_t>
T json_uint(const nlohmann::json& v) {
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
    throw nlohmann::json::type_error::create(302, "expected a non-negative integer", &v);
  const auto u = v.get<std::uint64_t>();
  if (u > std::numeric_limits<T>::max())
    throw nlohmann::json::type_error::create(302, "integer out of range", &v);
  return static_cast<T>(u);
}

template <typename T = std::size_t>
std::vector<T> json_uint_list(const nlohmann::json& v) {
  if (!v.is_array()) throw nlohmann::json::type_error::create(302, "expected an array", &v);
  std::vector<T> out;
  for (const auto& e : v) out.push_back(json_uint<T>(e));
  return out;
}

}  // namespace feat
