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

#include <functional>
#include <string>

#include "feat/numerics.hpp"

namespace feat {

/// Called once per parameter tensor, in a fixed order, with a dotted name.
using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  static LayerNormParams identity(std::size_t d) {
    return {Tensor::full({d}, 1.0), Tensor::zeros({d})};
  }

  Tensor apply(const Tensor& x) const { return ops::layer_norm(x, gain, bias); }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".gain", gain);
    fn(prefix + ".bias", bias);
  }
};

/// Overwrites every visited tensor with zeros (structural tests).
template <typename Params>
void zero_parameters(Params& p) {
  p.visit("", [](const std::string&, Tensor& t) {
    for (auto& v : t.mutable_data()) v = 0.0;
  });
}

}  // namespace feat
