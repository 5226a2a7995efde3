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

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "feat/errors.hpp"

namespace feat {

enum class TaskType { kClassification, kRegression };

struct Task {
  TaskType type = TaskType::kClassification;
  std::size_t classes = 2;  // ignored for regression

  bool is_classification() const { return type == TaskType::kClassification; }
};

/// Raw table: N x D features with per-cell observation flags, a label vector
/// and label flags. Rows with an observed label form the context set, the
/// others are queries.
struct TabularDataset {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> x;          // row-major N x D
  std::vector<bool> observed;     // N x D
  std::vector<double> y;          // class index (as double) or target value
  std::vector<bool> y_observed;   // N
  Task task;

  double at(std::size_t i, std::size_t j) const { return x[i * cols + j]; }
  bool is_observed(std::size_t i, std::size_t j) const { return observed[i * cols + j]; }

  std::vector<std::size_t> context_rows() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < rows; ++i)
      if (y_observed[i]) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> query_rows() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < rows; ++i)
      if (!y_observed[i]) out.push_back(i);
    return out;
  }

  /// Shape and value checks shared by every consumer.
  void validate() const {
    check(x.size() == rows * cols && observed.size() == rows * cols, ErrorKind::kInput,
          "feature matrix does not match N x D");
    check(y.size() == rows && y_observed.size() == rows, ErrorKind::kInput,
          "label vector does not match N");
    for (std::size_t k = 0; k < x.size(); ++k) {
      if (observed[k] && !std::isfinite(x[k]))
        fail(ErrorKind::kInput, "non-finite observed value at cell " + std::to_string(k));
    }
    for (std::size_t i = 0; i < rows; ++i) {
      if (!y_observed[i]) continue;
      if (!std::isfinite(y[i]))
        fail(ErrorKind::kInput, "non-finite label on context row " + std::to_string(i));
      if (task.is_classification()) {
        const double c = y[i];
        if (c < 0 || c != std::floor(c) || c >= static_cast<double>(task.classes))
          fail(ErrorKind::kInput, "class label out of range on row " + std::to_string(i));
      }
    }
  }

  /// Returns a copy with rows reordered as `order`.
  TabularDataset permuted_rows(const std::vector<std::size_t>& order) const {
    TabularDataset out = *this;
    out.rows = order.size();
    out.x.resize(order.size() * cols);
    out.observed.resize(order.size() * cols);
    out.y.resize(order.size());
    out.y_observed.resize(order.size());
    for (std::size_t r = 0; r < order.size(); ++r) {
      for (std::size_t j = 0; j < cols; ++j) {
        out.x[r * cols + j] = x[order[r] * cols + j];
        out.observed[r * cols + j] = observed[order[r] * cols + j];
      }
      out.y[r] = y[order[r]];
      out.y_observed[r] = y_observed[order[r]];
    }
    return out;
  }

  /// Returns a copy with columns reordered as `order`.
  TabularDataset permuted_cols(const std::vector<std::size_t>& order) const {
    TabularDataset out = *this;
    out.cols = order.size();
    out.x.resize(rows * order.size());
    out.observed.resize(rows * order.size());
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t c = 0; c < order.size(); ++c) {
        out.x[i * order.size() + c] = x[i * cols + order[c]];
        out.observed[i * order.size() + c] = observed[i * cols + order[c]];
      }
    return out;
  }
};

}  // namespace feat
