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
#include <cstdint>
#include <limits>
#include <random>

namespace feat {

namespace detail {

inline constexpr std::uint64_t splitmix_finalize(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Counter-based random stream. Draw k of stream (seed, stream_id) is a pure
/// function of (seed, stream_id, k), so sub-streams handed to workers replay
/// identically regardless of scheduling.
///
/// Satisfies UniformRandomBitGenerator, so the <random> distributions can be
/// driven directly from it.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream() = default;
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed), stream_id_(stream_id) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() {
    const std::uint64_t key =
        detail::splitmix_finalize(seed_ ^ 0x9E3779B97F4A7C15ULL) ^
        detail::splitmix_finalize(stream_id_ * 0xD1B54A32D192ED03ULL + 1);
    return detail::splitmix_finalize(key + 0x9E3779B97F4A7C15ULL * ++counter_);
  }

  /// Independent child stream; does not advance this stream.
  RngStream split(std::uint64_t child) const {
    const std::uint64_t derived =
        detail::splitmix_finalize(seed_ + 0xA0761D6478BD642FULL * (stream_id_ + 1));
    return RngStream(derived, child);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t counter() const { return counter_; }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal(double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> dist(mean, stddev);
    return dist(*this);
  }

  double log_uniform(double lo, double hi) {
    return std::exp(uniform(std::log(lo), std::log(hi)));
  }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(*this);
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_id_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace feat
