/*
 * Copyright 2026 The fimpp Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
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
#include <random>

namespace fimpp {

/// SplitMix64 finalizer; used to derive independent stream seeds from
/// (seed, stream, index) counters.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                                    std::uint64_t index = 0) {
  return mix64(mix64(mix64(seed) ^ stream) ^ (index * 0xd1342543de82ef95ULL));
}

/// Well-known stream tags so different consumers of one seed never collide.
namespace streams {
inline constexpr std::uint64_t kPriorInstance = 0x5052494f52ULL;
inline constexpr std::uint64_t kSimulation = 0x53494dULL;
inline constexpr std::uint64_t kWeightsInit = 0x494e4954ULL;
inline constexpr std::uint64_t kTrainStep = 0x5354455050ULL;
inline constexpr std::uint64_t kFinetune = 0x46494e45ULL;
inline constexpr std::uint64_t kSplit = 0x53504c4954ULL;
inline constexpr std::uint64_t kForecast = 0x464f5245ULL;
inline constexpr std::uint64_t kEval = 0x4556414cULL;
}  // namespace streams

/// Per-stream generator. Uniforms are built from the top 53 bits so the
/// sequence of draws is identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0)
      : engine_(derive_seed(seed, stream, index)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(
                    static_cast<std::uint64_t>(uniform() * static_cast<double>(span)) % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Inverse-CDF exponential draw with the given rate.
  double exponential(double rate) { return -std::log1p(-uniform()) / rate; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace fimpp
