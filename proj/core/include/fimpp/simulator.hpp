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

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "fimpp/events.hpp"
#include "fimpp/hawkes.hpp"
#include "fimpp/likelihood.hpp"
#include "fimpp/rng.hpp"

namespace fimpp {

struct SimulationConfig {
  double window_end = 50.0;
  std::size_t max_events = 10000;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Ogata thinning on (0, window_end]. The dominating rate is refreshed after
/// every candidate, accepted or not. Throws ExplosionError when more than
/// max_events events are accepted.
EventSequence simulate_sequence(const HawkesInstance& inst, const SimulationConfig& config, Rng& rng);

/// n independent sequences; sequence i uses the stream (config.seed, i), so the
/// result does not depend on `threads`.
std::vector<EventSequence> simulate_dataset(const HawkesInstance& inst, std::size_t n_sequences,
                                            const SimulationConfig& config, unsigned threads = 1);

/// Next event after t_from under the estimated intensity, sampled by inverting
/// the closed-form compensator against an Exponential(1) draw (bisection to
/// 1e-10). Returns nullopt when no event occurs within (t_from, t_from + horizon].
/// Always consumes exactly two uniforms from rng.
std::optional<Event> simulate_from_estimate(const IntensityParams& params, double t_from, double horizon, Rng& rng);

}  // namespace fimpp
