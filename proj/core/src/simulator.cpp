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

#include "fimpp/simulator.hpp"

#include <cmath>
#include <exception>
#include <string>
#include <thread>

#include "fimpp/errors.hpp"

namespace fimpp {

void SimulationConfig::validate() const {
  if (!(window_end > 0.0) || !std::isfinite(window_end)) throw ConfigError("simulation: window_end must be > 0");
  if (max_events == 0) throw ConfigError("simulation: max_events must be > 0");
}

EventSequence simulate_sequence(const HawkesInstance& inst, const SimulationConfig& config, Rng& rng) {
  config.validate();
  EventSequence seq;
  seq.window_end = config.window_end;
  seq.num_marks = inst.num_marks;

  double s = 0.0;
  while (true) {
    const double bound = intensity_upper_bound(inst, seq.events, s);
    // A zero bound stays zero for the rest of the window.
    if (!(bound > 0.0)) break;
    const double u = s + rng.exponential(bound);
    if (u > config.window_end) break;
    if (!(u > s)) continue;
    const auto lambda = total_intensity(inst, seq.events, u);
    const double ratio = lambda.total / bound;
    if (ratio > 1.0 + 1e-9) {
      throw NumericalError("thinning bound violated at t=" + std::to_string(u) + ": intensity " +
                           std::to_string(lambda.total) + " > bound " + std::to_string(bound));
    }
    if (rng.uniform() < ratio) {
      double pick = rng.uniform() * lambda.total;
      std::size_t mark = 0;
      while (mark + 1 < inst.num_marks && pick >= lambda.per_mark[mark]) {
        pick -= lambda.per_mark[mark];
        ++mark;
      }
      // Skip zero-intensity marks that a rounding residue could land on.
      while (lambda.per_mark[mark] <= 0.0 && mark > 0) --mark;
      seq.events.push_back(Event{u, mark});
      if (seq.events.size() > config.max_events) {
        throw ExplosionError("simulation exceeded max_events=" + std::to_string(config.max_events));
      }
    }
    s = u;
  }
  return seq;
}

std::vector<EventSequence> simulate_dataset(const HawkesInstance& inst, std::size_t n_sequences,
                                            const SimulationConfig& config, unsigned threads) {
  std::vector<EventSequence> out(n_sequences);
  auto run = [&](std::size_t i) {
    Rng rng(config.seed, streams::kSimulation, i);
    out[i] = simulate_sequence(inst, config, rng);
  };
  const unsigned workers = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(n_sequences)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n_sequences; ++i) run(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n_sequences; i += workers) run(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::optional<Event> simulate_from_estimate(const IntensityParams& params, double t_from, double horizon, Rng& rng) {
  params.validate();
  if (t_from < params.last_event_time) throw OrderingError("simulate_from_estimate: t_from precedes last event");
  const double target = rng.exponential(1.0);
  const double mark_draw = rng.uniform();
  if (!(horizon > 0.0)) return std::nullopt;

  const double offset = t_from - params.last_event_time;
  const double base = model_compensator(params, offset);
  auto mass = [&](double delta) { return model_compensator(params, offset + delta) - base; };
  if (mass(horizon) < target) return std::nullopt;

  double lo = 0.0, hi = horizon;
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    (mass(mid) < target ? lo : hi) = mid;
  }
  const double t = t_from + 0.5 * (lo + hi);

  std::vector<double> rates(params.num_marks());
  double total = 0.0;
  for (std::size_t k = 0; k < rates.size(); ++k) {
    rates[k] = eval_model_intensity(params, t, k);
    total += rates[k];
  }
  std::size_t mark = 0;
  if (total > 0.0) {
    double pick = mark_draw * total;
    while (mark + 1 < rates.size() && pick >= rates[mark]) {
      pick -= rates[mark];
      ++mark;
    }
    while (rates[mark] <= 0.0 && mark > 0) --mark;
  }
  return Event{t, mark};
}

}  // namespace fimpp
