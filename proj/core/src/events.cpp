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

#include "fimpp/events.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fimpp/errors.hpp"

namespace fimpp {

std::span<const Event> EventSequence::history_before(double t) const {
  const auto it = std::lower_bound(events.begin(), events.end(), t,
                                   [](const Event& e, double value) { return e.time < value; });
  return prefix(static_cast<std::size_t>(it - events.begin()));
}

void EventSequence::validate() const {
  if (!(window_end > 0.0) || !std::isfinite(window_end)) {
    throw ValidationError("window_end must be positive and finite, got " + std::to_string(window_end));
  }
  if (num_marks == 0) throw ValidationError("num_marks must be at least 1");
  double previous = 0.0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (!std::isfinite(e.time) || e.time <= 0.0 || e.time > window_end) {
      throw ValidationError("event " + std::to_string(i) + " time " + std::to_string(e.time) +
                            " outside (0, " + std::to_string(window_end) + "]");
    }
    if (i > 0 && !(e.time > previous)) {
      throw ValidationError("event " + std::to_string(i) + " time is not strictly increasing");
    }
    if (e.mark >= num_marks) {
      throw ValidationError("event " + std::to_string(i) + " mark " + std::to_string(e.mark) +
                            " >= K=" + std::to_string(num_marks));
    }
    previous = e.time;
  }
}

double last_time(std::span<const Event> history) { return history.empty() ? 0.0 : history.back().time; }

double mean_inter_event_gap(std::span<const EventSequence> sequences) {
  double window = 0.0;
  std::size_t count = 0;
  for (const auto& s : sequences) {
    window += s.window_end;
    count += s.size();
  }
  return count == 0 ? 1.0 : window / static_cast<double>(count);
}

}  // namespace fimpp
