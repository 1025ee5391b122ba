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
#include <span>
#include <vector>

namespace fimpp {

struct Event {
  double time = 0.0;
  std::size_t mark = 0;

  friend bool operator==(const Event&, const Event&) = default;
};

/// Events on the window (0, window_end], strictly increasing in time. A prefix
/// of a sequence serves as the history H_t for any t after its last event.
struct EventSequence {
  std::vector<Event> events;
  double window_end = 0.0;
  std::size_t num_marks = 1;
  std::int64_t instance_id = -1;

  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }
  std::span<const Event> prefix(std::size_t n) const { return std::span<const Event>(events).first(n); }
  /// Events strictly before t.
  std::span<const Event> history_before(double t) const;
  /// Throws ValidationError describing the first broken invariant.
  void validate() const;

  friend bool operator==(const EventSequence&, const EventSequence&) = default;
};

double last_time(std::span<const Event> history);

/// Window length per event pooled over the sequences (the mean gap); 1 when
/// the sequences hold no events.
double mean_inter_event_gap(std::span<const EventSequence> sequences);

}  // namespace fimpp
