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
#include <functional>
#include <span>
#include <vector>

#include "fimpp/events.hpp"
#include "fimpp/hawkes.hpp"
#include "fimpp/tensor.hpp"

namespace fimpp {

/// Intensity floor used inside log terms.
inline constexpr double kLogIntensityFloor = 1e-10;
/// Below this value of beta * delta the compensator uses its series form.
inline constexpr double kSeriesThreshold = 1e-6;

/// Per-mark (mu, alpha, beta) triples defining
///   lambda(t, k) = mu_k + (alpha_k - mu_k) exp(-beta_k (t - last_event_time)).
struct IntensityParams {
  double last_event_time = 0.0;
  std::vector<double> mu;
  std::vector<double> alpha;
  std::vector<double> beta;

  static IntensityParams constant(std::vector<double> rates, double last_event_time = 0.0);

  std::size_t num_marks() const { return mu.size(); }
  /// Throws ContractError on size mismatch, negative or non-finite entries.
  void validate() const;
};

double eval_model_intensity(const IntensityParams& params, double t, std::size_t mark);

/// Integral of mark `mark`'s intensity over [last_event_time, last_event_time + delta].
double model_mark_compensator(const IntensityParams& params, std::size_t mark, double delta);
/// Sum of model_mark_compensator over all marks.
double model_compensator(const IntensityParams& params, double delta);

struct SequenceNLL {
  double total = 0.0;
  std::vector<double> per_event_log_intensity;
  double compensator = 0.0;
  std::size_t events_count = 0;

  double per_event() const { return total / static_cast<double>(events_count == 0 ? 1 : events_count); }
};

/// NLL of a sequence under one IntensityParams per interval: n events give n+1
/// intervals, interval i running from event i-1 (or 0) to event i (or T).
SequenceNLL sequence_nll_model(const EventSequence& target, std::span<const IntensityParams> params_per_interval);

/// Differentiable model NLL. `params` is [n+1, 3*max_marks] with row i holding
/// (mu, alpha, beta) for every mark, interleaved as [mu_0, alpha_0, beta_0, mu_1, ...].
/// Times are divided by time_scale before evaluation; the result is in nats
/// of the normalized process. Only marks < target.num_marks contribute.
Tensor model_nll_loss(const Tensor& params, const EventSequence& target, double time_scale);

/// Extracts the first num_marks triples of a [*, 3*max_marks] parameter row.
IntensityParams params_from_row(std::span<const double> row, std::size_t num_marks, double last_event_time);

/// Adaptive Simpson quadrature. Throws NumericalError if an interval has not
/// met its share of `tolerance` after max_depth bisections.
double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tolerance,
                        int max_depth = 20);

/// Integral of the clipped ground-truth intensity of `mark` over [a, b].
/// `history` holds the events at or before a; no event may fall inside (a, b).
/// Zero crossings of the unclipped intensity are located on a scan grid of
/// `scan_points` cells and used as breakpoints for the quadrature.
double ground_truth_mark_compensator(const HawkesInstance& inst, std::span<const Event> history, double a,
                                     double b, std::size_t mark, std::size_t scan_points = 8,
                                     double tolerance = 1e-7);

/// Integral of the total ground-truth intensity over [a, b] for a sequence
/// whose events inside (a, b) act as breakpoints.
double ground_truth_compensator(const HawkesInstance& inst, const EventSequence& sequence, double a, double b,
                                std::size_t scan_points = 8);

SequenceNLL sequence_nll_ground_truth(const HawkesInstance& inst, const EventSequence& target,
                                      std::size_t quadrature_points_per_interval = 8);

}  // namespace fimpp
