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
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "fimpp/events.hpp"
#include "fimpp/hawkes.hpp"
#include "fimpp/likelihood.hpp"
#include "fimpp/model.hpp"
#include "fimpp/tensor.hpp"

namespace fimpp {

/// A context encoded once and queried for many histories.
class InferenceSession {
 public:
  InferenceSession(const ModelWeights& weights, std::vector<EventSequence> context);

  /// Estimated intensity after `history`, in original time units, restricted to
  /// the context's K.
  IntensityParams params_after(std::span<const Event> history) const;

  const ModelWeights& weights() const { return *weights_; }
  double time_scale() const { return time_scale_; }
  std::size_t num_marks() const { return num_marks_; }

 private:
  const ModelWeights* weights_;
  std::vector<EventSequence> context_;
  double time_scale_ = 1.0;
  std::size_t num_marks_ = 1;
  Tensor context_repr_;
};

/// Model whose head ignores the network and emits mu = alpha = rate_k (in
/// normalized units) for every history. A rate of 0 gives a null intensity.
ModelWeights constant_intensity_model(const ModelConfig& config, const std::vector<double>& normalized_rates,
                                      std::uint64_t seed = 0);

/// "start:stop:count" (inclusive ends) or a comma-separated list of times.
std::vector<double> parse_grid(const std::string& spec);

struct HistorySelection {
  EventSequence history;
  /// Index of the dataset sequence the history came from, if any.
  std::optional<std::size_t> source;
};

/// "empty", "seq:<i>@prefix:<n>", or inline JSON: either a sequence object
/// {"events":[{"t","k"}],"T","K"} or a bare event array.
HistorySelection parse_history_spec(const std::string& spec, const std::vector<EventSequence>& dataset);

struct CurvePoint {
  double t = 0.0;
  std::size_t mark = 0;
  double lambda_hat = 0.0;
  std::optional<double> lambda_true;
};

/// Intensity at each grid time t given the history events strictly before t.
std::vector<CurvePoint> intensity_curve(const InferenceSession& session, const EventSequence& history,
                                        const std::vector<double>& grid, const HawkesInstance* truth = nullptr);

std::string curve_to_csv(const std::vector<CurvePoint>& curve);

struct EvalOptions {
  /// Context sequences per instance; the remaining sequences are targets.
  std::size_t context_size = 31;
  std::size_t grid_points = 200;
  std::size_t forecast_samples = 1000;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct InstanceMetrics {
  std::int64_t instance_id = -1;
  std::size_t targets = 0;
  std::size_t events = 0;
  double model_nll_per_event = 0.0;
  std::optional<double> true_nll_per_event;
  std::optional<double> nll_gap;
  std::optional<double> intensity_rmse;
  /// Over all target events: |median of sampled next times - observed time|.
  double next_time_mae = 0.0;
  double next_mark_accuracy = 0.0;
  /// Compensator over the target window divided by its length.
  double mean_model_intensity = 0.0;
  std::optional<double> mean_true_intensity;
};

struct EvalReport {
  std::vector<InstanceMetrics> instances;
  InstanceMetrics aggregate;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

/// Groups `sequences` by instance_id (or treats all as one group when none is
/// set). Ground-truth metrics need `instances`, indexed by instance_id.
EvalReport evaluate(const ModelWeights& weights, const std::vector<EventSequence>& sequences,
                    const std::vector<HawkesInstance>* instances, const EvalOptions& options);

void to_json(nlohmann::json& j, const InstanceMetrics& m);
void to_json(nlohmann::json& j, const EvalReport& r);

struct ForecastOptions {
  double horizon = 1.0;
  std::size_t samples = 1000;
  /// Trajectories stop after this many sampled events.
  std::size_t max_events = 1000;
  std::uint64_t seed = 0;
  std::vector<double> quantiles{0.05, 0.25, 0.5, 0.75, 0.95};
};

struct ForecastResult {
  double t_start = 0.0;
  double horizon = 0.0;
  std::vector<std::vector<Event>> trajectories;
  /// Quantiles of the first sampled event time among trajectories that have one.
  std::vector<std::pair<double, double>> next_time_quantiles;
  double no_event_fraction = 0.0;
  /// Share of trajectories whose first event carries mark k.
  std::vector<double> next_mark_distribution;
  bool truncated = false;
};

/// Rolls the estimated intensity forward from history.window_end, re-decoding
/// the history after each sampled event.
ForecastResult forecast(const InferenceSession& session, const EventSequence& history, const ForecastOptions& options);

void to_json(nlohmann::json& j, const ForecastResult& r);

}  // namespace fimpp
