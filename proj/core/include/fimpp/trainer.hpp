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
#include <filesystem>
#include <functional>
#include <map>
#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fimpp/events.hpp"
#include "fimpp/hawkes.hpp"
#include "fimpp/model.hpp"

namespace fimpp {

struct TrainConfig {
  std::size_t steps = 1000;
  std::size_t batch_instances = 8;
  /// m + 1: context size plus one target.
  std::size_t sequences_per_instance = 32;
  /// Targets scored per instance and step, each with the other m sequences as context.
  std::size_t rotations_per_instance = 4;
  std::size_t warmup_steps = 100;
  double peak_learning_rate = 3e-4;
  /// Floor of the cosine decay.
  double min_learning_rate = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_norm = 1.0;
  /// 0 writes only the initial and final checkpoints.
  std::size_t checkpoint_every = 0;
  /// Held-out evaluation interval while finetuning.
  std::size_t eval_every = 50;
  double heldout_fraction = 0.2;
  /// Redraws allowed per batch slot when a simulation explodes.
  std::size_t max_redraws = 100;
  std::uint64_t seed = 0;
  /// Worker threads for data generation and per-instance gradients. Results
  /// do not depend on this value.
  unsigned threads = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& config);
void from_json(const nlohmann::json& j, TrainConfig& config);

struct RunningLoss {
  std::size_t count = 0;
  double mean = 0.0;
  double last = 0.0;
  double ema = 0.0;

  void add(double value);
};

using Gradients = std::map<std::string, std::vector<double>>;

struct TrainState {
  std::size_t step = 0;
  ModelWeights weights;
  Gradients adam_m;
  Gradients adam_v;
  /// Batches are a pure function of (seed, step), so step is the RNG cursor.
  std::uint64_t seed = 0;
  RunningLoss loss;

  static TrainState fresh(ModelWeights weights, std::uint64_t seed);
};

void save_train_state(const std::filesystem::path& path, const TrainState& state);
/// Loads a checkpoint; one without optimizer state yields zero moments at step 0.
TrainState load_train_state(const std::filesystem::path& path);

double learning_rate(const TrainConfig& config, std::size_t step);

struct AdamReport {
  double grad_norm = 0.0;  // before clipping
  bool clipped = false;
};

/// Global-norm clipping, then Adam with bias correction; increments step.
/// Throws NumericalError on non-finite gradients and ContractError when a
/// gradient is missing or its size disagrees with the weight.
AdamReport adam_step(TrainState& state, const Gradients& grads, double lr, const TrainConfig& config);

/// One instance's worth of training data: a pool of m + 1 sequences and the
/// episodes (target rotations) scored on it.
struct InstanceBatch {
  std::vector<EventSequence> pool;
  std::vector<Episode> episodes;
  double time_scale = 1.0;
  std::optional<HawkesInstance> instance;
};

/// Prior draws for one pretraining step; a pure function of (seed, step).
std::vector<InstanceBatch> make_pretrain_batch(const PriorConfig& prior, const ModelConfig& model,
                                               const TrainConfig& config, std::size_t step);

struct LossAndGrads {
  double loss_per_event = 0.0;
  Gradients grads;
};

/// Mean over instances and episodes of the per-event normalized NLL, with
/// gradients when `with_grads` is set.
LossAndGrads batch_loss(const ModelWeights& weights, const std::vector<InstanceBatch>& batch, bool with_grads,
                        unsigned threads = 1);

struct StepReport {
  std::size_t step = 0;  // steps completed
  double loss_per_event = 0.0;
  double grad_norm = 0.0;
  double learning_rate = 0.0;
  double wall_time = 0.0;
};

struct TrainHooks {
  /// Checkpoints, metrics.csv and failure dumps go here; empty disables files.
  std::filesystem::path out_dir;
  std::function<void(const StepReport&)> on_step;
  /// Stop once this many steps are complete, as if interrupted.
  std::optional<std::size_t> stop_after;
};

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::size_t step);
std::filesystem::path final_checkpoint_path(const std::filesystem::path& out_dir);

/// Fresh prior draws every step. When `resume` is given, training continues
/// from it (same configs required for a bit-identical trajectory).
TrainState pretrain(const PriorConfig& prior, const ModelConfig& model, const TrainConfig& config,
                    const TrainHooks& hooks = {}, std::optional<TrainState> resume = std::nullopt);

/// Pretraining from a fixed corpus: sequences are grouped by instance_id and
/// each step samples batch_instances groups.
TrainState pretrain_from_corpus(const std::vector<EventSequence>& corpus, const ModelConfig& model,
                                const TrainConfig& config, const TrainHooks& hooks = {},
                                std::optional<TrainState> resume = std::nullopt);

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> heldout;
};

/// Deterministic shuffle by seed; floor(n * fraction) (at least one when the
/// fraction is positive and n > 1) indices go to the held-out side.
DatasetSplit split_dataset(std::size_t n, double heldout_fraction, std::uint64_t seed);

/// Per-event NLL in the original time unit, summed over targets and divided by
/// their total event count, with `context` as the model's context.
double heldout_nll_per_event(const ModelWeights& weights, const std::vector<EventSequence>& context,
                             const std::vector<EventSequence>& targets);

struct FinetuneResult {
  TrainState state;
  DatasetSplit split;
  /// Indices of every dataset sequence drawn into a training batch.
  std::vector<std::size_t> sampled;
  /// (step, held-out NLL/event); the first entry is the zero-shot value.
  std::vector<std::pair<std::size_t, double>> heldout_curve;
};

/// Continues from `start` weights with fresh optimizer moments. Context for
/// held-out evaluation is the first m training sequences of the split.
FinetuneResult finetune(const ModelWeights& start, const std::vector<EventSequence>& dataset,
                        const TrainConfig& config, const TrainHooks& hooks = {});

}  // namespace fimpp
