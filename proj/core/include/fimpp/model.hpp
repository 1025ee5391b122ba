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
#include <map>
#include <nlohmann/json_fwd.hpp>
#include <span>
#include <string>
#include <vector>

#include "fimpp/events.hpp"
#include "fimpp/likelihood.hpp"
#include "fimpp/tensor.hpp"

namespace fimpp {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers_seq_encoder = 2;
  std::size_t n_layers_cross_encoder = 2;
  std::size_t n_layers_decoder = 2;
  std::size_t d_ff = 128;
  std::size_t max_marks = 8;
  std::size_t max_events = 256;
  /// Width of the sinusoidal encoding of normalized absolute time (even).
  std::size_t time_features = 16;
  /// Decoder reuses the encoder's event embedding.
  bool share_embedding = true;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& config);
void from_json(const nlohmann::json& j, ModelConfig& config);

/// Named learnable tensors of the network. The same type carries either
/// plain values or tape-tracked copies (see track()).
struct ModelWeights {
  ModelConfig config;
  std::map<std::string, Tensor> tensors;

  const Tensor& operator[](const std::string& name) const;
  std::size_t parameter_count() const;
};

/// Scaled uniform fan-in initialization; biases zero, layer-norm gains one,
/// and the parameter-head output bias at softplus^-1(1).
ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed);

/// Registers every weight as a leaf on `tape`.
ModelWeights track(const ModelWeights& weights, Tape& tape);

/// m context sequences, one target, and the time unit used to normalize both.
struct ContextBatch {
  std::vector<EventSequence> context;
  EventSequence target;
  double time_scale = 1.0;

  /// time_scale = mean inter-event gap of the context.
  static ContextBatch make(std::vector<EventSequence> context, EventSequence target);
  void validate(const ModelConfig& config) const;
};

struct HistoryEmbedding {
  Tensor vector;  // [1, d_model]
  std::size_t history_length = 0;
  double last_event_time = 0.0;  // normalized time
};

/// Per-event features (log gap, learned mark embedding, sinusoidal absolute
/// time) mixed to d_model, with a learned summary token as row 0. Sequences
/// longer than max_events keep their most recent events and set *truncated.
Tensor embed_sequence(const EventSequence& seq, const ModelWeights& weights, double time_scale,
                      bool decoder = false, bool* truncated = nullptr);

/// Per-sequence encoder: one summary vector per sequence, [count, d_model].
Tensor encode_sequences(std::span<const EventSequence> sequences, const ModelWeights& weights, double time_scale);

/// Cross-sequence encoder over summary vectors (no positional information).
Tensor mix_context(const Tensor& summaries, const ModelWeights& weights);

/// Context representation [m, d_model].
Tensor encode_context(const ContextBatch& batch, const ModelWeights& weights);

/// Causal decoder over a history attending to the context representation;
/// row i is the embedding after the first i events, [n+1, d_model].
Tensor decode_positions(const EventSequence& history, const Tensor& context_repr, const ModelWeights& weights,
                        double time_scale);

HistoryEmbedding decode_history(std::span<const Event> history, const Tensor& context_repr,
                                const ModelWeights& weights, double time_scale);

/// Shared two-layer MLP with softplus output: [rows, d_model] -> [rows, 3*max_marks].
Tensor predict_param_rows(const Tensor& embeddings, const ModelWeights& weights);

/// All max_marks triples in normalized time.
IntensityParams predict_intensity_params(const HistoryEmbedding& h, const ModelWeights& weights);

/// Parameters in the original time unit: lambda(t) = lambda_norm(t / s) / s.
IntensityParams denormalize(const IntensityParams& params, double time_scale);
IntensityParams restrict_marks(const IntensityParams& params, std::size_t num_marks);

/// Target NLL in normalized time given the context; differentiable when the
/// weights are tracked.
Tensor forward_nll(const ContextBatch& batch, const ModelWeights& weights);

/// Several (context, target) episodes over one pool of sequences sharing a
/// time scale. The per-sequence encoder runs once for every pooled sequence
/// used as context. Returns one normalized NLL per episode.
struct Episode {
  std::vector<std::size_t> context;
  std::size_t target = 0;
};

std::vector<Tensor> forward_nll_episodes(std::span<const EventSequence> pool, std::span<const Episode> episodes,
                                         double time_scale, const ModelWeights& weights);

/// n+1 interval parameters for the target in original time units, restricted
/// to the target's K.
std::vector<IntensityParams> interval_params(const ContextBatch& batch, const ModelWeights& weights);

}  // namespace fimpp
