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

#include "fimpp/model.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "fimpp/errors.hpp"
#include "fimpp/ops.hpp"
#include "fimpp/rng.hpp"
#include "json_fields.hpp"

namespace fimpp {
namespace {

struct Segment {
  std::size_t begin = 0;
  std::size_t count = 0;
};

std::vector<AttentionBlock> self_blocks(std::span<const Segment> segments, bool causal) {
  std::vector<AttentionBlock> blocks;
  for (const auto& s : segments) blocks.push_back({s.begin, s.count, s.begin, s.count, causal});
  return blocks;
}

Tensor norm(const Tensor& x, const ModelWeights& w, const std::string& p) {
  return layer_norm(x, w[p + ".g"], w[p + ".b"]);
}

Tensor feed_forward(const Tensor& x, const ModelWeights& w, const std::string& p) {
  const Tensor hidden = relu(add_bias(matmul(x, w[p + "ff.w1"]), w[p + "ff.b1"]));
  return add_bias(matmul(hidden, w[p + "ff.w2"]), w[p + "ff.b2"]);
}

Tensor attention(const Tensor& queries, const Tensor& keys, const ModelWeights& w, const std::string& p,
                 std::span<const AttentionBlock> blocks) {
  const Tensor q = matmul(queries, w[p + "wq"]);
  const Tensor k = matmul(keys, w[p + "wk"]);
  const Tensor v = matmul(keys, w[p + "wv"]);
  return matmul(multi_head_attention(q, k, v, w.config.n_heads, blocks), w[p + "wo"]);
}

std::string layer_prefix(const std::string& stack, std::size_t layer) {
  return stack + ".l" + std::to_string(layer) + ".";
}

// Pre-norm encoder stack with a final layer norm.
Tensor encoder_stack(Tensor x, std::span<const AttentionBlock> blocks, const std::string& stack,
                     std::size_t n_layers, const ModelWeights& w) {
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto p = layer_prefix(stack, l);
    Tensor h = norm(x, w, p + "ln1");
    x = add(x, attention(h, h, w, p + "attn.", blocks));
    h = norm(x, w, p + "ln2");
    x = add(x, feed_forward(h, w, p));
  }
  return norm(x, w, stack + ".ln_f");
}

Tensor decoder_stack(Tensor x, std::span<const AttentionBlock> self, const Tensor& context,
                     std::span<const AttentionBlock> cross, const ModelWeights& w) {
  for (std::size_t l = 0; l < w.config.n_layers_decoder; ++l) {
    const auto p = layer_prefix("dec", l);
    Tensor h = norm(x, w, p + "ln1");
    x = add(x, attention(h, h, w, p + "self.", self));
    h = norm(x, w, p + "ln2");
    x = add(x, attention(h, context, w, p + "cross.", cross));
    h = norm(x, w, p + "ln3");
    x = add(x, feed_forward(h, w, p));
  }
  return norm(x, w, "dec.ln_f");
}

double frequency(std::size_t j, std::size_t count) {
  if (count <= 1) return 1.0;
  return std::exp(-static_cast<double>(j) * std::log(1000.0) / static_cast<double>(count - 1));
}

void check_marks(const EventSequence& seq, const ModelConfig& config) {
  if (seq.num_marks > config.max_marks) {
    throw ContractError("sequence has K=" + std::to_string(seq.num_marks) + " marks, model supports " +
                        std::to_string(config.max_marks));
  }
}

const char* kLayerNorms[] = {"ln1", "ln2"};

void add_matrix(ModelWeights& w, Rng& rng, const std::string& name, std::size_t rows, std::size_t cols) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.uniform(-bound, bound);
  w.tensors[name] = Tensor::matrix(rows, cols, std::move(v));
}

void add_vector(ModelWeights& w, const std::string& name, std::size_t n, double value) {
  w.tensors[name] = Tensor::full({n}, value);
}

void add_norm(ModelWeights& w, const std::string& name, std::size_t d) {
  add_vector(w, name + ".g", d, 1.0);
  add_vector(w, name + ".b", d, 0.0);
}

void add_attention(ModelWeights& w, Rng& rng, const std::string& p, std::size_t d) {
  for (const char* m : {"wq", "wk", "wv", "wo"}) add_matrix(w, rng, p + m, d, d);
}

void add_ff(ModelWeights& w, Rng& rng, const std::string& p, std::size_t d, std::size_t d_ff) {
  add_matrix(w, rng, p + "ff.w1", d, d_ff);
  add_vector(w, p + "ff.b1", d_ff, 0.0);
  add_matrix(w, rng, p + "ff.w2", d_ff, d);
  add_vector(w, p + "ff.b2", d, 0.0);
}

void add_embedding(ModelWeights& w, Rng& rng, const std::string& p, const ModelConfig& c) {
  add_matrix(w, rng, p + "summary", 1, c.d_model);
  add_matrix(w, rng, p + "time.w", 1 + c.time_features, c.d_model);
  add_vector(w, p + "time.b", c.d_model, 0.0);
  add_matrix(w, rng, p + "mark", c.max_marks, c.d_model);
}

}  // namespace

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("model.") + what);
  };
  require(d_model >= 1 && n_heads >= 1 && d_model % n_heads == 0, "d_model must be divisible by n_heads");
  require(n_layers_seq_encoder >= 1 && n_layers_cross_encoder >= 1 && n_layers_decoder >= 1,
          "layer counts must be >= 1");
  require(d_ff >= 1, "d_ff must be >= 1");
  require(max_marks >= 1, "max_marks must be >= 1");
  require(max_events >= 1, "max_events must be >= 1");
  require(time_features >= 2 && time_features % 2 == 0, "time_features must be even and >= 2");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d_model", c.d_model},
                     {"n_heads", c.n_heads},
                     {"n_layers_seq_encoder", c.n_layers_seq_encoder},
                     {"n_layers_cross_encoder", c.n_layers_cross_encoder},
                     {"n_layers_decoder", c.n_layers_decoder},
                     {"d_ff", c.d_ff},
                     {"max_marks", c.max_marks},
                     {"max_events", c.max_events},
                     {"time_features", c.time_features},
                     {"share_embedding", c.share_embedding}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  using detail::field_or;
  constexpr std::string_view where = "model";
  detail::reject_unknown(j,
                         {"d_model", "n_heads", "n_layers_seq_encoder", "n_layers_cross_encoder", "n_layers_decoder",
                          "d_ff", "max_marks", "max_events", "time_features", "share_embedding"},
                         where);
  ModelConfig d;
  d.d_model = field_or(j, "d_model", d.d_model, where);
  d.n_heads = field_or(j, "n_heads", d.n_heads, where);
  d.n_layers_seq_encoder = field_or(j, "n_layers_seq_encoder", d.n_layers_seq_encoder, where);
  d.n_layers_cross_encoder = field_or(j, "n_layers_cross_encoder", d.n_layers_cross_encoder, where);
  d.n_layers_decoder = field_or(j, "n_layers_decoder", d.n_layers_decoder, where);
  d.d_ff = field_or(j, "d_ff", d.d_ff, where);
  d.max_marks = field_or(j, "max_marks", d.max_marks, where);
  d.max_events = field_or(j, "max_events", d.max_events, where);
  d.time_features = field_or(j, "time_features", d.time_features, where);
  d.share_embedding = field_or(j, "share_embedding", d.share_embedding, where);
  d.validate();
  c = d;
}

const Tensor& ModelWeights::operator[](const std::string& name) const {
  const auto it = tensors.find(name);
  if (it == tensors.end()) throw ContractError("model weights have no tensor '" + name + "'");
  return it->second;
}

std::size_t ModelWeights::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.size();
  return n;
}

ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelWeights w;
  w.config = config;
  Rng rng(seed, streams::kWeightsInit);
  const std::size_t d = config.d_model;

  add_embedding(w, rng, "embed.", config);
  if (!config.share_embedding) add_embedding(w, rng, "dec_embed.", config);

  for (const auto& [stack, layers] : {std::pair<std::string, std::size_t>{"enc_seq", config.n_layers_seq_encoder},
                                      {"enc_ctx", config.n_layers_cross_encoder}}) {
    for (std::size_t l = 0; l < layers; ++l) {
      const auto p = layer_prefix(stack, l);
      for (const char* ln : kLayerNorms) add_norm(w, p + ln, d);
      add_attention(w, rng, p + "attn.", d);
      add_ff(w, rng, p, d, config.d_ff);
    }
    add_norm(w, stack + ".ln_f", d);
  }
  for (std::size_t l = 0; l < config.n_layers_decoder; ++l) {
    const auto p = layer_prefix("dec", l);
    for (const char* ln : {"ln1", "ln2", "ln3"}) add_norm(w, p + ln, d);
    add_attention(w, rng, p + "self.", d);
    add_attention(w, rng, p + "cross.", d);
    add_ff(w, rng, p, d, config.d_ff);
  }
  add_norm(w, "dec.ln_f", d);

  add_matrix(w, rng, "head.w1", d, d);
  add_vector(w, "head.b1", d, 0.0);
  add_matrix(w, rng, "head.w2", d, 3 * config.max_marks);
  // softplus^-1(1) = log(e - 1)
  add_vector(w, "head.b2", 3 * config.max_marks, std::log(std::exp(1.0) - 1.0));
  return w;
}

ModelWeights track(const ModelWeights& weights, Tape& tape) {
  ModelWeights out;
  out.config = weights.config;
  for (const auto& [name, t] : weights.tensors) out.tensors.emplace(name, tape.variable(t));
  return out;
}

ContextBatch ContextBatch::make(std::vector<EventSequence> context, EventSequence target) {
  ContextBatch b;
  b.time_scale = mean_inter_event_gap(context);
  b.context = std::move(context);
  b.target = std::move(target);
  return b;
}

void ContextBatch::validate(const ModelConfig& config) const {
  if (context.empty()) throw ContractError("context batch needs at least one context sequence");
  if (!(time_scale > 0.0) || !std::isfinite(time_scale)) throw ContractError("time_scale must be positive");
  for (const auto& s : context) {
    if (s.num_marks != target.num_marks) throw ContractError("context and target disagree on K");
  }
  check_marks(target, config);
}

Tensor embed_sequence(const EventSequence& seq, const ModelWeights& w, double time_scale, bool decoder,
                      bool* truncated) {
  const auto& c = w.config;
  const std::string p = decoder && !c.share_embedding ? "dec_embed." : "embed.";
  const std::size_t n = seq.size();
  const std::size_t first = n > c.max_events ? n - c.max_events : 0;
  if (truncated) *truncated = first > 0;
  const Tensor& summary = w[p + "summary"];
  if (n == first) return summary;

  const std::size_t rows = n - first;
  const std::size_t width = 1 + c.time_features;
  const std::size_t half = c.time_features / 2;
  std::vector<double> features(rows * width);
  std::vector<std::size_t> marks(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t i = first + r;
    const auto& e = seq.events[i];
    if (e.mark >= c.max_marks) throw ContractError("event mark exceeds model max_marks");
    const double previous = i == 0 ? 0.0 : seq.events[i - 1].time;
    const double tau = e.time / time_scale;
    double* row = features.data() + r * width;
    row[0] = std::log1p((e.time - previous) / time_scale);
    for (std::size_t j = 0; j < half; ++j) {
      const double angle = tau * frequency(j, half);
      row[1 + 2 * j] = std::sin(angle);
      row[2 + 2 * j] = std::cos(angle);
    }
    marks[r] = e.mark;
  }
  const Tensor feats = Tensor::matrix(rows, width, std::move(features));
  const Tensor events =
      add(add_bias(matmul(feats, w[p + "time.w"]), w[p + "time.b"]), gather_rows(w[p + "mark"], marks));
  const Tensor parts[] = {summary, events};
  return concat_rows(parts);
}

Tensor encode_sequences(std::span<const EventSequence> sequences, const ModelWeights& w, double time_scale) {
  if (sequences.empty()) throw ContractError("encode_sequences needs at least one sequence");
  std::vector<Tensor> parts;
  std::vector<Segment> segments;
  std::vector<std::size_t> summary_rows;
  std::size_t offset = 0;
  for (const auto& s : sequences) {
    check_marks(s, w.config);
    parts.push_back(embed_sequence(s, w, time_scale));
    segments.push_back({offset, parts.back().rows()});
    summary_rows.push_back(offset);
    offset += parts.back().rows();
  }
  const auto blocks = self_blocks(segments, false);
  const Tensor encoded = encoder_stack(concat_rows(parts), blocks, "enc_seq", w.config.n_layers_seq_encoder, w);
  return gather_rows(encoded, summary_rows);
}

Tensor mix_context(const Tensor& summaries, const ModelWeights& w) {
  const Segment all{0, summaries.rows()};
  const auto blocks = self_blocks(std::span(&all, 1), false);
  return encoder_stack(summaries, blocks, "enc_ctx", w.config.n_layers_cross_encoder, w);
}

Tensor encode_context(const ContextBatch& batch, const ModelWeights& w) {
  if (batch.context.empty()) throw ContractError("encode_context: m = 0");
  return mix_context(encode_sequences(batch.context, w, batch.time_scale), w);
}

Tensor decode_positions(const EventSequence& history, const Tensor& context_repr, const ModelWeights& w,
                        double time_scale) {
  const Tensor x = embed_sequence(history, w, time_scale, true);
  const std::size_t rows = x.rows();
  const AttentionBlock self{0, rows, 0, rows, true};
  const AttentionBlock cross{0, rows, 0, context_repr.rows(), false};
  return decoder_stack(x, std::span(&self, 1), context_repr, std::span(&cross, 1), w);
}

HistoryEmbedding decode_history(std::span<const Event> history, const Tensor& context_repr,
                                const ModelWeights& w, double time_scale) {
  EventSequence seq;
  seq.events.assign(history.begin(), history.end());
  seq.num_marks = w.config.max_marks;
  seq.window_end = last_time(history) + 1.0;
  const Tensor positions = decode_positions(seq, context_repr, w, time_scale);
  HistoryEmbedding h;
  h.vector = slice_rows(positions, positions.rows() - 1, positions.rows());
  h.history_length = history.size();
  h.last_event_time = last_time(history) / time_scale;
  return h;
}

Tensor predict_param_rows(const Tensor& embeddings, const ModelWeights& w) {
  const Tensor hidden = relu(add_bias(matmul(embeddings, w["head.w1"]), w["head.b1"]));
  return softplus(add_bias(matmul(hidden, w["head.w2"]), w["head.b2"]));
}

IntensityParams predict_intensity_params(const HistoryEmbedding& h, const ModelWeights& w) {
  const Tensor row = predict_param_rows(h.vector, w);
  return params_from_row(row.values(), w.config.max_marks, h.last_event_time);
}

IntensityParams denormalize(const IntensityParams& params, double time_scale) {
  IntensityParams out = params;
  out.last_event_time = params.last_event_time * time_scale;
  for (auto& v : out.mu) v /= time_scale;
  for (auto& v : out.alpha) v /= time_scale;
  for (auto& v : out.beta) v /= time_scale;
  return out;
}

IntensityParams restrict_marks(const IntensityParams& params, std::size_t num_marks) {
  if (num_marks > params.num_marks()) throw ContractError("restrict_marks: more marks than available");
  IntensityParams out;
  out.last_event_time = params.last_event_time;
  out.mu.assign(params.mu.begin(), params.mu.begin() + static_cast<std::ptrdiff_t>(num_marks));
  out.alpha.assign(params.alpha.begin(), params.alpha.begin() + static_cast<std::ptrdiff_t>(num_marks));
  out.beta.assign(params.beta.begin(), params.beta.begin() + static_cast<std::ptrdiff_t>(num_marks));
  return out;
}

std::vector<Tensor> forward_nll_episodes(std::span<const EventSequence> pool, std::span<const Episode> episodes,
                                         double time_scale, const ModelWeights& w) {
  if (!(time_scale > 0.0)) throw ContractError("forward_nll: time_scale must be positive");
  if (episodes.empty()) return {};

  // Per-sequence encoder over every pooled sequence used as context.
  std::vector<std::size_t> used;
  for (const auto& e : episodes) {
    if (e.context.empty()) throw ContractError("forward_nll: episode with m = 0");
    if (e.target >= pool.size()) throw ContractError("forward_nll: target index out of range");
    const auto k = pool[e.target].num_marks;
    check_marks(pool[e.target], w.config);
    if (pool[e.target].size() > w.config.max_events) {
      throw ContractError("forward_nll: target longer than max_events");
    }
    for (auto c : e.context) {
      if (c >= pool.size()) throw ContractError("forward_nll: context index out of range");
      if (pool[c].num_marks != k) throw ContractError("forward_nll: context and target disagree on K");
      used.push_back(c);
    }
  }
  std::sort(used.begin(), used.end());
  used.erase(std::unique(used.begin(), used.end()), used.end());
  std::vector<EventSequence> encoded_pool;
  std::vector<std::size_t> row_of(pool.size(), 0);
  for (std::size_t i = 0; i < used.size(); ++i) {
    row_of[used[i]] = i;
    encoded_pool.push_back(pool[used[i]]);
  }
  const Tensor summaries = encode_sequences(encoded_pool, w, time_scale);

  // Cross-sequence encoder, one block per episode.
  std::vector<std::size_t> gather;
  std::vector<Segment> ctx_segments;
  for (const auto& e : episodes) {
    ctx_segments.push_back({gather.size(), e.context.size()});
    for (auto c : e.context) gather.push_back(row_of[c]);
  }
  const Tensor context_repr = encoder_stack(gather_rows(summaries, gather), self_blocks(ctx_segments, false),
                                            "enc_ctx", w.config.n_layers_cross_encoder, w);

  // Decoder over every target, causal within a target, attending to its own context.
  std::vector<Tensor> parts;
  std::vector<AttentionBlock> self, cross;
  std::vector<Segment> target_segments;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    parts.push_back(embed_sequence(pool[episodes[i].target], w, time_scale, true));
    const std::size_t rows = parts.back().rows();
    self.push_back({offset, rows, offset, rows, true});
    cross.push_back({offset, rows, ctx_segments[i].begin, ctx_segments[i].count, false});
    target_segments.push_back({offset, rows});
    offset += rows;
  }
  const Tensor positions = decoder_stack(concat_rows(parts), self, context_repr, cross, w);
  const Tensor params = predict_param_rows(positions, w);

  std::vector<Tensor> losses;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto& seg = target_segments[i];
    losses.push_back(
        model_nll_loss(slice_rows(params, seg.begin, seg.begin + seg.count), pool[episodes[i].target], time_scale));
  }
  return losses;
}

Tensor forward_nll(const ContextBatch& batch, const ModelWeights& w) {
  batch.validate(w.config);
  std::vector<EventSequence> pool = batch.context;
  pool.push_back(batch.target);
  Episode episode;
  for (std::size_t i = 0; i < batch.context.size(); ++i) episode.context.push_back(i);
  episode.target = batch.context.size();
  return forward_nll_episodes(pool, std::span(&episode, 1), batch.time_scale, w).front();
}

std::vector<IntensityParams> interval_params(const ContextBatch& batch, const ModelWeights& w) {
  batch.validate(w.config);
  const double s = batch.time_scale;
  const auto& target = batch.target;
  const std::size_t k = target.num_marks;
  const Tensor context = encode_context(batch, w);

  const std::size_t direct = std::min(target.size(), w.config.max_events);
  EventSequence head = target;
  head.events.resize(direct);
  const Tensor rows = predict_param_rows(decode_positions(head, context, w, s), w);
  std::vector<IntensityParams> out;
  out.reserve(target.size() + 1);
  for (std::size_t i = 0; i <= direct; ++i) {
    const double last = i == 0 ? 0.0 : target.events[i - 1].time;
    const auto row = rows.values().subspan(i * rows.cols(), rows.cols());
    out.push_back(denormalize(params_from_row(row, k, last / s), s));
    out.back().last_event_time = last;
  }
  // Positions past max_events decode their most recent window one at a time.
  for (std::size_t i = direct + 1; i <= target.size(); ++i) {
    const auto h = decode_history(target.prefix(i), context, w, s);
    out.push_back(denormalize(restrict_marks(predict_intensity_params(h, w), k), s));
    out.back().last_event_time = target.events[i - 1].time;
  }
  return out;
}

}  // namespace fimpp
