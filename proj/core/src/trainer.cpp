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

#include "fimpp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <future>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <thread>

#include "fimpp/checkpoint.hpp"
#include "fimpp/errors.hpp"
#include "fimpp/ops.hpp"
#include "fimpp/rng.hpp"
#include "fimpp/sequence_store.hpp"
#include "fimpp/simulator.hpp"
#include "json_fields.hpp"

namespace fimpp {

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("train.") + what);
  };
  require(batch_instances >= 1, "batch_instances: must be >= 1");
  require(sequences_per_instance >= 2, "sequences_per_instance: must be >= 2 (m >= 1)");
  require(rotations_per_instance >= 1 && rotations_per_instance <= sequences_per_instance,
          "rotations_per_instance: must be in [1, sequences_per_instance]");
  require(steps == 0 || warmup_steps < steps, "warmup_steps: must be < steps");
  require(peak_learning_rate > 0.0 && std::isfinite(peak_learning_rate), "peak_learning_rate: must be > 0");
  require(min_learning_rate >= 0.0 && min_learning_rate <= peak_learning_rate,
          "min_learning_rate: must be in [0, peak_learning_rate]");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1: must be in [0, 1)");
  require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2: must be in [0, 1)");
  require(adam_eps > 0.0, "adam_eps: must be > 0");
  require(grad_clip_norm > 0.0, "grad_clip_norm: must be > 0");
  require(eval_every >= 1, "eval_every: must be >= 1");
  require(heldout_fraction >= 0.0 && heldout_fraction < 1.0, "heldout_fraction: must be in [0, 1)");
  require(max_redraws >= 1, "max_redraws: must be >= 1");
  require(threads >= 1, "threads: must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"steps", c.steps},
       {"batch_instances", c.batch_instances},
       {"sequences_per_instance", c.sequences_per_instance},
       {"rotations_per_instance", c.rotations_per_instance},
       {"warmup_steps", c.warmup_steps},
       {"peak_learning_rate", c.peak_learning_rate},
       {"min_learning_rate", c.min_learning_rate},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"adam_eps", c.adam_eps},
       {"grad_clip_norm", c.grad_clip_norm},
       {"checkpoint_every", c.checkpoint_every},
       {"eval_every", c.eval_every},
       {"heldout_fraction", c.heldout_fraction},
       {"max_redraws", c.max_redraws},
       {"seed", c.seed},
       {"threads", c.threads}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  using detail::field_or;
  constexpr std::string_view where = "train";
  detail::reject_unknown(j,
                         {"steps", "batch_instances", "sequences_per_instance", "rotations_per_instance",
                          "warmup_steps", "peak_learning_rate", "min_learning_rate", "adam_beta1", "adam_beta2",
                          "adam_eps", "grad_clip_norm", "checkpoint_every", "eval_every", "heldout_fraction",
                          "max_redraws", "seed", "threads"},
                         where);
  TrainConfig d;
  d.steps = field_or(j, "steps", d.steps, where);
  d.batch_instances = field_or(j, "batch_instances", d.batch_instances, where);
  d.sequences_per_instance = field_or(j, "sequences_per_instance", d.sequences_per_instance, where);
  d.rotations_per_instance = field_or(j, "rotations_per_instance", d.rotations_per_instance, where);
  d.warmup_steps = field_or(j, "warmup_steps", d.warmup_steps, where);
  d.peak_learning_rate = field_or(j, "peak_learning_rate", d.peak_learning_rate, where);
  d.min_learning_rate = field_or(j, "min_learning_rate", d.min_learning_rate, where);
  d.adam_beta1 = field_or(j, "adam_beta1", d.adam_beta1, where);
  d.adam_beta2 = field_or(j, "adam_beta2", d.adam_beta2, where);
  d.adam_eps = field_or(j, "adam_eps", d.adam_eps, where);
  d.grad_clip_norm = field_or(j, "grad_clip_norm", d.grad_clip_norm, where);
  d.checkpoint_every = field_or(j, "checkpoint_every", d.checkpoint_every, where);
  d.eval_every = field_or(j, "eval_every", d.eval_every, where);
  d.heldout_fraction = field_or(j, "heldout_fraction", d.heldout_fraction, where);
  d.max_redraws = field_or(j, "max_redraws", d.max_redraws, where);
  d.seed = field_or(j, "seed", d.seed, where);
  d.threads = field_or(j, "threads", d.threads, where);
  d.validate();
  c = d;
}

void RunningLoss::add(double value) {
  ++count;
  mean += (value - mean) / static_cast<double>(count);
  ema = count == 1 ? value : 0.98 * ema + 0.02 * value;
  last = value;
}

TrainState TrainState::fresh(ModelWeights weights, std::uint64_t seed) {
  TrainState s;
  s.seed = seed;
  for (const auto& [name, t] : weights.tensors) {
    s.adam_m[name].assign(t.size(), 0.0);
    s.adam_v[name].assign(t.size(), 0.0);
  }
  s.weights = std::move(weights);
  return s;
}

namespace {

constexpr const char* kMomentM = "adam_m/";
constexpr const char* kMomentV = "adam_v/";

Tensor moment_tensor(const Tensor& like, const std::vector<double>& values) { return Tensor(like.shape(), values); }

}  // namespace

void save_train_state(const std::filesystem::path& path, const TrainState& state) {
  TensorArchive archive;
  add_model_to_archive(archive, state.weights);
  archive.meta["train_state"] = {{"step", state.step},
                                 {"seed", state.seed},
                                 {"loss", {{"count", state.loss.count},
                                           {"mean", state.loss.mean},
                                           {"last", state.loss.last},
                                           {"ema", state.loss.ema}}}};
  for (const auto& [name, t] : state.weights.tensors) {
    archive.tensors[kMomentM + name] = moment_tensor(t, state.adam_m.at(name));
    archive.tensors[kMomentV + name] = moment_tensor(t, state.adam_v.at(name));
  }
  write_archive(path, archive);
}

TrainState load_train_state(const std::filesystem::path& path) {
  const auto archive = read_archive(path);
  auto weights = model_from_archive(archive);
  if (!archive.meta.contains("train_state")) return TrainState::fresh(std::move(weights), 0);
  TrainState s;
  try {
    const auto& ts = archive.meta.at("train_state");
    s.step = ts.at("step").get<std::size_t>();
    s.seed = ts.at("seed").get<std::uint64_t>();
    const auto& l = ts.at("loss");
    s.loss.count = l.at("count").get<std::size_t>();
    s.loss.mean = l.at("mean").get<double>();
    s.loss.last = l.at("last").get<double>();
    s.loss.ema = l.at("ema").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": train_state: " + e.what());
  }
  for (const auto& [name, t] : weights.tensors) {
    for (auto [prefix, target] : {std::pair{kMomentM, &s.adam_m}, std::pair{kMomentV, &s.adam_v}}) {
      const auto it = archive.tensors.find(prefix + name);
      if (it == archive.tensors.end() || it->second.shape() != t.shape()) {
        throw IntegrityError(path.string() + ": optimizer moment for '" + name + "' missing or misshapen");
      }
      (*target)[name].assign(it->second.values().begin(), it->second.values().end());
    }
  }
  s.weights = std::move(weights);
  return s;
}

double learning_rate(const TrainConfig& c, std::size_t step) {
  if (step < c.warmup_steps) {
    return c.peak_learning_rate * static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
  }
  const double span = static_cast<double>(std::max<std::size_t>(1, c.steps - c.warmup_steps));
  const double progress = std::min(1.0, static_cast<double>(step - c.warmup_steps) / span);
  return c.min_learning_rate +
         (c.peak_learning_rate - c.min_learning_rate) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamReport adam_step(TrainState& state, const Gradients& grads, double lr, const TrainConfig& c) {
  double sq = 0.0;
  for (const auto& [name, t] : state.weights.tensors) {
    const auto it = grads.find(name);
    if (it == grads.end()) throw ContractError("adam_step: no gradient for '" + name + "'");
    if (it->second.size() != t.size()) throw ContractError("adam_step: gradient size mismatch for '" + name + "'");
    for (double g : it->second) sq += g * g;
  }
  AdamReport report;
  report.grad_norm = std::sqrt(sq);
  if (!std::isfinite(report.grad_norm)) throw NumericalError("adam_step: non-finite gradient norm");
  double factor = 1.0;
  if (report.grad_norm > c.grad_clip_norm) {
    factor = c.grad_clip_norm / report.grad_norm;
    report.clipped = true;
  }

  const double t = static_cast<double>(state.step + 1);
  const double correction1 = 1.0 - std::pow(c.adam_beta1, t);
  const double correction2 = 1.0 - std::pow(c.adam_beta2, t);
  for (auto& [name, weight] : state.weights.tensors) {
    const auto& g = grads.at(name);
    auto& m = state.adam_m[name];
    auto& v = state.adam_v[name];
    m.resize(g.size(), 0.0);
    v.resize(g.size(), 0.0);
    std::vector<double> w(weight.values().begin(), weight.values().end());
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * factor;
      m[i] = c.adam_beta1 * m[i] + (1.0 - c.adam_beta1) * gi;
      v[i] = c.adam_beta2 * v[i] + (1.0 - c.adam_beta2) * gi * gi;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + c.adam_eps);
    }
    weight = Tensor(weight.shape(), std::move(w));
  }
  ++state.step;
  return report;
}

namespace {

// Picks `count` distinct entries of `items` (partial Fisher-Yates).
std::vector<std::size_t> choose(std::vector<std::size_t> items, std::size_t count, Rng& rng) {
  count = std::min(count, items.size());
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                            static_cast<std::int64_t>(items.size()) - 1));
    std::swap(items[i], items[j]);
  }
  items.resize(count);
  return items;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

// Rotations over pool positions whose sequence fits the decoder.
std::vector<Episode> rotations(const std::vector<EventSequence>& pool, std::size_t count, std::size_t max_events,
                               Rng& rng) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].size() <= max_events) eligible.push_back(i);
  }
  std::vector<Episode> episodes;
  for (auto target : choose(eligible, count, rng)) {
    Episode e;
    e.target = target;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (i != target) e.context.push_back(i);
    }
    episodes.push_back(std::move(e));
  }
  return episodes;
}

template <typename F>
void parallel_for(std::size_t n, unsigned threads, F&& body) {
  const unsigned workers = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

std::vector<InstanceBatch> make_pretrain_batch(const PriorConfig& prior, const ModelConfig& model,
                                               const TrainConfig& config, std::size_t step) {
  std::vector<InstanceBatch> out;
  const std::uint64_t step_seed = derive_seed(config.seed, streams::kTrainStep, step);
  for (std::size_t b = 0; b < config.batch_instances; ++b) {
    bool done = false;
    for (std::size_t attempt = 0; attempt < config.max_redraws && !done; ++attempt) {
      Rng rng(step_seed, b, attempt);
      auto inst = sample_instance(prior, rng);
      if (inst.num_marks > model.max_marks) {
        throw ConfigError("prior draws K=" + std::to_string(inst.num_marks) + " marks, model supports " +
                          std::to_string(model.max_marks));
      }
      SimulationConfig sim{prior.window_end, model.max_events, rng.next_u64()};
      InstanceBatch batch;
      try {
        batch.pool = simulate_dataset(inst, config.sequences_per_instance, sim);
      } catch (const ExplosionError&) {
        continue;
      }
      batch.episodes = rotations(batch.pool, config.rotations_per_instance, model.max_events, rng);
      batch.time_scale = mean_inter_event_gap(batch.pool);
      batch.instance = std::move(inst);
      out.push_back(std::move(batch));
      done = true;
    }
    if (!done) {
      throw ConfigError("prior: " + std::to_string(config.max_redraws) +
                        " consecutive draws exceeded max_events=" + std::to_string(model.max_events) +
                        " within the window; shorten window_end or lower base rates");
    }
  }
  return out;
}

LossAndGrads batch_loss(const ModelWeights& weights, const std::vector<InstanceBatch>& batch, bool with_grads,
                        unsigned threads) {
  LossAndGrads out;
  if (batch.empty()) return out;
  const double instances = static_cast<double>(batch.size());
  std::vector<double> losses(batch.size(), 0.0);
  std::vector<Gradients> grads(with_grads ? batch.size() : 0);

  parallel_for(batch.size(), threads, [&](std::size_t i) {
    const auto& inst = batch[i];
    if (inst.episodes.empty()) throw ContractError("batch instance has no scorable target");
    const double weight = 1.0 / (static_cast<double>(inst.episodes.size()) * instances);
    Tape tape;
    const ModelWeights tracked = with_grads ? track(weights, tape) : weights;
    const auto nll = forward_nll_episodes(inst.pool, inst.episodes, inst.time_scale, tracked);
    Tensor total;
    for (std::size_t e = 0; e < nll.size(); ++e) {
      const double events = static_cast<double>(std::max<std::size_t>(1, inst.pool[inst.episodes[e].target].size()));
      const Tensor term = scale(nll[e], weight / events);
      total = e == 0 ? term : add(total, term);
    }
    losses[i] = total.item();
    if (!std::isfinite(losses[i])) throw NumericalError("non-finite training loss");
    if (with_grads) {
      tape.backward(total);
      for (const auto& [name, t] : tracked.tensors) grads[i][name] = tape.gradient(t);
    }
  });

  for (std::size_t i = 0; i < batch.size(); ++i) {
    out.loss_per_event += losses[i];
    if (!with_grads) continue;
    for (auto& [name, g] : grads[i]) {
      auto& acc = out.grads[name];
      if (acc.empty()) {
        acc = std::move(g);
      } else {
        for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += g[j];
      }
    }
  }
  return out;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::size_t step) {
  std::ostringstream name;
  name << "checkpoint_step_" << std::setw(6) << std::setfill('0') << step << ".json";
  return out_dir / name.str();
}

std::filesystem::path final_checkpoint_path(const std::filesystem::path& out_dir) {
  return out_dir / "checkpoint_final.json";
}

namespace {

using BatchSource = std::function<std::vector<InstanceBatch>(std::size_t step)>;

[[noreturn]] void dump_and_throw(const std::filesystem::path& out_dir, std::size_t step,
                                 const std::vector<InstanceBatch>& batch, const std::string& what) {
  const auto dir = out_dir.empty() ? std::filesystem::temp_directory_path() : out_dir;
  const auto path = dir / ("nonfinite_step_" + std::to_string(step) + ".jsonl");
  std::vector<EventSequence> sequences;
  std::vector<HawkesInstance> instances;
  bool all_instances = true;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    all_instances = all_instances && batch[i].instance.has_value();
    if (batch[i].instance) instances.push_back(*batch[i].instance);
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (auto s : batch[i].pool) {
      s.instance_id = all_instances ? static_cast<std::int64_t>(i) : -1;
      sequences.push_back(std::move(s));
    }
  }
  try {
    // Pools may mix K across instances; store each instance separately then.
    write_dataset(path, sequences, all_instances ? &instances : nullptr);
  } catch (const ValidationError&) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto part = dir / ("nonfinite_step_" + std::to_string(step) + "_instance_" + std::to_string(i) + ".jsonl");
      std::vector<HawkesInstance> one;
      if (batch[i].instance) one.push_back(*batch[i].instance);
      auto pool = batch[i].pool;
      for (auto& s : pool) s.instance_id = batch[i].instance ? 0 : -1;
      write_dataset(part, pool, batch[i].instance ? &one : nullptr);
    }
  }
  throw NumericalError("step " + std::to_string(step) + ": " + what + "; offending batch written to " +
                       path.string());
}

class MetricsLog {
 public:
  MetricsLog(const std::filesystem::path& out_dir, const std::string& name) {
    if (out_dir.empty()) return;
    std::filesystem::create_directories(out_dir);
    const auto path = out_dir / name;
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    out_.open(path, std::ios::app);
    if (!out_) throw IoError("cannot open " + path.string());
    if (fresh) out_ << "step,loss_per_event,grad_norm,lr,wall_time\n";
  }
  void write(const StepReport& r) {
    if (!out_.is_open()) return;
    out_ << r.step << ',' << std::setprecision(10) << r.loss_per_event << ',' << r.grad_norm << ','
         << r.learning_rate << ',' << r.wall_time << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

TrainState run_training(const BatchSource& source, const TrainConfig& config, const TrainHooks& hooks,
                        TrainState state, bool fresh_start) {
  const auto start = std::chrono::steady_clock::now();
  const bool files = !hooks.out_dir.empty();
  if (files) std::filesystem::create_directories(hooks.out_dir);
  if (files && fresh_start) save_train_state(checkpoint_path(hooks.out_dir, state.step), state);
  MetricsLog metrics(hooks.out_dir, "metrics.csv");

  const std::size_t end = std::min(config.steps, hooks.stop_after.value_or(config.steps));
  std::future<std::vector<InstanceBatch>> prefetch;
  const bool ahead = config.threads > 1;
  if (ahead && state.step < end) prefetch = std::async(std::launch::async, source, state.step);
  std::size_t last_saved = fresh_start ? state.step : static_cast<std::size_t>(-1);

  while (state.step < end) {
    const std::size_t step = state.step;
    auto batch = ahead ? prefetch.get() : source(step);
    if (ahead && step + 1 < end) prefetch = std::async(std::launch::async, source, step + 1);

    LossAndGrads lg;
    AdamReport adam;
    const double lr = learning_rate(config, step);
    try {
      lg = batch_loss(state.weights, batch, true, config.threads);
      adam = adam_step(state, lg.grads, lr, config);
    } catch (const NumericalError& e) {
      if (prefetch.valid()) prefetch.wait();
      dump_and_throw(hooks.out_dir, step, batch, e.what());
    }
    state.loss.add(lg.loss_per_event);

    StepReport report;
    report.step = state.step;
    report.loss_per_event = lg.loss_per_event;
    report.grad_norm = adam.grad_norm;
    report.learning_rate = lr;
    report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    metrics.write(report);
    if (hooks.on_step) hooks.on_step(report);

    if (files && config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0) {
      save_train_state(checkpoint_path(hooks.out_dir, state.step), state);
      last_saved = state.step;
    }
  }
  if (prefetch.valid()) prefetch.wait();
  if (files) {
    if (last_saved != state.step) save_train_state(checkpoint_path(hooks.out_dir, state.step), state);
    if (state.step >= config.steps) save_train_state(final_checkpoint_path(hooks.out_dir), state);
  }
  return state;
}

}  // namespace

TrainState pretrain(const PriorConfig& prior, const ModelConfig& model, const TrainConfig& config,
                    const TrainHooks& hooks, std::optional<TrainState> resume) {
  prior.validate();
  model.validate();
  config.validate();
  if (prior.max_marks > model.max_marks) {
    throw ConfigError("prior.num_marks: K_max=" + std::to_string(prior.max_marks) + " exceeds model.max_marks=" +
                      std::to_string(model.max_marks));
  }
  const bool fresh = !resume.has_value();
  TrainState state = fresh ? TrainState::fresh(init_weights(model, derive_seed(config.seed, streams::kWeightsInit)),
                                               config.seed)
                           : std::move(*resume);
  if (!(state.weights.config == model)) throw ConfigError("resume checkpoint model config differs from model config");
  if (!fresh && state.seed != config.seed) throw ConfigError("resume checkpoint was trained with a different seed");
  const BatchSource source = [&](std::size_t step) { return make_pretrain_batch(prior, model, config, step); };
  return run_training(source, config, hooks, std::move(state), fresh);
}

TrainState pretrain_from_corpus(const std::vector<EventSequence>& corpus, const ModelConfig& model,
                                const TrainConfig& config, const TrainHooks& hooks,
                                std::optional<TrainState> resume) {
  model.validate();
  config.validate();
  // Group by generating instance; sequences without one form chunks of m + 1.
  std::map<std::int64_t, std::vector<std::size_t>> by_instance;
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::size_t> loose;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].num_marks > model.max_marks) throw ConfigError("corpus K exceeds model.max_marks");
    if (corpus[i].instance_id >= 0) {
      by_instance[corpus[i].instance_id].push_back(i);
    } else {
      loose.push_back(i);
    }
  }
  for (auto& [id, members] : by_instance) groups.push_back(std::move(members));
  for (std::size_t i = 0; i < loose.size(); i += config.sequences_per_instance) {
    groups.emplace_back(loose.begin() + static_cast<std::ptrdiff_t>(i),
                        loose.begin() + static_cast<std::ptrdiff_t>(std::min(loose.size(), i + config.sequences_per_instance)));
  }
  std::erase_if(groups, [](const auto& g) { return g.size() < 2; });
  if (groups.empty()) throw ConfigError("corpus has no group of at least two sequences");

  const bool fresh = !resume.has_value();
  TrainState state = fresh ? TrainState::fresh(init_weights(model, derive_seed(config.seed, streams::kWeightsInit)),
                                               config.seed)
                           : std::move(*resume);
  if (!(state.weights.config == model)) throw ConfigError("resume checkpoint model config differs from model config");
  const BatchSource source = [&](std::size_t step) {
    std::vector<InstanceBatch> out;
    const std::uint64_t step_seed = derive_seed(config.seed, streams::kTrainStep, step);
    for (std::size_t b = 0; b < config.batch_instances; ++b) {
      for (std::size_t attempt = 0;; ++attempt) {
        if (attempt >= config.max_redraws) throw ConfigError("corpus: no group with a target within max_events");
        Rng rng(step_seed, b, attempt);
        const auto& group =
            groups[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(groups.size()) - 1))];
        InstanceBatch batch;
        for (auto i : choose(group, config.sequences_per_instance, rng)) batch.pool.push_back(corpus[i]);
        batch.episodes = rotations(batch.pool, config.rotations_per_instance, model.max_events, rng);
        if (batch.episodes.empty()) continue;
        batch.time_scale = mean_inter_event_gap(batch.pool);
        out.push_back(std::move(batch));
        break;
      }
    }
    return out;
  };
  return run_training(source, config, hooks, std::move(state), fresh);
}

DatasetSplit split_dataset(std::size_t n, double heldout_fraction, std::uint64_t seed) {
  auto order = iota(n);
  Rng rng(seed, streams::kSplit);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  std::size_t held = static_cast<std::size_t>(std::floor(static_cast<double>(n) * heldout_fraction));
  if (heldout_fraction > 0.0 && n > 1) held = std::max<std::size_t>(held, 1);
  DatasetSplit split;
  split.heldout.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
  split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
  return split;
}

double heldout_nll_per_event(const ModelWeights& weights, const std::vector<EventSequence>& context,
                             const std::vector<EventSequence>& targets) {
  double total = 0.0;
  std::size_t events = 0;
  for (const auto& target : targets) {
    const auto batch = ContextBatch::make(context, target);
    total += sequence_nll_model(target, interval_params(batch, weights)).total;
    events += target.size();
  }
  return total / static_cast<double>(std::max<std::size_t>(1, events));
}

FinetuneResult finetune(const ModelWeights& start, const std::vector<EventSequence>& dataset,
                        const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (dataset.empty()) throw ConfigError("finetune: dataset is empty");
  const std::size_t K = dataset.front().num_marks;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    dataset[i].validate();
    if (dataset[i].num_marks != K) throw ValidationError("finetune: sequence " + std::to_string(i) + " has a different K");
  }
  if (K > start.config.max_marks) throw ConfigError("finetune: dataset K exceeds model max_marks");

  FinetuneResult result;
  result.split = split_dataset(dataset.size(), config.heldout_fraction, config.seed);
  const std::size_t m = config.sequences_per_instance - 1;
  if (result.split.train.size() < m + 1) {
    throw ConfigError("finetune: training split holds " + std::to_string(result.split.train.size()) +
                      " sequences, fewer than m+1=" + std::to_string(m + 1) +
                      "; lower sequences_per_instance to at most " + std::to_string(result.split.train.size()));
  }
  std::vector<EventSequence> eval_context, heldout;
  for (std::size_t i = 0; i < m; ++i) eval_context.push_back(dataset[result.split.train[i]]);
  for (auto i : result.split.heldout) heldout.push_back(dataset[i]);

  std::vector<std::size_t> sampled_flags(dataset.size(), 0);
  const auto& train = result.split.train;
  const BatchSource source = [&](std::size_t step) {
    std::vector<InstanceBatch> out;
    for (std::size_t b = 0; b < config.batch_instances; ++b) {
      for (std::size_t attempt = 0;; ++attempt) {
        if (attempt >= config.max_redraws) throw ConfigError("finetune: no sampled target fits max_events");
        Rng rng(derive_seed(config.seed, streams::kFinetune, step), b, attempt);
        InstanceBatch batch;
        for (auto i : choose(train, m + 1, rng)) batch.pool.push_back(dataset[i]);
        batch.episodes = rotations(batch.pool, config.rotations_per_instance, start.config.max_events, rng);
        if (batch.episodes.empty()) continue;
        batch.time_scale = mean_inter_event_gap(batch.pool);
        out.push_back(std::move(batch));
        break;
      }
    }
    return out;
  };
  // Audit which sequences were drawn, by identity of the sampling stream.
  const BatchSource audited = [&](std::size_t step) {
    for (std::size_t b = 0; b < config.batch_instances; ++b) {
      for (std::size_t attempt = 0; attempt < config.max_redraws; ++attempt) {
        Rng rng(derive_seed(config.seed, streams::kFinetune, step), b, attempt);
        const auto picked = choose(train, m + 1, rng);
        std::vector<EventSequence> pool;
        for (auto i : picked) pool.push_back(dataset[i]);
        if (rotations(pool, config.rotations_per_instance, start.config.max_events, rng).empty()) continue;
        for (auto i : picked) sampled_flags[i] = 1;
        break;
      }
    }
    return source(step);
  };

  std::ofstream heldout_log;
  if (!hooks.out_dir.empty()) {
    std::filesystem::create_directories(hooks.out_dir);
    heldout_log.open(hooks.out_dir / "heldout.csv", std::ios::trunc);
    heldout_log << "step,heldout_nll_per_event\n";
  }
  auto evaluate = [&](const ModelWeights& w, std::size_t step) {
    if (heldout.empty()) return;
    const double v = heldout_nll_per_event(w, eval_context, heldout);
    result.heldout_curve.emplace_back(step, v);
    if (heldout_log.is_open()) heldout_log << step << ',' << std::setprecision(12) << v << '\n' << std::flush;
  };

  evaluate(start, 0);
  TrainHooks inner = hooks;
  inner.on_step = [&](const StepReport& r) {
    if (hooks.on_step) hooks.on_step(r);
  };
  TrainState state = TrainState::fresh(start, config.seed);
  // Train in eval_every chunks so held-out NLL is reported at each interval.
  std::size_t done = 0;
  const std::size_t end = std::min(config.steps, hooks.stop_after.value_or(config.steps));
  bool first = true;
  if (end == 0 && !hooks.out_dir.empty()) {
    save_train_state(checkpoint_path(hooks.out_dir, 0), state);
    save_train_state(final_checkpoint_path(hooks.out_dir), state);
  }
  while (done < end) {
    inner.stop_after = std::min(end, done + config.eval_every);
    state = run_training(audited, config, inner, std::move(state), first);
    first = false;
    done = state.step;
    evaluate(state.weights, done);
  }
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (sampled_flags[i]) result.sampled.push_back(i);
  }
  result.state = std::move(state);
  return result;
}

}  // namespace fimpp
