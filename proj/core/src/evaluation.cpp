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

#include "fimpp/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <thread>

#include "fimpp/errors.hpp"
#include "fimpp/rng.hpp"
#include "fimpp/sequence_store.hpp"
#include "fimpp/simulator.hpp"

namespace fimpp {

InferenceSession::InferenceSession(const ModelWeights& weights, std::vector<EventSequence> context)
    : weights_(&weights), context_(std::move(context)) {
  if (context_.empty()) throw ConfigError("inference needs at least one context sequence");
  num_marks_ = context_.front().num_marks;
  for (const auto& s : context_) {
    s.validate();
    if (s.num_marks != num_marks_) throw ValidationError("context sequences disagree on K");
  }
  if (num_marks_ > weights.config.max_marks) {
    throw ConfigError("context K=" + std::to_string(num_marks_) + " exceeds model max_marks=" +
                      std::to_string(weights.config.max_marks));
  }
  EventSequence probe;
  probe.num_marks = num_marks_;
  probe.window_end = 1.0;
  const auto batch = ContextBatch::make(context_, probe);
  batch.validate(weights.config);
  time_scale_ = batch.time_scale;
  context_repr_ = encode_context(batch, weights);
}

IntensityParams InferenceSession::params_after(std::span<const Event> history) const {
  for (const auto& e : history) {
    if (e.mark >= num_marks_) throw ValidationError("history mark " + std::to_string(e.mark) + " exceeds K");
  }
  const auto h = decode_history(history, context_repr_, *weights_, time_scale_);
  auto params = denormalize(restrict_marks(predict_intensity_params(h, *weights_), num_marks_), time_scale_);
  params.last_event_time = last_time(history);
  return params;
}

ModelWeights constant_intensity_model(const ModelConfig& config, const std::vector<double>& rates,
                                      std::uint64_t seed) {
  if (rates.size() > config.max_marks) throw ConfigError("more rates than model marks");
  auto w = init_weights(config, seed);
  const auto& w2 = w["head.w2"];
  w.tensors["head.w2"] = Tensor(w2.shape(), std::vector<double>(w2.size(), 0.0));
  std::vector<double> bias(3 * config.max_marks, -1000.0);
  for (std::size_t k = 0; k < rates.size(); ++k) {
    if (!(rates[k] >= 0.0) || !std::isfinite(rates[k])) throw ConfigError("rates must be finite and >= 0");
    // Inverse softplus; a very negative bias underflows softplus to exactly 0.
    const double b = rates[k] > 0.0 ? rates[k] + std::log(-std::expm1(-rates[k])) : -1000.0;
    bias[3 * k] = b;
    bias[3 * k + 1] = b;
    bias[3 * k + 2] = 0.0;
  }
  w.tensors["head.b2"] = Tensor(w["head.b2"].shape(), std::move(bias));
  return w;
}

std::vector<double> parse_grid(const std::string& spec) {
  auto number = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("grid: '" + s + "' is not a number");
    }
  };
  std::vector<double> grid;
  if (std::count(spec.begin(), spec.end(), ':') == 2) {
    const auto a = spec.find(':');
    const auto b = spec.find(':', a + 1);
    const double start = number(spec.substr(0, a));
    const double stop = number(spec.substr(a + 1, b - a - 1));
    const std::string count_text = spec.substr(b + 1);
    const double count = number(count_text);
    if (count < 1 || count != std::floor(count)) throw ConfigError("grid: count must be a positive integer");
    if (stop < start) throw ConfigError("grid: stop precedes start");
    const auto n = static_cast<std::size_t>(count);
    for (std::size_t i = 0; i < n; ++i) {
      grid.push_back(n == 1 ? start : start + (stop - start) * static_cast<double>(i) / static_cast<double>(n - 1));
    }
    return grid;
  }
  std::stringstream in(spec);
  std::string item;
  while (std::getline(in, item, ',')) grid.push_back(number(item));
  if (grid.empty()) throw ConfigError("grid: empty");
  if (!std::is_sorted(grid.begin(), grid.end())) throw ConfigError("grid: times must be non-decreasing");
  return grid;
}

namespace {

// Observation window of a history with no events: effectively the origin.
constexpr double kObservedFromOrigin = std::numeric_limits<double>::min();

}  // namespace

HistorySelection parse_history_spec(const std::string& spec, const std::vector<EventSequence>& dataset) {
  const std::size_t K = dataset.empty() ? 1 : dataset.front().num_marks;
  HistorySelection out;
  out.history.num_marks = K;
  if (spec == "empty") {
    out.history.window_end = kObservedFromOrigin;
    return out;
  }
  if (spec.rfind("seq:", 0) == 0) {
    const auto at = spec.find("@prefix:");
    if (at == std::string::npos) throw ConfigError("history: expected seq:<index>@prefix:<n>");
    std::size_t index = 0, n = 0;
    try {
      std::size_t used = 0;
      const std::string a = spec.substr(4, at - 4), b = spec.substr(at + 8);
      index = std::stoul(a, &used);
      if (used != a.size()) throw std::invalid_argument(a);
      n = std::stoul(b, &used);
      if (used != b.size()) throw std::invalid_argument(b);
    } catch (const std::exception&) {
      throw ConfigError("history: malformed '" + spec + "'");
    }
    if (index >= dataset.size()) {
      throw ConfigError("history: sequence " + std::to_string(index) + " out of range (" +
                        std::to_string(dataset.size()) + " sequences)");
    }
    const auto& seq = dataset[index];
    if (n > seq.size()) {
      throw ConfigError("history: prefix " + std::to_string(n) + " longer than sequence (" +
                        std::to_string(seq.size()) + " events)");
    }
    out.history = seq;
    out.history.events.resize(n);
    out.history.window_end = n > 0 ? out.history.events.back().time : kObservedFromOrigin;
    out.source = index;
    return out;
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(spec);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("history: not 'empty', 'seq:<i>@prefix:<n>' or JSON: ") + e.what());
  }
  try {
    if (j.is_array()) {
      for (const auto& e : j) out.history.events.push_back({e.at("t").get<double>(), e.at("k").get<std::size_t>()});
      out.history.window_end = out.history.events.empty() ? kObservedFromOrigin : last_time(out.history.events);
    } else {
      out.history = sequence_from_json(j);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("history: ") + e.what());
  } catch (const ParseError& e) {
    throw ConfigError(std::string("history: ") + e.what());
  }
  if (out.history.num_marks != K) throw ConfigError("history: K differs from the context dataset");
  out.history.validate();
  return out;
}

std::vector<CurvePoint> intensity_curve(const InferenceSession& session, const EventSequence& history,
                                        const std::vector<double>& grid, const HawkesInstance* truth) {
  if (truth && truth->num_marks != session.num_marks()) throw ConfigError("ground truth K differs from context K");
  std::vector<CurvePoint> out;
  std::map<std::size_t, IntensityParams> cache;
  for (double t : grid) {
    if (!(t >= 0.0)) throw ConfigError("grid times must be >= 0");
    const auto before = static_cast<std::size_t>(
        std::lower_bound(history.events.begin(), history.events.end(), t,
                         [](const Event& e, double x) { return e.time < x; }) -
        history.events.begin());
    const std::span<const Event> h(history.events.data(), before);
    auto it = cache.find(before);
    if (it == cache.end()) it = cache.emplace(before, session.params_after(h)).first;
    for (std::size_t k = 0; k < session.num_marks(); ++k) {
      CurvePoint p{t, k, eval_model_intensity(it->second, t, k), std::nullopt};
      if (truth) p.lambda_true = ground_truth_intensity(*truth, h, t, k);
      out.push_back(p);
    }
  }
  return out;
}

std::string curve_to_csv(const std::vector<CurvePoint>& curve) {
  const bool with_truth = !curve.empty() && curve.front().lambda_true.has_value();
  std::ostringstream out;
  out << std::setprecision(17);
  out << "t,mark,lambda_hat" << (with_truth ? ",lambda_true" : "") << '\n';
  for (const auto& p : curve) {
    out << p.t << ',' << p.mark << ',' << p.lambda_hat;
    if (with_truth) out << ',' << *p.lambda_true;
    out << '\n';
  }
  return out.str();
}

namespace {

double median(std::vector<double> v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2), v.end());
  const double hi = v[n / 2];
  if (n % 2 == 1) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2)));
}

double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct TargetTotals {
  double model_nll = 0.0;
  double true_nll = 0.0;
  double sq_error = 0.0;
  std::size_t grid_cells = 0;
  double abs_time_error = 0.0;
  std::size_t mark_hits = 0;
  std::size_t events = 0;
  double model_rate = 0.0;
  double true_rate = 0.0;
};

TargetTotals score_target(const ModelWeights& weights, const std::vector<EventSequence>& context,
                          const EventSequence& target, const HawkesInstance* truth, const EvalOptions& options,
                          Rng& rng) {
  TargetTotals t;
  const auto params = interval_params(ContextBatch::make(context, target), weights);
  const auto nll = sequence_nll_model(target, params);
  t.model_nll = nll.total;
  t.events = target.size();
  t.model_rate = nll.compensator / target.window_end;
  if (truth) {
    const auto true_nll = sequence_nll_ground_truth(*truth, target);
    t.true_nll = true_nll.total;
    t.true_rate = true_nll.compensator / target.window_end;
    for (std::size_t g = 0; g < options.grid_points; ++g) {
      const double time = (static_cast<double>(g) + 0.5) * target.window_end / static_cast<double>(options.grid_points);
      const auto before = static_cast<std::size_t>(
          std::lower_bound(target.events.begin(), target.events.end(), time,
                           [](const Event& e, double x) { return e.time < x; }) -
          target.events.begin());
      const std::span<const Event> h(target.events.data(), before);
      for (std::size_t k = 0; k < target.num_marks; ++k) {
        const double diff = eval_model_intensity(params[before], time, k) - ground_truth_intensity(*truth, h, time, k);
        t.sq_error += diff * diff;
        ++t.grid_cells;
      }
    }
  }
  // Next-event prediction: median of sampled times, argmax mark at that time.
  const double horizon = 4.0 * target.window_end;
  std::vector<double> draws(options.forecast_samples);
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto& p = params[i];
    for (auto& d : draws) {
      const auto e = simulate_from_estimate(p, p.last_event_time, horizon, rng);
      d = e ? e->time : p.last_event_time + horizon;
    }
    const double predicted = draws.empty() ? p.last_event_time : median(draws);
    t.abs_time_error += std::abs(predicted - target.events[i].time);
    std::size_t best = 0;
    for (std::size_t k = 1; k < target.num_marks; ++k) {
      if (eval_model_intensity(p, predicted, k) > eval_model_intensity(p, predicted, best)) best = k;
    }
    if (best == target.events[i].mark) ++t.mark_hits;
  }
  return t;
}

template <typename F>
void parallel_each(std::size_t n, unsigned threads, F&& body) {
  const unsigned workers = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  auto run = [&](unsigned w) {
    try {
      for (std::size_t i = w; i < n; i += workers) body(i);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

EvalReport evaluate(const ModelWeights& weights, const std::vector<EventSequence>& sequences,
                    const std::vector<HawkesInstance>* instances, const EvalOptions& options) {
  if (options.context_size < 1) throw ConfigError("eval: context_size must be >= 1");
  if (options.grid_points < 1) throw ConfigError("eval: grid_points must be >= 1");
  EvalReport report;
  report.seed = options.seed;
  report.config = {{"model", weights.config},
                   {"context_size", options.context_size},
                   {"grid_points", options.grid_points},
                   {"forecast_samples", options.forecast_samples}};
  if (!instances) report.warnings.push_back("no ground-truth sidecar: only model NLL and next-event metrics reported");

  std::map<std::int64_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < sequences.size(); ++i) groups[sequences[i].instance_id].push_back(i);
  std::vector<std::pair<std::int64_t, std::vector<std::size_t>>> work(groups.begin(), groups.end());
  for (const auto& [id, members] : work) {
    if (members.size() <= options.context_size) {
      throw ConfigError("eval: instance " + std::to_string(id) + " has " + std::to_string(members.size()) +
                        " sequences, need more than context_size=" + std::to_string(options.context_size));
    }
    if (instances && (id < 0 || static_cast<std::size_t>(id) >= instances->size())) {
      throw ValidationError("eval: instance_id " + std::to_string(id) + " has no sidecar entry");
    }
  }

  report.instances.resize(work.size());
  parallel_each(work.size(), options.threads, [&](std::size_t g) {
    const auto& [id, members] = work[g];
    const HawkesInstance* truth = instances ? &(*instances)[static_cast<std::size_t>(id)] : nullptr;
    std::vector<EventSequence> context;
    for (std::size_t i = 0; i < options.context_size; ++i) context.push_back(sequences[members[i]]);
    Rng rng(options.seed, streams::kEval, static_cast<std::uint64_t>(g));
    TargetTotals sum;
    std::size_t targets = 0;
    double model_rate = 0.0, true_rate = 0.0;
    for (std::size_t i = options.context_size; i < members.size(); ++i) {
      const auto t = score_target(weights, context, sequences[members[i]], truth, options, rng);
      sum.model_nll += t.model_nll;
      sum.true_nll += t.true_nll;
      sum.sq_error += t.sq_error;
      sum.grid_cells += t.grid_cells;
      sum.abs_time_error += t.abs_time_error;
      sum.mark_hits += t.mark_hits;
      sum.events += t.events;
      model_rate += t.model_rate;
      true_rate += t.true_rate;
      ++targets;
    }
    const double events = static_cast<double>(std::max<std::size_t>(1, sum.events));
    InstanceMetrics m;
    m.instance_id = id;
    m.targets = targets;
    m.events = sum.events;
    m.model_nll_per_event = sum.model_nll / events;
    m.next_time_mae = sum.abs_time_error / events;
    m.next_mark_accuracy = static_cast<double>(sum.mark_hits) / events;
    m.mean_model_intensity = model_rate / static_cast<double>(targets);
    if (truth) {
      m.true_nll_per_event = sum.true_nll / events;
      m.nll_gap = m.model_nll_per_event - *m.true_nll_per_event;
      m.intensity_rmse = std::sqrt(sum.sq_error / static_cast<double>(std::max<std::size_t>(1, sum.grid_cells)));
      m.mean_true_intensity = true_rate / static_cast<double>(targets);
    }
    report.instances[g] = m;
  });

  auto& a = report.aggregate;
  const double n = static_cast<double>(std::max<std::size_t>(1, report.instances.size()));
  auto mean_opt = [&](auto member) -> std::optional<double> {
    if (!instances || report.instances.empty()) return std::nullopt;
    double s = 0.0;
    for (const auto& m : report.instances) s += *(m.*member);
    return s / n;
  };
  for (const auto& m : report.instances) {
    a.targets += m.targets;
    a.events += m.events;
    a.model_nll_per_event += m.model_nll_per_event / n;
    a.next_time_mae += m.next_time_mae / n;
    a.next_mark_accuracy += m.next_mark_accuracy / n;
    a.mean_model_intensity += m.mean_model_intensity / n;
  }
  a.true_nll_per_event = mean_opt(&InstanceMetrics::true_nll_per_event);
  a.nll_gap = mean_opt(&InstanceMetrics::nll_gap);
  a.intensity_rmse = mean_opt(&InstanceMetrics::intensity_rmse);
  a.mean_true_intensity = mean_opt(&InstanceMetrics::mean_true_intensity);
  return report;
}

void to_json(nlohmann::json& j, const InstanceMetrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  j = {{"instance_id", m.instance_id},
       {"targets", m.targets},
       {"events", m.events},
       {"model_nll_per_event", m.model_nll_per_event},
       {"true_nll_per_event", opt(m.true_nll_per_event)},
       {"nll_gap", opt(m.nll_gap)},
       {"intensity_rmse", opt(m.intensity_rmse)},
       {"next_time_mae", m.next_time_mae},
       {"next_mark_accuracy", m.next_mark_accuracy},
       {"mean_model_intensity", m.mean_model_intensity},
       {"mean_true_intensity", opt(m.mean_true_intensity)}};
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  nlohmann::json aggregate = r.aggregate;
  aggregate.erase("instance_id");
  j = {{"seed", r.seed},
       {"config", r.config},
       {"aggregate", aggregate},
       {"instances", r.instances},
       {"warnings", r.warnings}};
}

ForecastResult forecast(const InferenceSession& session, const EventSequence& history,
                        const ForecastOptions& options) {
  if (!(options.horizon > 0.0) || !std::isfinite(options.horizon)) throw ConfigError("forecast: horizon must be > 0");
  if (history.num_marks != session.num_marks()) throw ConfigError("forecast: history K differs from context K");
  for (double q : options.quantiles) {
    if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("forecast: quantiles must lie in [0, 1]");
  }
  ForecastResult r;
  r.t_start = std::max(history.window_end, last_time(history.events));
  r.horizon = options.horizon;
  r.next_mark_distribution.assign(session.num_marks(), 0.0);
  const double end = r.t_start + options.horizon;
  const auto initial = session.params_after(history.events);

  std::vector<double> first_times;
  std::size_t no_event = 0;
  for (std::size_t s = 0; s < options.samples; ++s) {
    Rng rng(options.seed, streams::kForecast, s);
    std::vector<Event> path;
    std::vector<Event> grown = history.events;
    IntensityParams params = initial;
    double t = r.t_start;
    while (path.size() < options.max_events) {
      const auto e = simulate_from_estimate(params, t, end - t, rng);
      if (!e) break;
      path.push_back(*e);
      grown.push_back(*e);
      t = e->time;
      if (path.size() < options.max_events) params = session.params_after(grown);
    }
    if (path.size() >= options.max_events) r.truncated = true;
    if (path.empty()) {
      ++no_event;
    } else {
      first_times.push_back(path.front().time);
      r.next_mark_distribution[path.front().mark] += 1.0;
    }
    r.trajectories.push_back(std::move(path));
  }
  std::sort(first_times.begin(), first_times.end());
  for (double q : options.quantiles) r.next_time_quantiles.emplace_back(q, quantile(first_times, q));
  if (options.samples > 0) {
    r.no_event_fraction = static_cast<double>(no_event) / static_cast<double>(options.samples);
    for (auto& p : r.next_mark_distribution) p /= static_cast<double>(options.samples);
  }
  return r;
}

void to_json(nlohmann::json& j, const ForecastResult& r) {
  nlohmann::json trajectories = nlohmann::json::array();
  for (const auto& path : r.trajectories) {
    nlohmann::json events = nlohmann::json::array();
    for (const auto& e : path) events.push_back({{"t", e.time}, {"k", e.mark}});
    trajectories.push_back(std::move(events));
  }
  nlohmann::json quantiles = nlohmann::json::array();
  for (const auto& [q, v] : r.next_time_quantiles) {
    quantiles.push_back({{"q", q}, {"t", std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr)}});
  }
  j = {{"t_start", r.t_start},
       {"horizon", r.horizon},
       {"next_time_quantiles", quantiles},
       {"no_event_fraction", r.no_event_fraction},
       {"next_mark_distribution", r.next_mark_distribution},
       {"truncated", r.truncated},
       {"trajectories", trajectories}};
}

}  // namespace fimpp
