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

#include "fimpp/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "fimpp/errors.hpp"

namespace fimpp {
namespace {

// (1 - e^{-beta delta}) / beta and its derivative in beta.
struct DecayIntegral {
  double value;
  double d_beta;
};

DecayIntegral decay_integral(double beta, double delta) {
  const double x = beta * delta;
  if (x < kSeriesThreshold) {
    return {delta * (1.0 - x / 2.0 + x * x / 6.0), delta * delta * (-0.5 + x / 3.0 - x * x / 8.0)};
  }
  const double e = std::exp(-x);
  const double g = -std::expm1(-x) / beta;
  return {g, (delta * e - g) / beta};
}

// Contribution of one mark over one interval of length delta; `at_event`
// adds the log-intensity of an event of this mark at the interval end.
struct MarkTerms {
  double compensator = 0.0;
  double log_intensity = 0.0;
  double d_mu = 0.0;
  double d_alpha = 0.0;
  double d_beta = 0.0;  // derivatives of (compensator - log_intensity)
};

MarkTerms mark_terms(double mu, double alpha, double beta, double delta, bool at_event) {
  MarkTerms t;
  const auto g = decay_integral(beta, delta);
  const double x = beta * delta;
  const double mu_share = x < kSeriesThreshold ? delta * (x / 2.0 - x * x / 6.0) : delta - g.value;
  t.compensator = mu * delta + (alpha - mu) * g.value;
  t.d_mu = mu_share;
  t.d_alpha = g.value;
  t.d_beta = (alpha - mu) * g.d_beta;
  if (at_event) {
    const double e = std::exp(-x);
    const double rest = -std::expm1(-x);
    const double lambda = alpha * e + mu * rest;
    if (lambda > kLogIntensityFloor) {
      t.log_intensity = std::log(lambda);
      t.d_mu -= rest / lambda;
      t.d_alpha -= e / lambda;
      t.d_beta -= -(alpha - mu) * delta * e / lambda;
    } else {
      t.log_intensity = std::log(kLogIntensityFloor);
    }
  }
  return t;
}

void check_delta(double delta) {
  if (!(delta >= 0.0)) throw ContractError("compensator interval must be non-negative, got " + std::to_string(delta));
}

}  // namespace

IntensityParams IntensityParams::constant(std::vector<double> rates, double last_event_time) {
  IntensityParams p;
  p.last_event_time = last_event_time;
  p.mu = rates;
  p.alpha = rates;
  p.beta.assign(rates.size(), 1.0);
  return p;
}

void IntensityParams::validate() const {
  if (alpha.size() != mu.size() || beta.size() != mu.size()) {
    throw ContractError("intensity params: mu/alpha/beta sizes differ");
  }
  if (!std::isfinite(last_event_time)) throw ContractError("intensity params: non-finite last_event_time");
  for (const auto* v : {&mu, &alpha, &beta}) {
    for (double x : *v) {
      if (!std::isfinite(x) || x < 0.0) throw ContractError("intensity params must be finite and non-negative");
    }
  }
}

double eval_model_intensity(const IntensityParams& params, double t, std::size_t mark) {
  if (t < params.last_event_time) {
    throw OrderingError("model intensity queried at t=" + std::to_string(t) + " before last event " +
                        std::to_string(params.last_event_time));
  }
  if (mark >= params.num_marks()) throw ContractError("mark out of range for intensity params");
  // Convex-combination form: exactly alpha at the last event, exactly mu in the limit.
  const double x = params.beta[mark] * (t - params.last_event_time);
  return params.alpha[mark] * std::exp(-x) - params.mu[mark] * std::expm1(-x);
}

double model_mark_compensator(const IntensityParams& params, std::size_t mark, double delta) {
  check_delta(delta);
  if (mark >= params.num_marks()) throw ContractError("mark out of range for intensity params");
  const double mu = params.mu[mark];
  return mu * delta + (params.alpha[mark] - mu) * decay_integral(params.beta[mark], delta).value;
}

double model_compensator(const IntensityParams& params, double delta) {
  check_delta(delta);
  double total = 0.0;
  for (std::size_t k = 0; k < params.num_marks(); ++k) total += model_mark_compensator(params, k, delta);
  return total;
}

SequenceNLL sequence_nll_model(const EventSequence& target, std::span<const IntensityParams> params_per_interval) {
  const std::size_t n = target.size();
  if (params_per_interval.size() != n + 1) {
    throw ContractError("sequence_nll_model: expected " + std::to_string(n + 1) + " interval params, got " +
                        std::to_string(params_per_interval.size()));
  }
  SequenceNLL out;
  out.events_count = n;
  double start = 0.0;
  for (std::size_t i = 0; i <= n; ++i) {
    const auto& p = params_per_interval[i];
    p.validate();
    if (p.num_marks() < target.num_marks) throw ContractError("interval params cover fewer marks than the target");
    if (std::abs(p.last_event_time - start) > 1e-12 * std::max(1.0, std::abs(start))) {
      throw ContractError("interval " + std::to_string(i) + " params do not start at the previous event");
    }
    const double end = i < n ? target.events[i].time : target.window_end;
    const double delta = end - start;
    check_delta(delta);
    for (std::size_t k = 0; k < target.num_marks; ++k) {
      const bool at_event = i < n && target.events[i].mark == k;
      const auto terms = mark_terms(p.mu[k], p.alpha[k], p.beta[k], delta, at_event);
      out.compensator += terms.compensator;
      if (at_event) out.per_event_log_intensity.push_back(terms.log_intensity);
    }
    start = end;
  }
  double log_sum = 0.0;
  for (double v : out.per_event_log_intensity) log_sum += v;
  out.total = -log_sum + out.compensator;
  return out;
}

Tensor model_nll_loss(const Tensor& params, const EventSequence& target, double time_scale) {
  const std::size_t n = target.size();
  const std::size_t k_count = target.num_marks;
  if (params.rank() != 2 || params.rows() != n + 1 || params.cols() % 3 != 0) {
    throw ContractError("model_nll_loss: params " + shape_string(params.shape()) + " do not match " +
                        std::to_string(n + 1) + " intervals");
  }
  const std::size_t width = params.cols();
  if (k_count * 3 > width) throw ContractError("model_nll_loss: target has more marks than the parameter head");
  if (!(time_scale > 0.0)) throw ContractError("model_nll_loss: time_scale must be positive");

  const auto& v = params.values();
  auto grad = std::make_shared<std::vector<double>>(params.size(), 0.0);
  double loss = 0.0;
  double start = 0.0;
  for (std::size_t i = 0; i <= n; ++i) {
    const double end = (i < n ? target.events[i].time : target.window_end) / time_scale;
    const double delta = end - start;
    check_delta(delta);
    for (std::size_t k = 0; k < k_count; ++k) {
      const std::size_t base = i * width + 3 * k;
      const bool at_event = i < n && target.events[i].mark == k;
      const auto terms = mark_terms(v[base], v[base + 1], v[base + 2], delta, at_event);
      loss += terms.compensator - terms.log_intensity;
      (*grad)[base] = terms.d_mu;
      (*grad)[base + 1] = terms.d_alpha;
      (*grad)[base + 2] = terms.d_beta;
    }
    start = end;
  }
  if (!std::isfinite(loss)) throw NumericalError("model_nll_loss produced a non-finite value");
  const Tensor inputs[] = {params};
  if (!params.tracked()) return Tensor::scalar(loss);
  return params.tape()->record({}, {loss}, inputs,
                               [grad](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                                 auto& gp = *grads[0];
                                 for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[0] * (*grad)[i];
                               });
}

IntensityParams params_from_row(std::span<const double> row, std::size_t num_marks, double last_event_time) {
  if (num_marks * 3 > row.size()) throw ContractError("parameter row holds fewer marks than requested");
  IntensityParams p;
  p.last_event_time = last_event_time;
  for (std::size_t k = 0; k < num_marks; ++k) {
    p.mu.push_back(row[3 * k]);
    p.alpha.push_back(row[3 * k + 1]);
    p.beta.push_back(row[3 * k + 2]);
  }
  return p;
}

namespace {

struct SimpsonState {
  const std::function<double(double)>& f;
  int max_depth;
};

double simpson_recurse(const SimpsonState& s, double a, double b, double fa, double fm, double fb, double whole,
                       double tolerance, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = s.f(lm);
  const double frm = s.f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double diff = left + right - whole;
  if (std::abs(diff) <= 15.0 * tolerance) return left + right + diff / 15.0;
  if (depth >= s.max_depth) {
    std::ostringstream msg;
    msg << "adaptive Simpson did not converge after " << s.max_depth << " refinement levels on [" << a << ", "
        << b << "]: estimate " << left + right << ", error " << std::abs(diff) / 15.0 << " > " << tolerance;
    throw NumericalError(msg.str());
  }
  return simpson_recurse(s, a, m, fa, flm, fm, left, tolerance / 2.0, depth + 1) +
         simpson_recurse(s, m, b, fm, frm, fb, right, tolerance / 2.0, depth + 1);
}

}  // namespace

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tolerance,
                        int max_depth) {
  if (b == a) return 0.0;
  const SimpsonState state{f, max_depth};
  const double fa = f(a);
  const double fb = f(b);
  const double fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_recurse(state, a, b, fa, fm, fb, whole, tolerance, 0);
}

double ground_truth_mark_compensator(const HawkesInstance& inst, std::span<const Event> history, double a,
                                     double b, std::size_t mark, std::size_t scan_points, double tolerance) {
  if (b < a) throw ContractError("ground_truth_mark_compensator: b < a");
  if (b == a) return 0.0;
  auto raw = [&](double t) { return unclipped_intensity(inst, history, t, mark); };

  // Breakpoints where the unclipped intensity changes sign.
  const std::size_t cells = std::max<std::size_t>(scan_points, 1);
  std::vector<double> breaks{a};
  double prev_t = a;
  double prev_v = raw(a);
  for (std::size_t c = 1; c <= cells; ++c) {
    const double t = c == cells ? b : a + (b - a) * static_cast<double>(c) / static_cast<double>(cells);
    const double value = raw(t);
    if ((prev_v < 0.0) != (value < 0.0)) {
      double lo = prev_t, hi = t;
      const bool lo_negative = prev_v < 0.0;
      for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++it) {
        const double mid = 0.5 * (lo + hi);
        ((raw(mid) < 0.0) == lo_negative ? lo : hi) = mid;
      }
      breaks.push_back(0.5 * (lo + hi));
    }
    prev_t = t;
    prev_v = value;
  }
  breaks.push_back(b);

  const std::function<double(double)> clipped = [&](double t) { return std::max(0.0, raw(t)); };
  double total = 0.0;
  const double piece_tolerance = tolerance / static_cast<double>(breaks.size() - 1);
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
    const double lo = breaks[i], hi = breaks[i + 1];
    if (!(hi > lo)) continue;
    if (raw(0.5 * (lo + hi)) <= 0.0) continue;
    total += adaptive_simpson(clipped, lo, hi, piece_tolerance);
  }
  return total;
}

double ground_truth_compensator(const HawkesInstance& inst, const EventSequence& sequence, double a, double b,
                                std::size_t scan_points) {
  if (b < a) throw ContractError("ground_truth_compensator: b < a");
  double total = 0.0;
  double start = a;
  std::size_t next = 0;
  while (next < sequence.size() && sequence.events[next].time <= a) ++next;
  while (start < b) {
    const double end = next < sequence.size() ? std::min(b, sequence.events[next].time) : b;
    const auto history = sequence.prefix(next);
    for (std::size_t k = 0; k < inst.num_marks; ++k) {
      total += ground_truth_mark_compensator(inst, history, start, end, k, scan_points);
    }
    start = end;
    ++next;
  }
  return total;
}

SequenceNLL sequence_nll_ground_truth(const HawkesInstance& inst, const EventSequence& target,
                                      std::size_t quadrature_points_per_interval) {
  if (target.num_marks != inst.num_marks) throw ContractError("target K does not match the instance");
  SequenceNLL out;
  out.events_count = target.size();
  double start = 0.0;
  for (std::size_t i = 0; i <= target.size(); ++i) {
    const auto history = target.prefix(i);
    const double end = i < target.size() ? target.events[i].time : target.window_end;
    for (std::size_t k = 0; k < inst.num_marks; ++k) {
      out.compensator +=
          ground_truth_mark_compensator(inst, history, start, end, k, quadrature_points_per_interval);
    }
    if (i < target.size()) {
      const auto& e = target.events[i];
      const double lambda = ground_truth_intensity(inst, history, e.time, e.mark);
      out.per_event_log_intensity.push_back(std::log(std::max(lambda, kLogIntensityFloor)));
    }
    start = end;
  }
  double log_sum = 0.0;
  for (double v : out.per_event_log_intensity) log_sum += v;
  out.total = -log_sum + out.compensator;
  return out;
}

}  // namespace fimpp
