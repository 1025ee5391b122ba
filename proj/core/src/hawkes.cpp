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

#include "fimpp/hawkes.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numbers>

#include "fimpp/errors.hpp"
#include "json_fields.hpp"

namespace fimpp {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double gamma_density(const GammaShapedBase& g, double t) {
  if (t <= 0.0) return g.shape == 1.0 ? g.amplitude / g.scale : 0.0;
  const double log_density =
      (g.shape - 1.0) * std::log(t) - t / g.scale - std::lgamma(g.shape) - g.shape * std::log(g.scale);
  return g.amplitude * std::exp(log_density);
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

bool finite_all(std::initializer_list<double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

void check_query(const HawkesInstance& inst, std::span<const Event> history, double t) {
  if (!history.empty() && !(t > history.back().time)) {
    throw OrderingError("intensity queried at t=" + std::to_string(t) + " not after last history event " +
                        std::to_string(history.back().time));
  }
  (void)inst;
}

}  // namespace

double unclipped_intensity(const HawkesInstance& inst, std::span<const Event> history, double t,
                           std::size_t mark) {
  double value = inst.base[mark](t);
  const auto& signs = inst.signs[mark];
  const auto& kernels = inst.kernels[mark];
  for (const auto& e : history) {
    if (e.mark >= inst.num_marks) throw ValidationError("history mark exceeds K");
    const int z = signs[e.mark];
    if (z != 0) value += z * kernels[e.mark](t - e.time);
  }
  return value;
}

double BaseIntensitySpec::operator()(double t) const {
  return std::visit(
      Overloaded{
          [](const ConstantBase& c) { return c.level; },
          [t](const SinusoidalBase& s) {
            return s.level + s.amplitude * std::sin(2.0 * std::numbers::pi * t / s.period + s.phase);
          },
          [t](const ExponentialDecayBase& d) { return d.start_level * std::exp(-d.rate * t); },
          [t](const GammaShapedBase& g) { return gamma_density(g, t); },
      },
      form);
}

double BaseIntensitySpec::supremum_from(double t) const {
  return std::visit(Overloaded{
                        [](const ConstantBase& c) { return c.level; },
                        [](const SinusoidalBase& s) { return s.level + std::abs(s.amplitude); },
                        [t](const ExponentialDecayBase& d) {
                          return d.start_level * std::exp(-d.rate * std::max(t, 0.0));
                        },
                        [t](const GammaShapedBase& g) {
                          const double mode = (g.shape - 1.0) * g.scale;
                          return gamma_density(g, std::max(t, mode));
                        },
                    },
                    form);
}

void BaseIntensitySpec::validate() const {
  std::visit(Overloaded{
                 [](const ConstantBase& c) {
                   require(std::isfinite(c.level) && c.level >= 0.0, "constant base: level must be >= 0");
                 },
                 [](const SinusoidalBase& s) {
                   require(finite_all({s.level, s.amplitude, s.period, s.phase}), "sinusoidal base: non-finite");
                   require(s.level >= 0.0, "sinusoidal base: level must be >= 0");
                   require(s.period > 0.0, "sinusoidal base: period must be > 0");
                 },
                 [](const ExponentialDecayBase& d) {
                   require(finite_all({d.start_level, d.rate}), "exponential_decay base: non-finite");
                   require(d.start_level >= 0.0, "exponential_decay base: start_level must be >= 0");
                   require(d.rate > 0.0, "exponential_decay base: rate must be > 0");
                 },
                 [](const GammaShapedBase& g) {
                   require(finite_all({g.shape, g.scale, g.amplitude}), "gamma_shaped base: non-finite");
                   require(g.shape >= 1.0, "gamma_shaped base: shape must be >= 1");
                   require(g.scale > 0.0, "gamma_shaped base: scale must be > 0");
                   require(g.amplitude >= 0.0, "gamma_shaped base: amplitude must be >= 0");
                 },
             },
             form);
}

double KernelSpec::operator()(double tau) const {
  return std::visit(Overloaded{
                        [tau](const ExponentialKernel& k) { return k.weight * std::exp(-k.decay * tau); },
                        [tau](const PowerLawKernel& k) { return k.weight * std::pow(tau + k.offset, -k.exponent); },
                    },
                    form);
}

double KernelSpec::integral() const {
  return std::visit(Overloaded{
                        [](const ExponentialKernel& k) { return k.weight / k.decay; },
                        [](const PowerLawKernel& k) {
                          return k.weight * std::pow(k.offset, 1.0 - k.exponent) / (k.exponent - 1.0);
                        },
                    },
                    form);
}

void KernelSpec::validate() const {
  std::visit(Overloaded{
                 [](const ExponentialKernel& k) {
                   require(finite_all({k.weight, k.decay}), "exponential kernel: non-finite");
                   require(k.weight >= 0.0, "exponential kernel: weight must be >= 0");
                   require(k.decay > 0.0, "exponential kernel: decay must be > 0");
                 },
                 [](const PowerLawKernel& k) {
                   require(finite_all({k.weight, k.exponent, k.offset}), "power-law kernel: non-finite");
                   require(k.weight >= 0.0, "power-law kernel: weight must be >= 0");
                   require(k.exponent > 1.0, "power-law kernel: exponent must be > 1");
                   require(k.offset > 0.0, "power-law kernel: offset must be > 0");
                 },
             },
             form);
}

void HawkesInstance::validate() const {
  require(num_marks >= 1, "instance: num_marks must be >= 1");
  require(base.size() == num_marks, "instance: base count != num_marks");
  require(kernels.size() == num_marks && signs.size() == num_marks, "instance: matrix rows != num_marks");
  for (std::size_t k = 0; k < num_marks; ++k) {
    base[k].validate();
    require(kernels[k].size() == num_marks && signs[k].size() == num_marks, "instance: matrix cols != num_marks");
    for (std::size_t j = 0; j < num_marks; ++j) {
      kernels[k][j].validate();
      require(signs[k][j] >= -1 && signs[k][j] <= 1, "instance: signs must be in {-1, 0, 1}");
    }
  }
}

double HawkesInstance::branching_proxy() const {
  double worst = 0.0;
  for (std::size_t k = 0; k < num_marks; ++k) {
    double row = 0.0;
    for (std::size_t j = 0; j < num_marks; ++j) {
      if (signs[k][j] > 0) row += kernels[k][j].integral();
    }
    worst = std::max(worst, row);
  }
  return worst;
}

double ground_truth_intensity(const HawkesInstance& inst, std::span<const Event> history, double t,
                              std::size_t mark) {
  if (mark >= inst.num_marks) throw ContractError("mark " + std::to_string(mark) + " >= K");
  check_query(inst, history, t);
  return std::max(0.0, unclipped_intensity(inst, history, t, mark));
}

IntensityBreakdown total_intensity(const HawkesInstance& inst, std::span<const Event> history, double t) {
  check_query(inst, history, t);
  IntensityBreakdown out;
  out.per_mark.resize(inst.num_marks);
  for (std::size_t k = 0; k < inst.num_marks; ++k) {
    out.per_mark[k] = std::max(0.0, unclipped_intensity(inst, history, t, k));
    out.total += out.per_mark[k];
  }
  return out;
}

double intensity_upper_bound(const HawkesInstance& inst, std::span<const Event> history, double t_from) {
  double bound = 0.0;
  for (std::size_t k = 0; k < inst.num_marks; ++k) {
    double mark_bound = inst.base[k].supremum_from(t_from);
    for (const auto& e : history) {
      if (inst.signs[k][e.mark] > 0) mark_bound += inst.kernels[k][e.mark](std::max(0.0, t_from - e.time));
    }
    bound += std::max(0.0, mark_bound);
  }
  return bound;
}

void PriorConfig::validate() const {
  require(min_marks >= 1 && min_marks <= max_marks, "prior: num_marks range must satisfy 1 <= min <= max");
  require(std::isfinite(window_end) && window_end > 0.0, "prior: window_end must be > 0");
  require(sparsity >= 0.0 && sparsity <= 1.0, "prior: sparsity must be in [0, 1]");
  require(inhibition_prob >= 0.0 && inhibition_prob <= 1.0, "prior: inhibition_prob must be in [0, 1]");
  require(stability_threshold > 0.0, "prior: stability_threshold must be > 0");
  require(!base_kinds.empty(), "prior: base_kinds must not be empty");
  require(!kernel_kinds.empty(), "prior: kernel_kinds must not be empty");
  for (const Range* r : {&constant_level, &sinusoid_level, &sinusoid_amplitude, &sinusoid_period, &sinusoid_phase,
                         &decay_start_level, &decay_rate, &gamma_shape, &gamma_scale, &gamma_amplitude,
                         &exp_kernel_weight, &exp_kernel_decay, &power_kernel_weight, &power_kernel_exponent,
                         &power_kernel_offset}) {
    require(std::isfinite(r->lo) && std::isfinite(r->hi) && r->lo <= r->hi, "prior: empty or non-finite range");
  }
}

namespace {

BaseIntensitySpec draw_base(const PriorConfig& c, Rng& rng) {
  const auto kind = c.base_kinds[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(c.base_kinds.size()) - 1))];
  BaseIntensitySpec spec;
  switch (kind) {
    case BaseKind::Constant:
      spec.form = ConstantBase{c.constant_level.sample(rng)};
      break;
    case BaseKind::Sinusoidal: {
      SinusoidalBase s;
      s.level = c.sinusoid_level.sample(rng);
      s.amplitude = c.sinusoid_amplitude.sample(rng);
      s.period = c.sinusoid_period.sample(rng);
      s.phase = c.sinusoid_phase.sample(rng);
      spec.form = s;
      break;
    }
    case BaseKind::ExponentialDecay: {
      ExponentialDecayBase d;
      d.start_level = c.decay_start_level.sample(rng);
      d.rate = c.decay_rate.sample(rng);
      spec.form = d;
      break;
    }
    case BaseKind::GammaShaped: {
      GammaShapedBase g;
      g.shape = c.gamma_shape.sample(rng);
      g.scale = c.gamma_scale.sample(rng);
      g.amplitude = c.gamma_amplitude.sample(rng);
      spec.form = g;
      break;
    }
  }
  return spec;
}

KernelSpec draw_kernel(const PriorConfig& c, Rng& rng) {
  const auto kind = c.kernel_kinds[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(c.kernel_kinds.size()) - 1))];
  KernelSpec spec;
  if (kind == KernelKind::ExponentialDecay) {
    ExponentialKernel k;
    k.weight = c.exp_kernel_weight.sample(rng);
    k.decay = c.exp_kernel_decay.sample(rng);
    spec.form = k;
  } else {
    PowerLawKernel k;
    k.weight = c.power_kernel_weight.sample(rng);
    k.exponent = c.power_kernel_exponent.sample(rng);
    k.offset = c.power_kernel_offset.sample(rng);
    spec.form = k;
  }
  return spec;
}

HawkesInstance draw_once(const PriorConfig& c, Rng& rng) {
  HawkesInstance inst;
  inst.num_marks = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(c.min_marks), static_cast<std::int64_t>(c.max_marks)));
  const std::size_t k = inst.num_marks;
  for (std::size_t i = 0; i < k; ++i) inst.base.push_back(draw_base(c, rng));
  inst.kernels.assign(k, {});
  inst.signs.assign(k, std::vector<int>(k, 0));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      inst.kernels[i].push_back(draw_kernel(c, rng));
      if (rng.bernoulli(c.sparsity)) {
        inst.signs[i][j] = 0;
      } else {
        inst.signs[i][j] = rng.bernoulli(c.inhibition_prob) ? -1 : 1;
      }
    }
  }
  return inst;
}

}  // namespace

HawkesInstance sample_instance(const PriorConfig& config, Rng& rng) {
  config.validate();
  constexpr int kMaxRejections = 1000;
  for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
    HawkesInstance inst = draw_once(config, rng);
    if (inst.branching_proxy() < config.stability_threshold) return inst;
  }
  throw ConfigError("prior: 1000 consecutive stability rejections; kernel ranges produce explosive processes");
}

HawkesInstance sample_instance(const PriorConfig& config, std::uint64_t index) {
  Rng rng(config.seed, streams::kPriorInstance, index);
  return sample_instance(config, rng);
}

std::string to_string(BaseKind kind) {
  switch (kind) {
    case BaseKind::Constant: return "constant";
    case BaseKind::Sinusoidal: return "sinusoidal";
    case BaseKind::ExponentialDecay: return "exponential_decay";
    case BaseKind::GammaShaped: return "gamma_shaped";
  }
  return "unknown";
}

std::string to_string(KernelKind kind) {
  return kind == KernelKind::ExponentialDecay ? "exponential_decay" : "power_law";
}

BaseKind base_kind_from_string(const std::string& name) {
  for (auto k : {BaseKind::Constant, BaseKind::Sinusoidal, BaseKind::ExponentialDecay, BaseKind::GammaShaped}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown base intensity kind '" + name + "'");
}

KernelKind kernel_kind_from_string(const std::string& name) {
  for (auto k : {KernelKind::ExponentialDecay, KernelKind::PowerLaw}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown kernel kind '" + name + "'");
}

void to_json(nlohmann::json& j, const BaseIntensitySpec& spec) {
  j = nlohmann::json::object();
  j["kind"] = to_string(spec.kind());
  std::visit(Overloaded{
                 [&](const ConstantBase& c) { j["level"] = c.level; },
                 [&](const SinusoidalBase& s) {
                   j["level"] = s.level;
                   j["amplitude"] = s.amplitude;
                   j["period"] = s.period;
                   j["phase"] = s.phase;
                 },
                 [&](const ExponentialDecayBase& d) {
                   j["start_level"] = d.start_level;
                   j["rate"] = d.rate;
                 },
                 [&](const GammaShapedBase& g) {
                   j["shape"] = g.shape;
                   j["scale"] = g.scale;
                   j["amplitude"] = g.amplitude;
                 },
             },
             spec.form);
}

void from_json(const nlohmann::json& j, BaseIntensitySpec& spec) {
  using detail::field;
  const auto kind = base_kind_from_string(field<std::string>(j, "kind", "base"));
  switch (kind) {
    case BaseKind::Constant:
      spec.form = ConstantBase{field<double>(j, "level", "base")};
      break;
    case BaseKind::Sinusoidal:
      spec.form = SinusoidalBase{field<double>(j, "level", "base"), field<double>(j, "amplitude", "base"),
                                 field<double>(j, "period", "base"), field<double>(j, "phase", "base")};
      break;
    case BaseKind::ExponentialDecay:
      spec.form = ExponentialDecayBase{field<double>(j, "start_level", "base"), field<double>(j, "rate", "base")};
      break;
    case BaseKind::GammaShaped:
      spec.form = GammaShapedBase{field<double>(j, "shape", "base"), field<double>(j, "scale", "base"),
                                  field<double>(j, "amplitude", "base")};
      break;
  }
  spec.validate();
}

void to_json(nlohmann::json& j, const KernelSpec& spec) {
  j = nlohmann::json::object();
  j["kind"] = to_string(spec.kind());
  std::visit(Overloaded{
                 [&](const ExponentialKernel& k) {
                   j["weight"] = k.weight;
                   j["decay"] = k.decay;
                 },
                 [&](const PowerLawKernel& k) {
                   j["weight"] = k.weight;
                   j["exponent"] = k.exponent;
                   j["offset"] = k.offset;
                 },
             },
             spec.form);
}

void from_json(const nlohmann::json& j, KernelSpec& spec) {
  using detail::field;
  if (kernel_kind_from_string(field<std::string>(j, "kind", "kernel")) == KernelKind::ExponentialDecay) {
    spec.form = ExponentialKernel{field<double>(j, "weight", "kernel"), field<double>(j, "decay", "kernel")};
  } else {
    spec.form = PowerLawKernel{field<double>(j, "weight", "kernel"), field<double>(j, "exponent", "kernel"),
                               field<double>(j, "offset", "kernel")};
  }
  spec.validate();
}

void to_json(nlohmann::json& j, const HawkesInstance& inst) {
  j = nlohmann::json{{"num_marks", inst.num_marks}, {"base", inst.base}, {"kernels", inst.kernels},
                     {"signs", inst.signs}};
}

void from_json(const nlohmann::json& j, HawkesInstance& inst) {
  using detail::field;
  inst.num_marks = field<std::size_t>(j, "num_marks", "instance");
  inst.base = field<std::vector<BaseIntensitySpec>>(j, "base", "instance");
  inst.kernels = field<std::vector<std::vector<KernelSpec>>>(j, "kernels", "instance");
  inst.signs = field<std::vector<std::vector<int>>>(j, "signs", "instance");
  inst.validate();
}

namespace {

void to_json(nlohmann::json& j, const Range& r) { j = nlohmann::json::array({r.lo, r.hi}); }

void from_json(const nlohmann::json& j, Range& r) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw ConfigError("expected a [lo, hi] pair");
  }
  r.lo = j[0].get<double>();
  r.hi = j[1].get<double>();
}

struct NamedRange {
  const char* name;
  Range PriorConfig::*member;
};

constexpr NamedRange kRanges[] = {
    {"constant_level", &PriorConfig::constant_level},
    {"sinusoid_level", &PriorConfig::sinusoid_level},
    {"sinusoid_amplitude", &PriorConfig::sinusoid_amplitude},
    {"sinusoid_period", &PriorConfig::sinusoid_period},
    {"sinusoid_phase", &PriorConfig::sinusoid_phase},
    {"decay_start_level", &PriorConfig::decay_start_level},
    {"decay_rate", &PriorConfig::decay_rate},
    {"gamma_shape", &PriorConfig::gamma_shape},
    {"gamma_scale", &PriorConfig::gamma_scale},
    {"gamma_amplitude", &PriorConfig::gamma_amplitude},
    {"exp_kernel_weight", &PriorConfig::exp_kernel_weight},
    {"exp_kernel_decay", &PriorConfig::exp_kernel_decay},
    {"power_kernel_weight", &PriorConfig::power_kernel_weight},
    {"power_kernel_exponent", &PriorConfig::power_kernel_exponent},
    {"power_kernel_offset", &PriorConfig::power_kernel_offset},
};

}  // namespace

void to_json(nlohmann::json& j, const PriorConfig& c) {
  nlohmann::json ranges = nlohmann::json::object();
  for (const auto& r : kRanges) {
    nlohmann::json v;
    to_json(v, c.*(r.member));
    ranges[r.name] = v;
  }
  std::vector<std::string> bases, kernels;
  for (auto k : c.base_kinds) bases.push_back(to_string(k));
  for (auto k : c.kernel_kinds) kernels.push_back(to_string(k));
  j = nlohmann::json{{"num_marks", {c.min_marks, c.max_marks}},
                     {"window_end", c.window_end},
                     {"sparsity", c.sparsity},
                     {"inhibition_prob", c.inhibition_prob},
                     {"seed", c.seed},
                     {"stability_threshold", c.stability_threshold},
                     {"base_kinds", bases},
                     {"kernel_kinds", kernels},
                     {"ranges", ranges}};
}

void from_json(const nlohmann::json& j, PriorConfig& c) {
  using detail::field_or;
  constexpr std::string_view where = "prior";
  detail::reject_unknown(j,
                         {"num_marks", "window_end", "sparsity", "inhibition_prob", "seed", "stability_threshold",
                          "base_kinds", "kernel_kinds", "ranges"},
                         where);
  PriorConfig d;
  if (j.contains("num_marks")) {
    const auto marks = field_or<std::vector<std::size_t>>(j, "num_marks", {}, where);
    if (marks.size() != 2) throw ConfigError("prior.num_marks: expected [min, max]");
    d.min_marks = marks[0];
    d.max_marks = marks[1];
  }
  d.window_end = field_or(j, "window_end", d.window_end, where);
  d.sparsity = field_or(j, "sparsity", d.sparsity, where);
  d.inhibition_prob = field_or(j, "inhibition_prob", d.inhibition_prob, where);
  d.seed = field_or(j, "seed", d.seed, where);
  d.stability_threshold = field_or(j, "stability_threshold", d.stability_threshold, where);
  if (j.contains("base_kinds")) {
    d.base_kinds.clear();
    for (const auto& name : field_or<std::vector<std::string>>(j, "base_kinds", {}, where)) {
      d.base_kinds.push_back(base_kind_from_string(name));
    }
  }
  if (j.contains("kernel_kinds")) {
    d.kernel_kinds.clear();
    for (const auto& name : field_or<std::vector<std::string>>(j, "kernel_kinds", {}, where)) {
      d.kernel_kinds.push_back(kernel_kind_from_string(name));
    }
  }
  if (j.contains("ranges")) {
    const auto& ranges = j.at("ranges");
    if (!ranges.is_object()) throw ConfigError("prior.ranges: expected an object");
    for (const auto& item : ranges.items()) {
      bool known = false;
      for (const auto& r : kRanges) {
        if (item.key() != r.name) continue;
        known = true;
        try {
          from_json(item.value(), d.*(r.member));
        } catch (const ConfigError& e) {
          throw ConfigError("prior.ranges." + item.key() + ": " + e.what());
        }
      }
      if (!known) throw ConfigError("prior.ranges." + item.key() + ": unknown range");
    }
  }
  try {
    d.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(e.what()));
  }
  c = std::move(d);
}

}  // namespace fimpp
