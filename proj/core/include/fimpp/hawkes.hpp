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
#include <nlohmann/json_fwd.hpp>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fimpp/events.hpp"
#include "fimpp/rng.hpp"

namespace fimpp {

// ---------------------------------------------------------------------------
// Base intensities mu_k(t)
// ---------------------------------------------------------------------------

enum class BaseKind { Constant, Sinusoidal, ExponentialDecay, GammaShaped };

struct ConstantBase {
  double level = 0.0;
};

/// level + amplitude * sin(2 pi t / period + phase). May dip below zero; the
/// conditional intensity clips at zero.
struct SinusoidalBase {
  double level = 0.0;
  double amplitude = 0.0;
  double period = 1.0;
  double phase = 0.0;
};

/// start_level * exp(-rate t).
struct ExponentialDecayBase {
  double start_level = 0.0;
  double rate = 1.0;
};

/// amplitude * Gamma(shape, scale) density in t. shape >= 1 keeps the value
/// finite at t = 0.
struct GammaShapedBase {
  double shape = 1.0;
  double scale = 1.0;
  double amplitude = 0.0;
};

struct BaseIntensitySpec {
  std::variant<ConstantBase, SinusoidalBase, ExponentialDecayBase, GammaShapedBase> form;

  BaseKind kind() const { return static_cast<BaseKind>(form.index()); }
  double operator()(double t) const;
  /// sup of the base over [t, infinity).
  double supremum_from(double t) const;
  void validate() const;
};

// ---------------------------------------------------------------------------
// Interaction kernels gamma_{k k'}(tau)
// ---------------------------------------------------------------------------

enum class KernelKind { ExponentialDecay, PowerLaw };

/// weight * exp(-decay tau)
struct ExponentialKernel {
  double weight = 0.0;
  double decay = 1.0;
};

/// weight * (tau + offset)^(-exponent)
struct PowerLawKernel {
  double weight = 0.0;
  double exponent = 2.0;
  double offset = 1.0;
};

struct KernelSpec {
  std::variant<ExponentialKernel, PowerLawKernel> form;

  KernelKind kind() const { return static_cast<KernelKind>(form.index()); }
  /// Non-increasing in tau >= 0.
  double operator()(double tau) const;
  /// Integral over [0, infinity).
  double integral() const;
  void validate() const;
};

// ---------------------------------------------------------------------------
// Hawkes instance and its conditional intensity
// ---------------------------------------------------------------------------

/// kernels[k][j] and signs[k][j] describe the effect of a past mark-j event on
/// the intensity of mark k.
struct HawkesInstance {
  std::size_t num_marks = 1;
  std::vector<BaseIntensitySpec> base;
  std::vector<std::vector<KernelSpec>> kernels;
  std::vector<std::vector<int>> signs;

  void validate() const;
  /// max_k sum over excitatory j of the kernel integral.
  double branching_proxy() const;
};

/// max(0, mu_k(t) + sum_{(t', j) in history} z_kj gamma_kj(t - t')).
/// Throws OrderingError unless t is after every history event.
double ground_truth_intensity(const HawkesInstance& inst, std::span<const Event> history, double t,
                              std::size_t mark);

/// mu_k(t) + sum z_kj gamma_kj(t - t') without clipping or ordering checks;
/// events at exactly t contribute gamma(0) (the right limit).
double unclipped_intensity(const HawkesInstance& inst, std::span<const Event> history, double t,
                           std::size_t mark);

struct IntensityBreakdown {
  double total = 0.0;
  std::vector<double> per_mark;
};

IntensityBreakdown total_intensity(const HawkesInstance& inst, std::span<const Event> history, double t);

/// Upper bound on the total intensity from t_from until the next event.
/// Inhibitory contributions are dropped and excitatory kernels are evaluated
/// at t_from, where they are largest.
double intensity_upper_bound(const HawkesInstance& inst, std::span<const Event> history, double t_from);

// ---------------------------------------------------------------------------
// Prior over instances
// ---------------------------------------------------------------------------

struct Range {
  double lo = 0.0;
  double hi = 0.0;

  double sample(Rng& rng) const { return lo == hi ? lo : rng.uniform(lo, hi); }
  friend bool operator==(const Range&, const Range&) = default;
};

struct PriorConfig {
  std::size_t min_marks = 1;
  std::size_t max_marks = 5;
  double window_end = 50.0;
  double sparsity = 0.5;
  double inhibition_prob = 0.3;
  std::uint64_t seed = 0;
  double stability_threshold = 0.9;

  std::vector<BaseKind> base_kinds{BaseKind::Constant, BaseKind::Sinusoidal, BaseKind::ExponentialDecay,
                                   BaseKind::GammaShaped};
  std::vector<KernelKind> kernel_kinds{KernelKind::ExponentialDecay, KernelKind::PowerLaw};

  Range constant_level{0.1, 1.0};
  Range sinusoid_level{0.2, 1.0};
  Range sinusoid_amplitude{0.0, 0.8};
  Range sinusoid_period{5.0, 25.0};
  Range sinusoid_phase{0.0, 6.283185307179586};
  Range decay_start_level{0.2, 2.0};
  Range decay_rate{0.01, 0.1};
  Range gamma_shape{2.0, 5.0};
  Range gamma_scale{2.0, 10.0};
  Range gamma_amplitude{5.0, 50.0};
  Range exp_kernel_weight{0.05, 0.6};
  Range exp_kernel_decay{0.5, 3.0};
  Range power_kernel_weight{0.05, 0.3};
  Range power_kernel_exponent{1.5, 3.0};
  Range power_kernel_offset{0.5, 2.0};

  void validate() const;
};

/// Draws one instance; rejection-resamples until the branching proxy is below
/// stability_threshold. Throws ConfigError after 1000 consecutive rejections.
HawkesInstance sample_instance(const PriorConfig& config, Rng& rng);
/// Draw on the counter-based stream (config.seed, index).
HawkesInstance sample_instance(const PriorConfig& config, std::uint64_t index);

std::string to_string(BaseKind kind);
std::string to_string(KernelKind kind);
BaseKind base_kind_from_string(const std::string& name);
KernelKind kernel_kind_from_string(const std::string& name);

void to_json(nlohmann::json& j, const BaseIntensitySpec& spec);
void from_json(const nlohmann::json& j, BaseIntensitySpec& spec);
void to_json(nlohmann::json& j, const KernelSpec& spec);
void from_json(const nlohmann::json& j, KernelSpec& spec);
void to_json(nlohmann::json& j, const HawkesInstance& inst);
void from_json(const nlohmann::json& j, HawkesInstance& inst);
void to_json(nlohmann::json& j, const PriorConfig& config);
void from_json(const nlohmann::json& j, PriorConfig& config);

}  // namespace fimpp
