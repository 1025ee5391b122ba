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

#include <gtest/gtest.h>

#include <cmath>
#include <nlohmann/json.hpp>

#include "fimpp/errors.hpp"
#include "fimpp/hawkes.hpp"

namespace fimpp {
namespace {

HawkesInstance single_mark(BaseIntensitySpec base, KernelSpec kernel, int sign) {
  HawkesInstance inst;
  inst.num_marks = 1;
  inst.base = {base};
  inst.kernels = {{kernel}};
  inst.signs = {{sign}};
  return inst;
}

HawkesInstance poisson(std::vector<double> rates) {
  HawkesInstance inst;
  inst.num_marks = rates.size();
  for (double r : rates) inst.base.push_back({ConstantBase{r}});
  inst.kernels.assign(rates.size(), std::vector<KernelSpec>(rates.size(), {ExponentialKernel{0.0, 1.0}}));
  inst.signs.assign(rates.size(), std::vector<int>(rates.size(), 0));
  return inst;
}

// A random (instance, history) pair from the full default prior.
struct Draw {
  HawkesInstance inst;
  std::vector<Event> history;
  double t = 0.0;
};

Draw random_draw(std::uint64_t i) {
  PriorConfig cfg;
  cfg.seed = 99;
  Draw d;
  d.inst = sample_instance(cfg, i);
  Rng rng(7, 1, i);
  double t = 0.0;
  const auto n = rng.uniform_int(0, 8);
  for (std::int64_t e = 0; e < n; ++e) {
    t += rng.exponential(1.0);
    d.history.push_back({t, static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(d.inst.num_marks) - 1))});
  }
  d.t = t + rng.exponential(2.0) + 1e-6;
  return d;
}

TEST(GroundTruthIntensity, ExcitationBySubstitution) {
  const auto inst = single_mark({ConstantBase{1.0}}, {ExponentialKernel{1.0, 1.0}}, +1);
  const std::vector<Event> h = {{0.0, 0}};
  EXPECT_NEAR(ground_truth_intensity(inst, h, 1.0, 0), 1.0 + std::exp(-1.0), 1e-15);
}

TEST(GroundTruthIntensity, InhibitionClipsAtZero) {
  const auto inst = single_mark({ConstantBase{0.5}}, {ExponentialKernel{1.0, 1.0}}, -1);
  const std::vector<Event> h = {{0.0, 0}};
  EXPECT_EQ(ground_truth_intensity(inst, h, 0.1, 0), 0.0);
  EXPECT_LT(unclipped_intensity(inst, h, 0.1, 0), 0.0);
}

TEST(GroundTruthIntensity, QueryNotAfterHistoryIsOrderingError) {
  const auto inst = poisson({1.0});
  const std::vector<Event> h = {{2.0, 0}};
  EXPECT_THROW(ground_truth_intensity(inst, h, 2.0, 0), OrderingError);
  EXPECT_THROW(ground_truth_intensity(inst, h, 1.0, 0), OrderingError);
}

TEST(GroundTruthIntensity, EmptyHistoryEqualsClippedBase) {
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto inst = random_draw(i).inst;
    for (double t : {0.3, 4.0, 17.5, 49.0}) {
      for (std::size_t k = 0; k < inst.num_marks; ++k) {
        EXPECT_EQ(ground_truth_intensity(inst, {}, t, k), std::max(0.0, inst.base[k](t)));
      }
    }
  }
}

TEST(GroundTruthIntensity, NonNegativeAndSumsToTotal) {
  for (std::uint64_t i = 0; i < 300; ++i) {
    const auto d = random_draw(i);
    const auto total = total_intensity(d.inst, d.history, d.t);
    double s = 0.0;
    for (std::size_t k = 0; k < d.inst.num_marks; ++k) {
      const double v = ground_truth_intensity(d.inst, d.history, d.t, k);
      EXPECT_GE(v, 0.0);
      EXPECT_EQ(v, total.per_mark[k]);
      s += v;
    }
    EXPECT_NEAR(total.total, s, 1e-12);
  }
}

TEST(TotalIntensity, IndependentPoissonRatesAdd) {
  EXPECT_DOUBLE_EQ(total_intensity(poisson({1.0, 2.0}), {}, 0.5).total, 3.0);
  EXPECT_EQ(total_intensity(poisson({0.0, 0.0}), {}, 0.5).total, 0.0);
}

TEST(TotalIntensity, AllSignsZeroIsHistoryIndependent) {
  PriorConfig cfg;
  cfg.sparsity = 1.0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto inst = sample_instance(cfg, i);
    const std::vector<Event> h1 = {{1.0, 0}, {2.0, 0}};
    const std::vector<Event> h2 = {{0.5, inst.num_marks - 1}};
    EXPECT_EQ(total_intensity(inst, h1, 3.0).total, total_intensity(inst, h2, 3.0).total);
  }
}

TEST(UpperBound, ClosedFormCases) {
  EXPECT_DOUBLE_EQ(intensity_upper_bound(poisson({2.0}), {}, 0.0), 2.0);
  HawkesInstance sin_inst = poisson({0.0});
  sin_inst.base[0].form = SinusoidalBase{0.5, -0.3, 10.0, 0.0};
  EXPECT_DOUBLE_EQ(intensity_upper_bound(sin_inst, {}, 3.0), 0.8);
}

TEST(UpperBound, DominatesIntensityUntilNextEvent) {
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const auto d = random_draw(i);
    const double from = d.history.empty() ? 0.0 : d.history.back().time;
    const double bound = intensity_upper_bound(d.inst, d.history, from);
    for (double frac : {1e-9, 0.1, 0.5, 1.0, 3.0}) {
      const double t = from + frac * (d.t - from) + 1e-12;
      EXPECT_GE(bound * (1 + 1e-12), total_intensity(d.inst, d.history, t).total) << "draw " << i;
    }
  }
}

TEST(Kernels, IntegralsMatchClosedForms) {
  EXPECT_DOUBLE_EQ((KernelSpec{ExponentialKernel{0.6, 2.0}}).integral(), 0.3);
  const KernelSpec p{PowerLawKernel{0.2, 2.0, 0.5}};
  EXPECT_NEAR(p.integral(), 0.2 * std::pow(0.5, -1.0), 1e-15);
  EXPECT_NEAR(p(0.5), 0.2, 1e-15);
}

TEST(BaseSpecs, GammaShapedMatchesDensityFormula) {
  const BaseIntensitySpec g{GammaShapedBase{3.0, 2.0, 10.0}};
  const double t = 1.7;
  const double expected = 10.0 * t * t * std::exp(-t / 2.0) / (2.0 * 8.0);
  EXPECT_NEAR(g(t), expected, 1e-14);
  EXPECT_GE(g.supremum_from(0.0), g(4.0));
  EXPECT_NEAR(g.supremum_from(0.0), g(4.0), 1e-14);
}

TEST(BaseSpecs, InvalidParametersAreRejected) {
  EXPECT_THROW((BaseIntensitySpec{ConstantBase{-1.0}}).validate(), ConfigError);
  EXPECT_THROW((BaseIntensitySpec{SinusoidalBase{1.0, 0.1, 0.0, 0.0}}).validate(), ConfigError);
  EXPECT_THROW((BaseIntensitySpec{GammaShapedBase{0.5, 1.0, 1.0}}).validate(), ConfigError);
  EXPECT_THROW((KernelSpec{PowerLawKernel{0.1, 1.0, 1.0}}).validate(), ConfigError);
}

TEST(Prior, FullySparseConfigHasNoInteractions) {
  PriorConfig cfg;
  cfg.sparsity = 1.0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    for (const auto& row : sample_instance(cfg, i).signs) {
      for (int s : row) EXPECT_EQ(s, 0);
    }
  }
}

TEST(Prior, DegenerateRangesGiveHomogeneousPoisson) {
  PriorConfig cfg;
  cfg.min_marks = cfg.max_marks = 1;
  cfg.sparsity = 1.0;
  cfg.base_kinds = {BaseKind::Constant};
  cfg.constant_level = {2.0, 2.0};
  const auto inst = sample_instance(cfg, 3);
  ASSERT_EQ(inst.num_marks, 1u);
  EXPECT_EQ(inst.base[0](0.0), 2.0);
  EXPECT_EQ(inst.base[0](40.0), 2.0);
  EXPECT_EQ(inst.signs[0][0], 0);
}

TEST(Prior, InhibitionFractionMatchesConfig) {
  PriorConfig cfg;
  cfg.inhibition_prob = 0.3;
  cfg.stability_threshold = 1e9;
  std::size_t negative = 0, nonzero = 0;
  for (std::uint64_t i = 0; i < 10000; ++i) {
    for (const auto& row : sample_instance(cfg, i).signs) {
      for (int s : row) {
        nonzero += s != 0;
        negative += s < 0;
      }
    }
  }
  EXPECT_NEAR(static_cast<double>(negative) / static_cast<double>(nonzero), 0.3, 0.02);
}

TEST(Prior, SamplesPassStabilityHeuristic) {
  PriorConfig cfg;
  for (std::uint64_t i = 0; i < 500; ++i) EXPECT_LT(sample_instance(cfg, i).branching_proxy(), 0.9);
}

TEST(Prior, ExplosiveRangesAreConfigError) {
  PriorConfig cfg;
  cfg.sparsity = 0.0;
  cfg.inhibition_prob = 0.0;
  cfg.min_marks = 3;
  cfg.kernel_kinds = {KernelKind::ExponentialDecay};
  cfg.exp_kernel_weight = {5.0, 6.0};
  EXPECT_THROW(sample_instance(cfg, 0), ConfigError);
}

TEST(Prior, DeterministicPerSeedAndIndex) {
  PriorConfig cfg;
  cfg.seed = 1234;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const nlohmann::json a = sample_instance(cfg, i), b = sample_instance(cfg, i);
    EXPECT_EQ(a.dump(), b.dump());
  }
  const nlohmann::json x = sample_instance(cfg, 0), y = sample_instance(cfg, 1);
  EXPECT_NE(x.dump(), y.dump());
}

TEST(Prior, InstanceJsonRoundTrips) {
  PriorConfig cfg;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto inst = sample_instance(cfg, i);
    const nlohmann::json j = inst;
    const auto back = j.get<HawkesInstance>();
    EXPECT_EQ(nlohmann::json(back).dump(), j.dump());
    const auto d = random_draw(i);
    if (d.inst.num_marks == inst.num_marks) {
      for (std::size_t k = 0; k < inst.num_marks; ++k) {
        EXPECT_EQ(unclipped_intensity(back, d.history, d.t, k), unclipped_intensity(inst, d.history, d.t, k));
      }
    }
  }
}

TEST(Prior, ConfigJsonRoundTripsAndRejectsUnknownKeys) {
  PriorConfig cfg;
  cfg.base_kinds = {BaseKind::Constant, BaseKind::Sinusoidal};
  cfg.max_marks = 3;
  const nlohmann::json j = cfg;
  const auto back = j.get<PriorConfig>();
  EXPECT_EQ(nlohmann::json(back).dump(), j.dump());
  auto bad = j;
  bad["sparsty"] = 0.1;
  EXPECT_THROW(bad.get<PriorConfig>(), ConfigError);
  auto bad_kind = j;
  bad_kind["base_kinds"] = {"triangle"};
  EXPECT_THROW(bad_kind.get<PriorConfig>(), ConfigError);
}

}  // namespace
}  // namespace fimpp
