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
#include <numbers>

#include "fimpp/errors.hpp"
#include "fimpp/simulator.hpp"
#include "oracles.hpp"

namespace fimpp {
namespace {

HawkesInstance poisson(std::vector<double> rates) {
  HawkesInstance inst;
  inst.num_marks = rates.size();
  for (double r : rates) inst.base.push_back({ConstantBase{r}});
  inst.kernels.assign(rates.size(), std::vector<KernelSpec>(rates.size(), {ExponentialKernel{0.0, 1.0}}));
  inst.signs.assign(rates.size(), std::vector<int>(rates.size(), 0));
  return inst;
}

TEST(Simulate, PoissonCountsAndGaps) {
  const auto inst = poisson({2.0});
  SimulationConfig cfg{100.0, 10000, 5};
  const auto data = simulate_dataset(inst, 1000, cfg);
  double total = 0.0;
  std::vector<double> gaps;
  for (const auto& s : data) {
    s.validate();
    total += static_cast<double>(s.size());
    double prev = 0.0;
    for (const auto& e : s.events) {
      gaps.push_back(e.time - prev);
      prev = e.time;
    }
  }
  EXPECT_NEAR(total / 1000.0, 200.0, 3.0 * std::sqrt(200.0 / 1000.0));
  gaps.resize(10000);
  const auto ks = testing::ks_test(gaps, [](double x) { return 1.0 - std::exp(-2.0 * x); });
  EXPECT_GT(ks.p_value, 0.01);
}

TEST(Simulate, ExponentialHawkesStationaryMean) {
  HawkesInstance inst;
  inst.num_marks = 1;
  inst.base = {{ConstantBase{1.0}}};
  inst.kernels = {{{ExponentialKernel{0.5, 1.0}}}};
  inst.signs = {{1}};
  const auto data = simulate_dataset(inst, 40, SimulationConfig{1000.0, 100000, 11});
  double total = 0.0;
  for (const auto& s : data) total += static_cast<double>(s.size());
  EXPECT_NEAR(total / 40.0, 2000.0, 100.0);
}

TEST(Simulate, ClippedSinusoidCountsMatchIntegratedIntensity) {
  // mu(t) = 1 + sin(t) never dips below zero; use 0.5 + sin(t) to exercise clipping.
  HawkesInstance inst = poisson({0.0});
  inst.base[0].form = SinusoidalBase{0.5, 1.0, 2.0 * std::numbers::pi, 0.0};
  const auto data = simulate_dataset(inst, 1000, SimulationConfig{20.0, 10000, 3});
  for (double a = 0.0; a < 20.0; a += 5.0) {
    const double b = a + 5.0;
    const double expected =
        testing::gauss_kronrod([&](double t) { return std::max(0.0, inst.base[0](t)); }, a, b, 1e-11);
    std::vector<double> counts;
    for (const auto& s : data) {
      double c = 0.0;
      for (const auto& e : s.events) c += (e.time > a && e.time <= b);
      counts.push_back(c);
    }
    double mean = 0.0;
    for (double c : counts) mean += c / 1000.0;
    EXPECT_NEAR(mean, expected, 3.0 * std::sqrt(expected / 1000.0)) << "interval " << a;
  }
}

TEST(Simulate, InhibitoryAndMultiMarkSequencesAreValid) {
  PriorConfig prior;
  prior.inhibition_prob = 0.5;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto inst = sample_instance(prior, i);
    for (const auto& s : simulate_dataset(inst, 3, SimulationConfig{50.0, 100000, i})) {
      s.validate();
      EXPECT_EQ(s.num_marks, inst.num_marks);
      for (const auto& e : s.events) EXPECT_GT(ground_truth_intensity(inst, s.history_before(e.time), e.time, e.mark), 0.0);
    }
  }
}

TEST(Simulate, ExplosionIsReported) {
  EXPECT_THROW(simulate_dataset(poisson({50.0}), 1, SimulationConfig{100.0, 100, 1}), ExplosionError);
}

TEST(Simulate, NullProcessIsEmpty) {
  const auto s = simulate_dataset(poisson({0.0, 0.0}), 1, SimulationConfig{10.0, 10, 1});
  EXPECT_TRUE(s[0].empty());
}

TEST(SimulateDataset, DeterministicAcrossRunsAndThreads) {
  PriorConfig prior;
  const auto inst = sample_instance(prior, 4);
  SimulationConfig cfg{50.0, 100000, 77};
  EXPECT_TRUE(simulate_dataset(inst, 0, cfg).empty());
  const auto a = simulate_dataset(inst, 64, cfg, 1);
  EXPECT_EQ(a, simulate_dataset(inst, 64, cfg, 1));
  EXPECT_EQ(a, simulate_dataset(inst, 64, cfg, 4));
  cfg.seed = 78;
  EXPECT_NE(a, simulate_dataset(inst, 64, cfg, 1));
}

TEST(SimulateFromEstimate, ConstantIntensityGivesExponentialWaits) {
  const auto params = IntensityParams::constant({1.0});
  Rng rng(9);
  std::vector<double> waits;
  for (int i = 0; i < 5000; ++i) {
    const auto e = simulate_from_estimate(params, 0.0, 1e6, rng);
    ASSERT_TRUE(e.has_value());
    waits.push_back(e->time);
  }
  EXPECT_GT(testing::ks_test(waits, [](double x) { return 1.0 - std::exp(-x); }).p_value, 0.01);
}

TEST(SimulateFromEstimate, NullIntensityNeverFires) {
  IntensityParams params = IntensityParams::constant({0.0, 0.0});
  Rng rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_FALSE(simulate_from_estimate(params, 0.0, 1e3, rng).has_value());
}

TEST(SimulateFromEstimate, LargerBaseShortensWaitsUnderCommonRandomNumbers) {
  for (std::uint64_t i = 0; i < 500; ++i) {
    Rng pr(i, 1);
    IntensityParams low;
    low.last_event_time = 1.0;
    low.mu = {pr.uniform(0.1, 2.0)};
    low.alpha = {pr.uniform(0.0, 3.0)};
    low.beta = {pr.uniform(0.0, 4.0)};
    IntensityParams high = low;
    high.mu[0] += pr.uniform(0.01, 1.0);
    Rng r1(i, 2), r2(i, 2);
    const auto a = simulate_from_estimate(low, 1.5, 100.0, r1);
    const auto b = simulate_from_estimate(high, 1.5, 100.0, r2);
    if (a && b) EXPECT_LE(b->time, a->time + 1e-9);
    if (a) EXPECT_TRUE(b.has_value());
  }
}

TEST(SimulateFromEstimate, MarksFollowIntensityShares) {
  const auto params = IntensityParams::constant({1.0, 3.0});
  Rng rng(4);
  int second = 0;
  for (int i = 0; i < 20000; ++i) second += simulate_from_estimate(params, 0.0, 1e6, rng)->mark == 1;
  EXPECT_NEAR(second / 20000.0, 0.75, 4.0 * std::sqrt(0.75 * 0.25 / 20000.0));
}

TEST(SimulateFromEstimate, RespectsHorizon) {
  const auto params = IntensityParams::constant({0.01});
  Rng rng(2);
  int fired = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto e = simulate_from_estimate(params, 0.0, 1.0, rng);
    if (e) {
      ++fired;
      EXPECT_LE(e->time, 1.0);
    }
  }
  const double p = 1.0 - std::exp(-0.01);
  EXPECT_NEAR(fired / 2000.0, p, 4.0 * std::sqrt(p * (1 - p) / 2000.0));
}

}  // namespace
}  // namespace fimpp
