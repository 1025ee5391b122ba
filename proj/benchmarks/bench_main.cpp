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


#include <benchmark/benchmark.h>

#include <random>

#include "fimpp/model.hpp"
#include "fimpp/ops.hpp"
#include "fimpp/simulator.hpp"
#include "fimpp/trainer.hpp"

namespace fimpp {
namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(r * c);
  for (auto& x : v) x = u(gen);
  return Tensor({r, c}, std::move(v));
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, 64, 1), b = random_matrix(64, 64, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * 64 * 64));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(256)->Arg(1024);

void BM_CausalAttention(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto q = random_matrix(n, 64, 3), k = random_matrix(n, 64, 4), v = random_matrix(n, 64, 5);
  const AttentionBlock block{0, n, 0, n, true};
  for (auto _ : state) benchmark::DoNotOptimize(multi_head_attention(q, k, v, 4, std::span(&block, 1)));
}
BENCHMARK(BM_CausalAttention)->Arg(32)->Arg(128)->Arg(256);

void BM_AttentionBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto q = random_matrix(n, 64, 3), k = random_matrix(n, 64, 4), v = random_matrix(n, 64, 5);
  const AttentionBlock block{0, n, 0, n, true};
  for (auto _ : state) {
    Tape tape;
    const auto out = sum(multi_head_attention(tape.variable(q), tape.variable(k), tape.variable(v), 4,
                                              std::span(&block, 1)));
    tape.backward(out);
  }
}
BENCHMARK(BM_AttentionBackward)->Arg(64)->Arg(256);

void BM_SimulateHawkes(benchmark::State& state) {
  PriorConfig prior;
  prior.max_marks = 3;
  prior.min_marks = 3;
  const auto inst = sample_instance(prior, 7);
  std::uint64_t seed = 0;
  std::size_t events = 0;
  for (auto _ : state) {
    Rng rng(seed++, streams::kSimulation);
    events += simulate_sequence(inst, {50.0, 100000, 0}, rng).size();
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(events));
}
BENCHMARK(BM_SimulateHawkes);

struct Workload {
  ModelWeights weights = init_weights(ModelConfig{}, 1);
  std::vector<InstanceBatch> batch;
  Workload() {
    PriorConfig prior;
    prior.max_marks = 3;
    prior.window_end = 30.0;
    prior.base_kinds = {BaseKind::Constant, BaseKind::Sinusoidal};
    TrainConfig train;
    train.batch_instances = 1;
    batch = make_pretrain_batch(prior, weights.config, train, 0);
  }
};

void BM_ForwardNll(benchmark::State& state) {
  static const Workload w;
  const auto& b = w.batch.front();
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward_nll_episodes(b.pool, b.episodes, b.time_scale, w.weights));
  }
}
BENCHMARK(BM_ForwardNll)->Unit(benchmark::kMillisecond);

void BM_TrainInstanceStep(benchmark::State& state) {
  static const Workload w;
  for (auto _ : state) benchmark::DoNotOptimize(batch_loss(w.weights, w.batch, true));
}
BENCHMARK(BM_TrainInstanceStep)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace fimpp

BENCHMARK_MAIN();
