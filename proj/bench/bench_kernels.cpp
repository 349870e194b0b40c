// Copyright 2026 The divhf Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include "divhf/descriptor.hpp"
#include "divhf/qd.hpp"
#include "divhf/training.hpp"

using namespace divhf;

namespace {

struct Data {
    env::EnvConfig cfg;
    env::Dataset ds;
    std::vector<env::Trajectory> trajectories;
    std::vector<pref::PreferenceRecord> records;
    desc::DescriptorModel model;

    Data()
    {
        ds = env::collect(512, cfg, 5.0, 1);
        for (const auto& r : ds.records())
            trajectories.push_back(r.trajectory);
        for (const auto& t : pref::sample_triplets(ds.size(), 256, 2)) {
            const auto l = pref::oracle_label(t, ds);
            records.push_back({t, l.most_similar, l.most_diverse, pref::Source::oracle, 0});
        }
        model = desc::make_descriptor(cfg.feature_width(), 32, 4, desc::Pooling::mean_max, 3);
    }
};

const Data& data()
{
    static const Data d;
    return d;
}

template <bool Parallel>
void BM_EncodeBatch(benchmark::State& state)
{
    const auto& d = data();
    for (auto _ : state) {
        auto m = Parallel ? desc::encode_batch(d.model, d.trajectories) : desc::encode_batch_serial(d.model, d.trajectories);
        benchmark::DoNotOptimize(m.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.trajectories.size()));
}

template <bool Parallel>
void BM_LossGrad(benchmark::State& state)
{
    const auto& d = data();
    const std::span batch(d.records.data(), 64);
    for (auto _ : state) {
        auto g = Parallel ? train::batch_loss_and_grad(d.model, batch, d.ds, train::LossKind::cross_entropy, 1.0)
                          : train::batch_loss_and_grad_serial(d.model, batch, d.ds, train::LossKind::cross_entropy, 1.0);
        benchmark::DoNotOptimize(g.loss);
    }
}

template <bool Parallel>
void BM_AssignCells(benchmark::State& state)
{
    const auto points = qd::uniform_samples(10000, 4, 4);
    const auto centroids = qd::uniform_samples(static_cast<std::size_t>(state.range(0)), 4, 5);
    for (auto _ : state) {
        auto a = Parallel ? qd::assign_cells(points, centroids) : qd::assign_cells_serial(points, centroids);
        benchmark::DoNotOptimize(a.data());
    }
}

template <bool Parallel>
void BM_EvaluateOffspring(benchmark::State& state)
{
    const auto& d = data();
    std::vector<env::Solution> sols;
    for (std::size_t i = 0; i < 64; ++i)
        sols.push_back(d.ds[i].solution);
    const qd::LearnedDescriptor ld(d.model, false);
    for (auto _ : state) {
        auto o = Parallel ? qd::evaluate_offspring(sols, d.cfg, ld) : qd::evaluate_offspring_serial(sols, d.cfg, ld);
        benchmark::DoNotOptimize(o.data());
    }
}

} // namespace

BENCHMARK(BM_EncodeBatch<false>)->Name("encode_batch/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EncodeBatch<true>)->Name("encode_batch/openmp")->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_LossGrad<false>)->Name("loss_grad/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LossGrad<true>)->Name("loss_grad/openmp")->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_AssignCells<false>)->Name("assign_cells/serial")->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AssignCells<true>)->Name("assign_cells/openmp")->Arg(256)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_EvaluateOffspring<false>)->Name("evaluate_offspring/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EvaluateOffspring<true>)->Name("evaluate_offspring/openmp")->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
