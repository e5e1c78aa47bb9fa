#include <benchmark/benchmark.h>

#include <numeric>
#include <vector>

#include "cfm/autodiff.hpp"
#include "cfm/eval.hpp"
#include "cfm/ops.hpp"
#include "cfm/rng.hpp"
#include "cfm/trainer.hpp"

using namespace cfm;

static void BM_MatmulForwardBackward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    RngStream rng(1);
    const Tensor a = sample_standard_normal(rng, {n, n});
    const Tensor b = sample_standard_normal(rng, {n, n});
    for (auto _ : state) {
        Tape tape;
        const Var x = tape.leaf(a);
        const Var y = tape.leaf(b);
        auto grads = tape.backward(ops::sum(ops::matmul(x, y)));
        benchmark::DoNotOptimize(grads.wrt(x).values().data());
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_MatmulForwardBackward)->RangeMultiplier(2)->Range(16, 128)->Complexity();

static void BM_Velocity(benchmark::State& state) {
    const auto batch = static_cast<std::size_t>(state.range(0));
    RunConfig config;
    Trainer trainer(config);
    RngStream rng(2);
    const Tensor x = sample_standard_normal(rng, {batch, 2});
    const std::vector<double> t(batch, 0.5);
    const std::vector<int> conditions(batch, 0);
    for (auto _ : state) {
        const Var v = trainer.model().velocity(t, Var(x), conditions, nullptr);
        benchmark::DoNotOptimize(v.value().values().data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_Velocity)->Arg(16)->Arg(256);

static void BM_Stage2Step(benchmark::State& state) {
    RunConfig config;
    config.samples_per_epoch = config.batch_size;
    config.stage2_epochs = 1;
    config.delta_scheduling = state.range(0) != 0;
    Trainer trainer(config);
    for (auto _ : state) {
        trainer.run_stage2();
    }
}
BENCHMARK(BM_Stage2Step)->Arg(0)->Arg(1);

static void BM_EnergyDistance(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    RngStream rng(3);
    const Tensor a = sample_standard_normal(rng, {n, 2});
    const Tensor b = sample_standard_normal(rng, {n, 2});
    for (auto _ : state) {
        benchmark::DoNotOptimize(energy_distance(a, b));
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_EnergyDistance)->RangeMultiplier(4)->Range(256, 4096)->Complexity(benchmark::oNSquared);
BENCHMARK_MAIN();
