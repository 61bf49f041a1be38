#include <benchmark/benchmark.h>

#include "flowdro/measure.hpp"
#include "flowdro/ot.hpp"
#include "flowdro/rng.hpp"

using namespace flowdro;

static void BM_Hungarian(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    const auto p = DiagGaussian({0, 0}, {1, 1}).sample(n, rng);
    const auto q = DiagGaussian({1, 0}, {2, 1}).sample(n, rng);
    for (auto _ : state) benchmark::DoNotOptimize(w2_assignment(p, q).w2);
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Hungarian)->RangeMultiplier(2)->Range(64, 1024)->Complexity(benchmark::oNCubed);

static void BM_W2OneDim(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(2);
    const auto p = DiagGaussian({0}, {1}).sample(n, rng);
    const auto q = DiagGaussian({2}, {1.2}).sample(n, rng);
    for (auto _ : state) benchmark::DoNotOptimize(w2_1d(p, q));
}
BENCHMARK(BM_W2OneDim)->Range(1 << 10, 1 << 16);
