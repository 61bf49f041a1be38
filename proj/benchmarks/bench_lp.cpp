#include <benchmark/benchmark.h>

#include "flowdro/datasets.hpp"
#include "flowdro/wdro_lp.hpp"

using namespace flowdro;

static void BM_WdroLp(benchmark::State& state)
{
    const auto per_class = static_cast<std::size_t>(state.range(0));
    const auto sample = data::two_sample_1d(per_class, 7);
    wdro::WdroLpInstance inst{sample.points(), per_class, per_class, 0.1, 0.1};
    for (auto _ : state) benchmark::DoNotOptimize(wdro::solve_wdro(inst).objective);
    state.counters["variables"] = static_cast<double>(wdro::WdroLayout{2 * per_class}.count());
}
BENCHMARK(BM_WdroLp)->DenseRange(2, 10, 4)->Unit(benchmark::kMillisecond);
