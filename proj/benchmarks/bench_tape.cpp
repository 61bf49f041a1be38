#include <benchmark/benchmark.h>

#include "flowdro/mlp.hpp"
#include "flowdro/rng.hpp"
#include "flowdro/tape.hpp"

using namespace flowdro;
using namespace flowdro::ad;

static void BM_MlpForwardBackward(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(3);
    Mlp net = Mlp::initialize(MlpSpec{{2, 32, 32, 2}}, rng);
    DenseArray x({n, 2});
    for (double& v : x.values()) v = rng.normal();
    for (auto _ : state) {
        Tape t(false);
        auto leaves = net.bind_trainable(t);
        auto loss = mean(squared_norm_rows(net.apply(leaves, t.input(x))));
        t.backward(loss);
        net.params().zero_grad();
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MlpForwardBackward)->Range(64, 4096);

static void BM_TapeReplay(benchmark::State& state)
{
    Rng rng(4);
    Mlp net = Mlp::initialize(MlpSpec{{2, 32, 32, 2}}, rng);
    DenseArray x({1024, 2});
    for (double& v : x.values()) v = rng.normal();
    Tape t(false);
    auto leaves = net.bind_frozen(t);
    auto out = sum(net.apply(leaves, t.input(x)));
    const DenseArray inputs[] = {x};
    for (auto _ : state) benchmark::DoNotOptimize(t.eval(inputs, out).item());
}
BENCHMARK(BM_TapeReplay);
