#include <benchmark/benchmark.h>

#include "flowdro/flow.hpp"
#include "flowdro/rng.hpp"

using namespace flowdro;
using namespace flowdro::flow;

static void run_integrator(benchmark::State& state, Method method)
{
    const int substeps = static_cast<int>(state.range(0));
    Rng rng(5);
    FlowBlock block{VelocityField::initialize(2, {32, 32}, true, rng), {method, substeps}, 1.0};
    auto theta = block.field.params().flat_values();
    for (double& v : theta) v = 0.3 * rng.normal();
    block.field.params().set_flat_values(theta);
    ad::DenseArray x({1024, 2});
    for (double& v : x.values()) v = rng.normal();
    for (auto _ : state) benchmark::DoNotOptimize(integrate_batch(block, x));
    state.SetItemsProcessed(state.iterations() * 1024);
}

static void BM_IntegrateEuler(benchmark::State& state) { run_integrator(state, Method::Euler); }
static void BM_IntegrateRK4(benchmark::State& state) { run_integrator(state, Method::RK4); }
BENCHMARK(BM_IntegrateEuler)->Arg(1)->Arg(4)->Arg(16);
BENCHMARK(BM_IntegrateRK4)->Arg(1)->Arg(4)->Arg(16);

static void BM_BlockObjectiveGrad(benchmark::State& state)
{
    Rng rng(6);
    FlowBlock block{VelocityField::initialize(2, {32, 32}, true, rng), {Method::RK4, 3}, 0.5};
    const auto batch = DiagGaussian({0, 0}, {1, 1}).sample(static_cast<std::size_t>(state.range(0)), rng);
    const auto v = risk::QuadraticPotential::origin(2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(block_objective_grad(block, v, batch).objective);
        block.field.params().zero_grad();
    }
}
BENCHMARK(BM_BlockObjectiveGrad)->Range(128, 2048);
