#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "flowdro/error.hpp"
#include "flowdro/flow.hpp"
#include "flowdro/ot.hpp"
#include "flowdro/rng.hpp"
#include "flowdro/verify.hpp"

using namespace flowdro;
using namespace flowdro::flow;
using ad::DenseArray;

namespace {

FlowBlock constant_block(std::vector<double> c, Method method = Method::Euler, int substeps = 1)
{
    Rng rng(0);
    auto field = VelocityField::initialize(c.size(), {}, false, rng);
    auto& b = field.params().value("l0.b");
    for (std::size_t i = 0; i < c.size(); ++i) b[i] = c[i];
    return FlowBlock{field, IntegratorConfig{method, substeps}, 1.0};
}

}  // namespace

TEST_CASE("integrate constant and zero fields")
{
    auto blk = constant_block({0.5, -2});
    auto tr = integrate(blk, std::vector<double>{1, 1});
    CHECK(tr.endpoint[0] == doctest::Approx(1.5));
    CHECK(tr.endpoint[1] == doctest::Approx(-1.0));

    for (auto method : {Method::Euler, Method::RK4})
        for (int s : {1, 2, 5}) {
            Rng rng(4);
            FlowBlock zero{VelocityField::initialize(2, {8}, true, rng), {method, s}, 1.0};
            auto out = integrate(zero, std::vector<double>{0.3, -0.7}, true);
            CHECK(out.endpoint == std::vector<double>{0.3, -0.7});
            CHECK(out.states.size() == static_cast<std::size_t>(s + 1));
        }
}

TEST_CASE("integrate linear decay")
{
    auto blk = verify::linear_decay_block(Method::RK4, 3);
    CHECK(std::abs(integrate(blk, std::vector<double>{1.0}).endpoint[0] - std::exp(-1.0)) < 1e-3);
    CHECK(verify::integrator_order(Method::RK4, {2, 4, 8, 16}) >= 3.5);
    CHECK(verify::integrator_order(Method::Euler, {2, 4, 8, 16}) >= 0.9);
}

TEST_CASE("evaluation counter")
{
    auto blk = verify::linear_decay_block(Method::RK4, 5);
    EvalCounter counter;
    integrate_batch(blk, DenseArray::matrix(7, 1, {1, 2, 3, 4, 5, 6, 7}), nullptr, &counter);
    CHECK(counter.evaluations == 4u * 5u * 7u);
    CHECK(blk.integrator.evaluations_per_point() == 20u);
}

TEST_CASE("push_forward through chains")
{
    Rng rng(1);
    auto p = DiagGaussian({0, 0}, {1, 1}).sample(10, rng);
    CHECK(push_forward(FlowChain{}, p).points() == p.points());

    FlowChain chain{{constant_block({1, 2})}};
    auto q = push_forward(chain, p);
    for (std::size_t i = 0; i < p.size(); ++i) {
        CHECK(q.point(i)[0] == doctest::Approx(p.point(i)[0] + 1));
        CHECK(q.point(i)[1] == doctest::Approx(p.point(i)[1] + 2));
    }
    CHECK(chain_transport_cost(FlowChain{}, p) == 0.0);
    CHECK(chain_transport_cost(chain, p) == doctest::Approx(5.0));

    FlowChain bad{{constant_block({1, 2}), constant_block({1})}};
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("block objective")
{
    auto v = risk::QuadraticPotential::origin(2);
    Rng rng(2);
    auto batch = DiagGaussian({0, 0}, {1, 1}).sample(20, rng);
    FlowBlock zero{VelocityField::initialize(2, {8}, false, rng), {Method::Euler, 1}, 1.0};
    double ev = 0;
    for (double x : v.values(batch.points())) ev += x / 20.0;
    CHECK(block_objective(zero, v, batch) == doctest::Approx(ev));

    auto single = EmpiricalMeasure::from_rows(2, {1, 0});
    CHECK(block_objective(zero, v, single) == doctest::Approx(0.5));

    auto shift = constant_block({1, 0});
    shift.gamma = 1e12;
    CHECK(block_objective(shift, v, single) == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("block gradient matches finite differences")
{
    auto v = risk::QuadraticPotential({0.5, -0.5}, 2.0);
    Rng rng(3);
    auto batch = DiagGaussian({0, 0}, {1, 1}).sample(6, rng);
    FlowBlock blk{VelocityField::initialize(2, {6}, true, rng), {Method::RK4, 2}, 0.7};
    auto& params = blk.field.params();
    auto theta = params.flat_values();
    for (auto& t : theta) t += 0.1 * rng.normal();
    params.set_flat_values(theta);
    params.zero_grad();
    block_objective_grad(blk, v, batch);
    const auto g = params.flat_grads();
    const double h = 1e-5;
    double err = 0, norm = 0;
    for (std::size_t k = 0; k < theta.size(); ++k) {
        auto tp = theta, tm = theta;
        tp[k] += h;
        tm[k] -= h;
        params.set_flat_values(tp);
        const double fp = block_objective(blk, v, batch);
        params.set_flat_values(tm);
        const double fm = block_objective(blk, v, batch);
        const double fd = (fp - fm) / (2 * h);
        err += (fd - g[k]) * (fd - g[k]);
        norm += g[k] * g[k];
    }
    CHECK(std::sqrt(err) / std::max(std::sqrt(norm), 1e-12) < 1e-5);
}

TEST_CASE("flat potential at the identity map has zero gradient")
{
    risk::LinearPotential v({0.0, 0.0});
    Rng rng(5);
    auto batch = DiagGaussian({0, 0}, {1, 1}).sample(4, rng);
    FlowBlock blk{VelocityField::initialize(2, {6}, true, rng), {Method::RK4, 2}, 1.0};
    blk.field.params().zero_grad();
    block_objective_grad(blk, v, batch);
    for (double g : blk.field.params().flat_grads()) CHECK(g == doctest::Approx(0.0));
}

TEST_CASE("chain save and load")
{
    Rng rng(6);
    FlowChain chain;
    for (int k = 0; k < 2; ++k)
        chain.blocks.push_back(FlowBlock{VelocityField::initialize(2, {4}, k == 1, rng), {Method::RK4, 2}, 0.3 + k});
    for (auto& b : chain.blocks) {
        auto theta = b.field.params().flat_values();
        for (auto& t : theta) t = rng.normal();
        b.field.params().set_flat_values(theta);
    }
    const auto dir = std::filesystem::temp_directory_path() / "flowdro_chain_test";
    std::filesystem::create_directories(dir);
    save_chain(chain, (dir / "chain.json").string());
    auto back = load_chain((dir / "chain.json").string());
    REQUIRE(back.size() == 2);
    auto p = DiagGaussian({0, 0}, {1, 1}).sample(5, rng);
    CHECK(push_points(back, p.points()) == push_points(chain, p.points()));
    CHECK(back.blocks[1].gamma == 1.3);
    std::filesystem::remove_all(dir);
}
