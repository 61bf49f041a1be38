#include <cmath>

#include "doctest.h"
#include "flowdro/error.hpp"
#include "flowdro/rng.hpp"
#include "flowdro/verify.hpp"
#include "flowdro/wdro_lp.hpp"

using namespace flowdro;
using namespace flowdro::wdro;
using ad::DenseArray;

namespace {

WdroLpInstance two_point(double eps)
{
    return WdroLpInstance{DenseArray::matrix(2, 1, {0, 1}), 1, 1, eps, eps};
}

}  // namespace

TEST_CASE("simplex on a tiny program")
{
    lp::LpStandardForm f;
    f.num_vars = 1;
    f.objective = {1.0};
    f.matrix = {};
    f.at(f.add_row(lp::Sense::LessEqual, 0.3), 0) = 1;
    f.at(f.add_row(lp::Sense::LessEqual, 0.7), 0) = 1;
    CHECK(lp::lp_solve(f).objective == doctest::Approx(0.3));

    lp::LpStandardForm infeasible;
    infeasible.num_vars = 1;
    infeasible.objective = {1.0};
    infeasible.at(infeasible.add_row(lp::Sense::GreaterEqual, 2.0), 0) = 1;
    infeasible.at(infeasible.add_row(lp::Sense::LessEqual, 1.0), 0) = 1;
    CHECK_THROWS_AS(lp::lp_solve(infeasible), NumericalError);
}

TEST_CASE("wdro lp layout")
{
    CHECK(build_wdro_lp(two_point(0.1)).num_vars == 14);
    CHECK(WdroLayout{5}.count() == 2 * 5 + 2 * 25 + 5);
}

TEST_CASE("two-point instances")
{
    auto zero = solve_wdro(two_point(0.0));
    CHECK(zero.p1 == std::vector<double>{1, 0});
    CHECK(zero.p2 == std::vector<double>{0, 1});
    CHECK(zero.objective == 0.0);
    CHECK(solve_wdro(two_point(0.5)).objective == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(solve_wdro(two_point(0.2)).objective == doctest::Approx(0.4).epsilon(1e-12));
    for (double eps : {0.0, 0.2, 0.5, 2.0})
        CHECK(std::abs(solve_wdro(two_point(eps)).objective - verify::wdro_two_point_grid(eps, eps, 100)) < 1e-9);
}

TEST_CASE("zero and large budgets")
{
    WdroLpInstance inst{DenseArray::matrix(5, 1, {0, 1, 1, 2, 4}), 3, 2, 0, 0};
    auto r = solve_wdro(inst);
    // zero budget keeps each class on its own samples
    CHECK(r.objective == 0.0);
    // samples 1 and 2 share a location
    CHECK(r.p1[0] == doctest::Approx(1.0 / 3));
    CHECK(r.p1[1] + r.p1[2] == doctest::Approx(2.0 / 3));
    CHECK(r.p2[3] == doctest::Approx(0.5));
    inst.eps1 = inst.eps2 = 4.0;
    CHECK(solve_wdro(inst).objective == doctest::Approx(1.0));
}

TEST_CASE("random instances against enumeration")
{
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n1 = 1 + rng.uniform_index(2), n2 = 1 + rng.uniform_index(2);
        std::vector<double> pts(n1 + n2);
        for (double& x : pts) x = rng.uniform_index(3);
        WdroLpInstance inst{DenseArray::matrix(n1 + n2, 1, pts), n1, n2, 0.05 * rng.uniform_index(10),
                            0.05 * rng.uniform_index(10)};
        const auto sol = solve_wdro(inst);
        auto [marg, budget] = check_pair(inst, sol);
        CHECK(marg < 1e-9);
        CHECK(budget < 1e-9);
        CHECK(std::abs(sol.objective - verify::wdro_enumeration_1d(inst, 40)) < 1e-3);
    }
}

TEST_CASE("instance json round trip and validation")
{
    WdroLpInstance inst{DenseArray::matrix(3, 2, {0, 0, 1, 0, 0, 1}), 2, 1, 0.1, 0.3, true};
    auto back = parse_instance_json(instance_json(inst));
    CHECK(back.points == inst.points);
    CHECK(back.n1 == 2);
    CHECK(back.eps2 == 0.3);
    CHECK(back.squared_cost);
    CHECK_THROWS_AS(parse_instance_json(R"({"points":[[0]],"n1":1,"n2":1,"eps1":0,"eps2":0})"), ValidationError);
    CHECK_THROWS_AS(solve_wdro(WdroLpInstance{DenseArray::matrix(2, 1, {0, 1}), 1, 1, -0.1, 0}), ValidationError);
}

TEST_CASE("smoothed sampler")
{
    auto sol = solve_wdro(two_point(0.2));
    auto [a, b] = smoothed_lfd_sampler(sol, DenseArray::matrix(2, 1, {0, 1}), 0.05, 4000, 3);
    CHECK(a.size() == 4000);
    CHECK(a.labels()[0] == 0);
    CHECK(b.labels()[0] == 1);
    CHECK(a.mean()[0] == doctest::Approx(sol.p1[1]).epsilon(0.1));
}
