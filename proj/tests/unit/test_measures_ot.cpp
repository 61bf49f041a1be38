#include <cmath>
#include <sstream>

#include "doctest.h"
#include "flowdro/error.hpp"
#include "flowdro/measure.hpp"
#include "flowdro/ot.hpp"
#include "flowdro/rng.hpp"
#include "flowdro/verify.hpp"

using namespace flowdro;
using ad::DenseArray;

namespace {

EmpiricalMeasure line(std::vector<double> xs) { return EmpiricalMeasure::from_rows(1, std::move(xs)); }

}  // namespace

TEST_CASE("w2_assignment small cases")
{
    Rng rng(3);
    auto p = DiagGaussian({0, 0}, {1, 1}).sample(7, rng);
    auto self = w2_assignment(p, p);
    CHECK(self.w2 == 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(self.plan.matching[i] == i);

    CHECK(w2_assignment(line({0}), line({3})).w2 == doctest::Approx(3.0));
    auto r = w2_assignment(line({0, 1}), line({1, 2}));
    CHECK(r.w2 == doctest::Approx(1.0));
    CHECK(r.plan.matching == std::vector<std::size_t>{0, 1});
}

TEST_CASE("w2_assignment matches brute force")
{
    Rng rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(6);
        const std::size_t d = 1 + rng.uniform_index(3);
        std::vector<double> a(n * d), b(n * d);
        for (double& v : a) v = rng.normal();
        for (double& v : b) v = rng.normal();
        auto p = EmpiricalMeasure::from_rows(d, a);
        auto q = EmpiricalMeasure::from_rows(d, b);
        CHECK(std::abs(w2_assignment(p, q).w2 - verify::brute_force_w2(p, q)) < 1e-12);
    }
}

TEST_CASE("w2_1d")
{
    CHECK(w2_1d(line({0, 1}), line({1, 0})) == 0.0);
    CHECK(w2_1d(line({0, 2}), line({1, 3})) == doctest::Approx(1.0));

    Rng rng(5);
    auto p = DiagGaussian({0}, {1}).sample(500, rng);
    auto q = DiagGaussian({2}, {1.44}).sample(500, rng);
    CHECK(std::abs(w2_1d(p, q) - std::sqrt(4.04)) < 0.1);

    // weighted inputs keep their plan marginals
    EmpiricalMeasure wp(DenseArray::matrix(3, 1, {0, 1, 5}), {0.2, 0.3, 0.5});
    EmpiricalMeasure wq(DenseArray::matrix(2, 1, {0.5, 4}), {0.6, 0.4});
    auto plan = w2_1d_plan(wp, wq);
    CHECK(plan_marginal_error(plan.plan, wp, wq) < 1e-12);
    CHECK(plan_cost(plan.plan, wp, wq) == doctest::Approx(plan.w2 * plan.w2));
}

TEST_CASE("w2_gaussian_diag")
{
    DiagGaussian a({0}, {1});
    CHECK(w2_gaussian_diag(a, a) == 0.0);
    CHECK(w2_gaussian_diag(a, DiagGaussian({2}, {1.44})) == doctest::Approx(std::sqrt(4.04)).epsilon(1e-12));
    CHECK(w2_gaussian_diag(DiagGaussian({0, 0}, {2, 3}), DiagGaussian({3, 4}, {2, 3})) == doctest::Approx(5.0));
    CHECK_THROWS_AS(w2_gaussian_diag(a, DiagGaussian({0, 0}, {1, 1})), ValidationError);
}

TEST_CASE("pushforward_cost")
{
    Rng rng(2);
    auto p = DiagGaussian({0, 0}, {1, 1}).sample(5, rng);
    CHECK(pushforward_cost([](const DenseArray& x) { return x; }, p) == 0.0);
    auto shift = [](const DenseArray& x) {
        DenseArray y = x;
        for (std::size_t i = 0; i < y.rows(); ++i) {
            y(i, 0) += 3;
            y(i, 1) -= 4;
        }
        return y;
    };
    CHECK(pushforward_cost(shift, p) == doctest::Approx(25.0));

    auto warp = [](const DenseArray& x) {
        DenseArray y = x;
        for (double& v : y.values()) v = std::sin(3 * v) + 0.5 * v;
        return y;
    };
    const double w2 = w2_assignment(p, p.with_points(warp(p.points()))).w2;
    CHECK(pushforward_cost(warp, p) >= w2 * w2 - 1e-12);
}

TEST_CASE("kernel_smooth_sample")
{
    auto q = line({-1, 2, 5});
    auto tight = kernel_smooth_sample(q, 1e-12, 50, 9);
    for (std::size_t i = 0; i < tight.size(); ++i) {
        const double v = tight.point(i)[0];
        CHECK(std::min({std::abs(v + 1), std::abs(v - 2), std::abs(v - 5)}) < 1e-9);
    }

    auto single = EmpiricalMeasure::from_rows(2, {1.5, -0.5});
    auto s = kernel_smooth_sample(single, 1.0, 100000, 4);
    const auto m = s.mean();
    CHECK(std::abs(m[0] - 1.5) < 0.05);
    CHECK(std::abs(m[1] + 0.5) < 0.05);
    double c00 = 0, c11 = 0, c01 = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double a = s.point(i)[0] - m[0], b = s.point(i)[1] - m[1];
        c00 += a * a;
        c11 += b * b;
        c01 += a * b;
    }
    const double n = static_cast<double>(s.size());
    CHECK(std::abs(c00 / n - 1) < 0.05);
    CHECK(std::abs(c11 / n - 1) < 0.05);
    CHECK(std::abs(c01 / n) < 0.05);

    CHECK(kernel_smooth_sample(q, 0.3, 20, 1).points() == kernel_smooth_sample(q, 0.3, 20, 1).points());
}

TEST_CASE("empirical measure validation and csv round trip")
{
    CHECK_THROWS_AS(EmpiricalMeasure(DenseArray::matrix(2, 1, {0, 1}), {0.2, 0.2}), ValidationError);
    CHECK_THROWS_AS(EmpiricalMeasure(DenseArray::matrix(2, 1, {0, 1}), {1.5, -0.5}), ValidationError);

    EmpiricalMeasure m(DenseArray::matrix(3, 2, {0, 1, 2, 3, 4, 5}), {0.25, 0.25, 0.5}, {0, 1, 1});
    std::stringstream ss;
    write_point_csv(m, ss);
    auto back = read_point_csv(ss);
    CHECK(back.points() == m.points());
    CHECK(back.weights() == m.weights());
    CHECK(back.labels() == m.labels());
    CHECK(m.filter_label(1).size() == 2);
    CHECK(m.second_moment() == doctest::Approx(0.25 * 1 + 0.25 * 13 + 0.5 * 41));
}
