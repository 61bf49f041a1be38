#include <cmath>

#include "doctest.h"
#include "flowdro/error.hpp"
#include "flowdro/prox.hpp"
#include "flowdro/risk.hpp"
#include "flowdro/rng.hpp"

using namespace flowdro;
using namespace flowdro::prox;
using ad::DenseArray;

namespace {

// V(z) = log(1 + exp(a.z)) + 0.1 ||z||^2, smooth but not handled in closed form.
class SoftPotential final : public risk::Potential {
public:
    ad::Var on_tape(ad::Tape& tape, ad::Var x, std::span<const int>) const override
    {
        auto w = tape.constant(DenseArray::matrix(2, 1, {1.0, -2.0}));
        auto lin = ad::affine(x, w);
        return ad::add(ad::softplus(lin, 1.0), ad::squared_norm_rows(x), 1.0, 0.1);
    }
};

}  // namespace

TEST_CASE("quadratic prox closed form")
{
    auto v = risk::QuadraticPotential::origin(2);
    const std::vector<double> x{1.5, -2.0};
    for (double gamma : {0.1, 0.5, 1.0, 4.0}) {
        auto r = prox_point(v, x, gamma);
        CHECK(std::abs(r.minimizer[0] - x[0] / (1 + gamma)) < 1e-8);
        CHECK(std::abs(r.minimizer[1] - x[1] / (1 + gamma)) < 1e-8);
        CHECK(std::abs(r.envelope - 6.25 / (2 * (1 + gamma))) < 1e-8);
    }
    CHECK(moreau_envelope(risk::QuadraticPotential::origin(1), std::vector<double>{2.0}, 1.0) == doctest::Approx(1.0));

    auto tiny = prox_point(v, x, 1e-8);
    CHECK(std::abs(tiny.minimizer[0] - x[0]) < 1e-6);
}

TEST_CASE("linear prox closed form")
{
    risk::LinearPotential v({2.0, -1.0});
    auto r = prox_point(v, std::vector<double>{0.0, 0.0}, 0.25);
    CHECK(r.minimizer[0] == doctest::Approx(-0.5));
    CHECK(r.minimizer[1] == doctest::Approx(0.25));
}

TEST_CASE("iterative prox on a smooth potential")
{
    SoftPotential v;
    v.set_smoothness(5.0 * 0.25 + 0.2);
    Rng rng(1);
    for (int i = 0; i < 10; ++i) {
        const std::vector<double> x{rng.normal(), rng.normal()};
        double prev = v.value(x);
        for (double gamma : {0.05, 0.2, 0.5, 1.0, 2.0}) {
            auto r = prox_point(v, x, gamma, ProxOptions{1e-10});
            CHECK(!r.analytic);
            CHECK(r.residual < 1e-8);
            CHECK(r.envelope <= v.value(x) + 1e-12);
            CHECK(r.envelope <= prev + 1e-12);
            prev = r.envelope;
        }
    }
    CHECK_THROWS_AS(prox_point(v, std::vector<double>{0, 0}, 0.5, ProxOptions{1e-30, 3}), NumericalError);
    CHECK_THROWS_AS(prox_point(v, std::vector<double>{0, 0}, -1.0), ValidationError);
}

TEST_CASE("dual function")
{
    auto v = risk::QuadraticPotential::origin(1);
    auto zero = EmpiricalMeasure::from_rows(1, {0.0});
    for (double lambda : {0.1, 1.0, 7.0}) CHECK(dual_value_discrete(v, zero, lambda, 0.3).value == doctest::Approx(-lambda * 0.09));

    Rng rng(4);
    auto p = DiagGaussian({0}, {1}).sample(200, rng);
    const double gamma = 0.5, eps = 0.3;
    const double lambda = lambda_from_gamma(gamma);
    double m2 = p.second_moment();
    CHECK(dual_value_discrete(v, p, lambda, eps).value ==
          doctest::Approx(m2 / (2 * (1 + gamma)) - eps * eps / (2 * gamma)).epsilon(1e-9));

    auto e0 = dual_value_discrete(v, p, lambda, 0.0);
    double mean_env = 0;
    for (double u : e0.envelopes) mean_env += u / 200.0;
    CHECK(e0.value == doctest::Approx(mean_env).epsilon(1e-14));
    CHECK(gamma_from_lambda(lambda) == doctest::Approx(gamma));
}

TEST_CASE("gamma calibration")
{
    // radius of the exact quadratic prox map on N(0,1): gamma / (1 + gamma)
    auto radius = [](double g) { return g / (1 + g); };
    auto r = calibrate_gamma(radius, 0.25, 1e-3, 10.0, 1e-6);
    CHECK(r.converged);
    CHECK(r.gamma == doctest::Approx(1.0 / 3.0).epsilon(1e-4));

    auto z = calibrate_gamma(radius, 0.0, 1e-6, 10.0, 1e-3);
    CHECK(z.achieved < 1e-3);
    CHECK(z.gamma == doctest::Approx(1e-6));

    CHECK_THROWS_AS(calibrate_gamma(radius, 0.99, 1e-3, 10.0, 1e-6), ValidationError);
}

TEST_CASE("first-order and backward Euler residuals")
{
    auto v = risk::QuadraticPotential::origin(2);
    Rng rng(8);
    auto p = DiagGaussian({0, 0}, {1, 1}).sample(50, rng);
    const double gamma = 0.5;
    DenseArray z = p.points();
    for (double& x : z.values()) x /= 1 + gamma;
    auto q = p.with_points(z);
    CHECK(foc_residual(v, p, q, gamma) < 1e-8);

    double g2 = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        for (double x : p.point(i)) g2 += x * x / 50.0;
    CHECK(foc_residual(v, p, p, gamma) == doctest::Approx(std::sqrt(g2)));

    CHECK(backward_euler_residual(v, p.points(), z, gamma) < 1e-14);
    double step = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 2; ++j) s += std::pow(z(i, j) - p.points()(i, j), 2);
        step = std::max(step, std::sqrt(s));
    }
    CHECK(backward_euler_residual(v, p.points(), z, 0.0) == doctest::Approx(step));
}
