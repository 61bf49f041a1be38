#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "flowdro/datasets.hpp"
#include "flowdro/error.hpp"
#include "flowdro/ot.hpp"
#include "flowdro/privacy.hpp"
#include "flowdro/rng.hpp"

using namespace flowdro;
using namespace flowdro::privacy;
using ad::DenseArray;

TEST_CASE("apm calibration")
{
    CHECK(calibrate_apm(MechanismKind::APMGaussian, 0.0, 3) == 0.0);
    CHECK(calibrate_apm(MechanismKind::APMGaussian, 1.0, 1) == doctest::Approx(std::sqrt(std::numbers::pi / 2)));
    CHECK(calibrate_apm(MechanismKind::APMLaplace, 1.0, 1) == doctest::Approx(1.0));

    // Monte-Carlo reference for d = 2
    Rng rng(1);
    double acc = 0;
    const int draws = 1000000;
    for (int i = 0; i < draws; ++i) acc += std::hypot(rng.normal(), rng.normal());
    const double sigma = 1.0 / (acc / draws);
    CHECK(calibrate_apm(MechanismKind::APMGaussian, 1.0, 2) == doctest::Approx(sigma).epsilon(0.005));
    CHECK(calibrate_apm(MechanismKind::APMLaplace, 1.0, 2) > 0.0);
    CHECK_THROWS_AS(calibrate_apm(MechanismKind::APMGaussian, -1.0, 2), ValidationError);
}

TEST_CASE("identity mechanisms")
{
    auto q = EmpiricalMeasure(DenseArray::matrix(3, 2, {0, 1, 2, 3, 4, 5}), {}, {0, 1, 0});
    auto g = Mechanism::gaussian(0.0, 2);
    CHECK(apply_mechanism(g, q, 5).points() == q.points());

    dro::LabeledTransport identity;
    identity.chains.push_back(flow::FlowChain{});
    auto dpm = Mechanism::dpm(identity, q);
    CHECK(dpm.budget == 0.0);
    CHECK(apply_mechanism(dpm, q, 5).points() == q.points());
}

TEST_CASE("apm displacement matches budget")
{
    Rng rng(2);
    auto q = DiagGaussian({0, 0, 0}, {1, 1, 1}).sample(20000, rng);
    for (auto m : {Mechanism::gaussian(0.4, 3, 1), Mechanism::laplace(0.4, 3, 1)}) {
        auto out = apply_mechanism(m, q, 9);
        CHECK(mean_displacement(q, out.points()) == doctest::Approx(0.4).epsilon(0.02));
        CHECK(apply_mechanism(m, q, 9).points() == out.points());
    }
}

TEST_CASE("missing-item queries")
{
    CHECK(missing_item_query(DenseArray::matrix(1, 2, {3, -1}), 2) == std::vector<double>{3, -1});
    auto mean = missing_item_query(DenseArray::matrix(3, 1, {1, 2, 6}), 4);
    CHECK(mean[0] == doctest::Approx(3.0));

    // symmetric classes at +-m: the average of the others sits on the opposite side
    auto data = data::generate_dataset(data::MixtureSpec{{{-2}, {2}}, {{0.01}, {0.01}}, {0.5, 0.5}}, 200, 3);
    auto qs = missing_item_dataset(data, 2, 50, 4);
    for (std::size_t i = 0; i < qs.size(); ++i) {
        const double x = qs.point(i)[0];
        CHECK((qs.label(i) == 0 ? x > 0 : x < 0));
    }
}

TEST_CASE("error rates")
{
    // perfect 2-class classifier in 1D
    ad::ParamStore s;
    s.add("l0.W", DenseArray::matrix(1, 2, {-10, 10}));
    s.add("l0.b", DenseArray({2}, 0.0));
    risk::MLPClassifier perfect(ad::Mlp(ad::MlpSpec{{1, 2}}, std::move(s)));
    auto test = EmpiricalMeasure(DenseArray::matrix(4, 1, {-1, -2, 1, 2}), {}, {0, 0, 1, 1});
    auto r = error_rates(perfect, Mechanism::gaussian(0.0, 1), QueryTask{QueryKind::Point, 2}, test, 1);
    CHECK(r.alpha_avg == 0.0);
    CHECK(r.beta_avg == 0.0);

    // uniformly random 10-class predictions
    Rng rng(5);
    std::vector<double> pts(10000);
    std::vector<int> labels(10000);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        pts[i] = static_cast<double>(rng.uniform_index(10));
        labels[i] = static_cast<int>(rng.uniform_index(10));
    }
    ad::ParamStore s10;
    std::vector<double> w(10), b(10);
    for (int k = 0; k < 10; ++k) {
        w[k] = 100.0 * k;
        b[k] = -50.0 * k * k;
    }
    s10.add("l0.W", DenseArray::matrix(1, 10, w));
    s10.add("l0.b", DenseArray({10}, b));
    risk::MLPClassifier picks_x(ad::Mlp(ad::MlpSpec{{1, 10}}, std::move(s10)));
    auto queries = EmpiricalMeasure(DenseArray::matrix(10000, 1, pts), {}, labels);
    auto rr = error_rates_on(picks_x, Mechanism::gaussian(0.0, 1), queries, 10, 1);
    for (int k = 0; k < 10; ++k) {
        CHECK(std::abs(rr.alpha[k] - 0.1) < 0.02);
        CHECK(std::abs(rr.beta[k] - 0.9) < 0.02);
    }

    std::vector<std::size_t> keep = queries.indices_with_label(3);
    for (auto i : queries.indices_with_label(4)) keep.push_back(i);
    auto partial = error_rates_on(picks_x, Mechanism::gaussian(0.0, 1), queries.subset(keep), 10, 1);
    CHECK(partial.present[3]);
    CHECK(partial.present[4]);
    CHECK(!partial.present[5]);
    CHECK(std::isnan(partial.alpha[5]));

    std::ostringstream csv;
    write_error_csv(rr, csv);
    CHECK(csv.str().rfind("class,alpha,beta", 0) == 0);
    CHECK(csv.str().find("average") != std::string::npos);
}
