#include <cmath>
#include <memory>

#include "doctest.h"
#include "flowdro/datasets.hpp"
#include "flowdro/error.hpp"
#include "flowdro/risk.hpp"
#include "flowdro/rng.hpp"

using namespace flowdro;
using namespace flowdro::risk;
using ad::DenseArray;

namespace {

// 1D two-class classifier with logits (-k x, k x).
MLPClassifier linear_classifier(double k)
{
    ad::ParamStore s;
    s.add("l0.W", DenseArray::matrix(1, 2, {-k, k}));
    s.add("l0.b", DenseArray({2}, 0.0));
    return MLPClassifier(ad::Mlp(ad::MlpSpec{{1, 2}}, std::move(s)));
}

ScalarDetector zero_detector(std::size_t dim)
{
    Rng rng(0);
    auto d = ScalarDetector::initialize(dim, {4}, rng);
    auto theta = d.net().params().flat_values();
    std::fill(theta.begin(), theta.end(), 0.0);
    d.net().params().set_flat_values(theta);
    return d;
}

EmpiricalMeasure pm_one() { return EmpiricalMeasure(DenseArray::matrix(4, 1, {-1, -2, 1, 2}), {}, {0, 0, 1, 1}); }

}  // namespace

TEST_CASE("classifier risk")
{
    auto data = pm_one();
    CHECK(risk_eval(ClassifierRisk(linear_classifier(0.0)), data) == doctest::Approx(std::log(2.0)));
    CHECK(risk_eval(ClassifierRisk(linear_classifier(100.0)), data) == doctest::Approx(0.0));

    EmpiricalMeasure dup(DenseArray::matrix(8, 1, {-1, -2, 1, 2, -1, -2, 1, 2}), {}, {0, 0, 1, 1, 0, 0, 1, 1});
    ClassifierRisk mid(linear_classifier(0.7));
    CHECK(risk_eval(mid, dup) == doctest::Approx(risk_eval(mid, data)));

    CHECK_THROWS_AS(risk_eval(mid, data.with_labels({})), ValidationError);
}

TEST_CASE("accuracy")
{
    auto data = pm_one();
    CHECK(accuracy_eval(linear_classifier(1.0), data) == 100.0);
    CHECK(accuracy_eval(linear_classifier(1.0), data.with_labels({1, 1, 0, 0})) == 0.0);

    ad::ParamStore s;
    s.add("l0.W", DenseArray::matrix(1, 2, {0, 0}));
    s.add("l0.b", DenseArray({2}, std::vector<double>{1, 0}));
    CHECK(accuracy_eval(MLPClassifier(ad::Mlp(ad::MlpSpec{{1, 2}}, std::move(s))), data) == 50.0);
}

TEST_CASE("hypothesis risk with a zero detector")
{
    auto d = zero_detector(1);
    auto q0 = EmpiricalMeasure::from_rows(1, {0, 1, 2});
    auto q1 = EmpiricalMeasure::from_rows(1, {-1, 3});
    CHECK(hypothesis_risk(d, q0, q1, GeneratingFunction::Exp) == doctest::Approx(2.0));
    CHECK(hypothesis_risk(d, q0, q1, GeneratingFunction::Logistic) == doctest::Approx(2 * std::log(2.0)));
    CHECK(hypothesis_risk(d, q0, q1, GeneratingFunction::QuadHinge) == doctest::Approx(2.0));
    CHECK(parse_generating(generating_name(GeneratingFunction::QuadHinge)) == GeneratingFunction::QuadHinge);
    CHECK_THROWS_AS(parse_generating("cubic"), ValidationError);
}

TEST_CASE("pgd attack on linear losses")
{
    const std::vector<double> a{3, -4};
    PotentialRisk r(std::make_shared<LinearPotential>(std::vector<double>{-3, 4}));
    const std::vector<double> x{1, 1};

    auto same = pgd_attack(r, x, -1, PgdConfig{0.0});
    CHECK(same == x);

    auto l2 = pgd_attack(r, x, -1, PgdConfig{0.5, Norm::L2, 1, 1.0});
    CHECK(l2[0] == doctest::Approx(1 + 0.5 * 3 / 5.0));
    CHECK(l2[1] == doctest::Approx(1 - 0.5 * 4 / 5.0));

    auto linf = pgd_attack(r, x, -1, PgdConfig{0.5, Norm::Linf, 1, 1.0});
    CHECK(linf[0] == doctest::Approx(1.5));
    CHECK(linf[1] == doctest::Approx(0.5));

    CHECK_THROWS_AS(pgd_attack(r, x, -1, PgdConfig{-1.0}), ValidationError);
}

TEST_CASE("train_classifier")
{
    data::MixtureSpec blobs{{{-3, 0}, {3, 0}}, {{0.3, 0.3}, {0.3, 0.3}}, {0.5, 0.5}};
    auto d = data::generate_dataset(blobs, 400, 1);
    auto fit = [&](int epochs) {
        Rng rng(2);
        auto m = MLPClassifier::initialize(2, {8}, 2, rng);
        auto res = train_classifier(m, d, TrainClassifierConfig{epochs, 5e-2, 64, 3});
        return std::make_pair(m, res);
    };
    auto [m, res] = fit(60);
    CHECK(accuracy_eval(m, d) >= 99.0);
    CHECK(fit(60).second.epoch_loss == res.epoch_loss);

    Rng rng(2);
    auto untouched = MLPClassifier::initialize(2, {8}, 2, rng);
    auto [zero, _] = fit(0);
    CHECK(zero.net().params().flat_values() == untouched.net().params().flat_values());
}

TEST_CASE("potential gradients")
{
    QuadraticPotential q({1, 2}, 3.0);
    CHECK(q.value(std::vector<double>{2, 2}) == doctest::Approx(1.5));
    auto g = q.gradient(std::vector<double>{2, 2});
    CHECK(g[0] == doctest::Approx(3.0));
    CHECK(g[1] == doctest::Approx(0.0));

    ClassifierRisk cr(linear_classifier(0.8));
    NegatedLossPotential v(cr);
    auto data = pm_one();
    auto losses = cr.losses(data.points(), data.labels());
    auto vals = v.values(data.points(), data.labels());
    for (std::size_t i = 0; i < losses.size(); ++i) CHECK(vals[i] == doctest::Approx(-losses[i]));
}
