#include <cmath>
#include <sstream>

#include "doctest.h"
#include "flowdro/datasets.hpp"
#include "flowdro/dro.hpp"
#include "flowdro/error.hpp"
#include "flowdro/ot.hpp"
#include "flowdro/rng.hpp"

using namespace flowdro;
using namespace flowdro::dro;
using ad::DenseArray;

namespace {

LFDTrainConfig quick(double gamma, int epochs)
{
    LFDTrainConfig cfg;
    cfg.gamma.gamma = gamma;
    cfg.epochs = epochs;
    cfg.integrator = {flow::Method::Euler, 1};
    cfg.hidden = {16, 16};
    cfg.lr = 1e-2;
    return cfg;
}

}  // namespace

TEST_CASE("gamma schedules")
{
    CHECK(GammaSchedule{ScheduleKind::Even, 0.5}.resolve(3) == std::vector<double>{0.5, 0.5, 0.5});
    auto geo = GammaSchedule{ScheduleKind::Geometric, 1.0, 0.5}.resolve(3);
    CHECK(geo == std::vector<double>{1.0, 0.5, 0.25});
    CHECK_THROWS_AS((GammaSchedule{ScheduleKind::Explicit, 1.0, 1.0, {0.1}}.resolve(2)), ValidationError);
}

TEST_CASE("train_lfd validation and zero epochs")
{
    auto v = risk::QuadraticPotential::origin(2);
    auto p = data::generate_dataset(data::GaussianSpec{{0, 0}, {1, 1}}, 64, 1);
    auto cfg = quick(0.5, 0);
    cfg.blocks = 0;
    CHECK_THROWS_AS(train_lfd(v, p, cfg), ValidationError);

    cfg.blocks = 1;
    auto res = train_lfd(v, p, cfg);
    CHECK(res.pushforward.points() == p.points());
    double ev = 0;
    for (double x : v.values(p.points())) ev += x / 64.0;
    CHECK(res.report.risk == doctest::Approx(ev));
    CHECK(res.report.chain_cost == 0.0);
}

TEST_CASE("quadratic proximal pushforward is learned")
{
    auto v = risk::QuadraticPotential::origin(2);
    auto p = data::generate_dataset(data::GaussianSpec{{0, 0}, {1, 1}}, 256, 2);
    auto res = train_lfd(v, p, quick(0.5, 300));
    double err = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        for (std::size_t j = 0; j < 2; ++j)
            err += std::pow(res.pushforward.point(i)[j] - p.point(i)[j] / 1.5, 2) / 256.0;
    CHECK(err < 1e-2 * p.second_moment());
    CHECK(res.report.pass_evaluations == res.report.pass_evaluations_formula);
    CHECK(res.report.pass_evaluations == 256u);
    CHECK(evaluate_lfd(risk::PotentialRisk(std::make_shared<risk::QuadraticPotential>(v)), p, res.pushforward).w2 ==
          doctest::Approx(res.report.w2_estimate).epsilon(0.05));
}

TEST_CASE("progressive blocks and stop radius")
{
    auto v = risk::QuadraticPotential::origin(1);
    auto p = data::generate_dataset(data::GaussianSpec{{0}, {1}}, 128, 3);
    auto cfg = quick(0.2, 80);
    cfg.blocks = 4;
    auto res = train_lfd(v, p, cfg);
    REQUIRE(res.report.classes.size() == 1);
    CHECK(res.report.classes[0].blocks_trained == 4);
    CHECK(res.transport.chains[0].size() == 4);

    cfg.stop_radius = 0.05;
    auto stopped = train_lfd(v, p, cfg);
    CHECK(stopped.report.classes[0].blocks_trained < 4);
}

TEST_CASE("report serialization")
{
    auto v = risk::QuadraticPotential::origin(1);
    auto p = data::generate_dataset(data::GaussianSpec{{0}, {1}}, 32, 4);
    auto res = train_lfd(v, p, quick(0.5, 5));
    std::ostringstream csv;
    write_report_csv(res.report, csv);
    CHECK(csv.str().rfind("block,epoch,", 0) == 0);
    CHECK(report_json(res.report).find("\"w2_estimate\"") != std::string::npos);
}

TEST_CASE("evaluate_lfd budgets")
{
    auto d = data::generate_dataset(data::MixtureSpec{{{-2, 0}, {2, 0}}, {{1, 1}, {1, 1}}, {0.5, 0.5}}, 200, 5);
    Rng rng(6);
    auto m = risk::MLPClassifier::initialize(2, {8}, 2, rng);
    risk::train_classifier(m, d, {30, 5e-2, 0, 1});
    risk::ClassifierRisk r(m);
    auto same = evaluate_lfd(r, d, d);
    CHECK(same.w2 == 0.0);
    CHECK(same.risk_q == doctest::Approx(same.risk_p));
    auto adv = risk::pgd_attack_measure(r, d, {0.3, risk::Norm::L2, 20});
    auto e = evaluate_lfd(r, d, adv);
    CHECK(e.w2 <= 0.3 + 1e-9);
    CHECK(e.risk_q >= e.risk_p);
}

TEST_CASE("samplers")
{
    auto base = gaussian_sampler(DiagGaussian({0, 0}, {1, 1}));
    Rng r1(1), r2(2);
    auto a = base(10000, r1);
    auto b = compose_sampler(base, flow::FlowChain{})(10000, r2);
    Rng r3(3);
    auto sa = subsample(a, 2000, r3), sb = subsample(b, 2000, r3);
    CHECK(w2_assignment(sa, sb).w2 < 0.15);

    Rng frng(0);
    auto field = flow::VelocityField::initialize(2, {}, false, frng);
    field.params().value("l0.b")[0] = 1.5;
    flow::FlowChain shift{{flow::FlowBlock{field, {flow::Method::Euler, 1}, 1.0}}};
    Rng r4(1);
    auto c = compose_sampler(base, shift)(10000, r4);
    CHECK(c.mean()[0] - a.mean()[0] == doctest::Approx(1.5));
}

TEST_CASE("min-max smoke")
{
    auto d = data::generate_dataset(data::MixtureSpec{{{-1, 0}, {1, 0}}, {{1, 1}, {1, 1}}, {0.5, 0.5}}, 128, 7);
    Rng rng(8);
    risk::ClassifierRisk model(risk::MLPClassifier::initialize(2, {8}, 2, rng));
    MinMaxConfig cfg;
    cfg.iterations = 10;
    cfg.hidden = {8};
    cfg.integrator = {flow::Method::Euler, 1};
    auto res = solve_minmax(model, d, cfg);
    CHECK(res.history.size() == 10);
    for (const auto& h : res.history) CHECK(std::isfinite(h.classifier_loss));
}
