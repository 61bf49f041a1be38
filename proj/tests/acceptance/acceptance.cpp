// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "flowdro/dro.hpp"
#include "flowdro/error.hpp"
#include "flowdro/format.hpp"
#include "flowdro/ot.hpp"
#include "flowdro/prox.hpp"
#include "flowdro/rng.hpp"
#include "flowdro/verify.hpp"
#include "flowdro/wdro_lp.hpp"
#include "flowdro_app/config.hpp"
#include "flowdro_app/experiments.hpp"

using namespace flowdro;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

std::string fmt(double v) { return format_double(v); }

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

app::ExperimentConfig config(const std::string& file) { return app::load_config(fs::path(FLOWDRO_CONFIG_DIR) / file); }

bool check_passed(const app::RunReport& r, const std::string& name)
{
    for (const auto& c : r.checks)
        if (c.name == name) return c.passed;
    throw ValidationError("acceptance: report has no check '" + name + "'");
}

struct Outcome {
    bool passed = false;
    std::string detail;
};

// ---- 1, 9 --------------------------------------------------------------------------

const app::RunReport& quadratic_run(double* elapsed = nullptr)
{
    static app::RunReport report;
    static double seconds = 0;
    static bool done = false;
    if (!done) {
        const auto t0 = Clock::now();
        report = app::run_experiment(config("lfd_quadratic.json"));
        seconds = seconds_since(t0);
        done = true;
    }
    if (elapsed) *elapsed = seconds;
    return report;
}

Outcome quadratic_oracle()
{
    double secs = 0;
    const auto& r = quadratic_run(&secs);
    const double rel = r.require_metric("map_error_relative");
    return {rel < 1e-2 && secs < 120, "E|T(x) - x/(1+g)|^2 / E|x|^2 = " + fmt(rel) + ", " + fmt(secs) + " s"};
}

Outcome first_order_conditions()
{
    const auto& r = quadratic_run();
    const double f0 = r.require_metric("foc_residual_initial"), f1 = r.require_metric("foc_residual");
    const double b0 = r.require_metric("backward_euler_initial"), b1 = r.require_metric("backward_euler_residual");
    return {f0 >= 10 * f1 && b0 >= 10 * b1 && b1 < 5e-2,
            "foc " + fmt(f0) + " -> " + fmt(f1) + ", backward Euler " + fmt(b0) + " -> " + fmt(b1)};
}

// ---- 2 -----------------------------------------------------------------------------

Outcome two_sample_lfds()
{
    int ok = 0;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto cfg = config("lfd_two_sample.json");
        cfg.seed = seed;
        const auto r = app::run_experiment(cfg);
        const double r0 = r.require_metric("radius_0"), r1 = r.require_metric("radius_1");
        const bool pass = r0 >= 0.09 && r0 <= 0.11 && r1 >= 0.09 && r1 <= 0.11 &&
                          r.require_metric("w2_q0_q1") < r.require_metric("w2_p0_p1");
        ok += pass;
        detail += (seed ? "; " : "") + std::string("seed ") + std::to_string(seed) + ": radii " + fmt(r0) + "/" +
                  fmt(r1) + ", W2 " + fmt(r.require_metric("w2_q0_q1")) + " < " + fmt(r.require_metric("w2_p0_p1"));
    }
    return {ok == 5, std::to_string(ok) + "/5 (" + detail + ")"};
}

// ---- 3 -----------------------------------------------------------------------------

Outcome exact_ot()
{
    const auto t0 = Clock::now();
    Rng rng(2024);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(6), d = 1 + rng.uniform_index(3);
        std::vector<double> a(n * d), b(n * d);
        for (double& v : a) v = rng.normal();
        for (double& v : b) v = rng.normal();
        const auto p = EmpiricalMeasure::from_rows(d, a), q = EmpiricalMeasure::from_rows(d, b);
        worst = std::max(worst, std::abs(w2_assignment(p, q).w2 - verify::brute_force_w2(p, q)));
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-12 && secs < 30, "max |diff| " + fmt(worst) + ", " + fmt(secs) + " s"};
}

// ---- 4 -----------------------------------------------------------------------------

Outcome autodiff()
{
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) worst = std::max(worst, verify::mlp_gradient_error(seed));
    return {worst < 1e-5, "max relative error " + fmt(worst) + " over 100 MLPs"};
}

// ---- 5 -----------------------------------------------------------------------------

// log(1 + exp(w.z)) + c ||z||^2; L = ||w||^2 / 4 + 2c.
class SoftPlusRidge final : public risk::Potential {
public:
    SoftPlusRidge(std::vector<double> w, double c) : w_(std::move(w)), c_(c)
    {
        double n2 = 0;
        for (double x : w_) n2 += x * x;
        set_smoothness(n2 / 4 + 2 * c_);
    }
    ad::Var on_tape(ad::Tape& tape, ad::Var x, std::span<const int>) const override
    {
        auto w = tape.constant(ad::DenseArray::matrix(w_.size(), 1, w_));
        return ad::add(ad::softplus(ad::affine(x, w), 1.0), ad::squared_norm_rows(x), 1.0, c_);
    }

private:
    std::vector<double> w_;
    double c_;
};

Outcome moreau_prox()
{
    Rng rng(55);
    double worst_res = 0, worst_order = -INFINITY, worst_closed = 0;
    for (int inst = 0; inst < 10; ++inst) {
        const std::size_t d = 1 + rng.uniform_index(3);
        std::vector<double> w(d);
        for (double& x : w) x = 2 * rng.normal();
        SoftPlusRidge v(w, 0.1 + 0.5 * rng.uniform());
        const double L = *v.smoothness();
        for (int pt = 0; pt < 10; ++pt) {
            std::vector<double> x(d);
            for (double& c : x) c = 2 * rng.normal();
            double prev = v.value(x);
            for (int k = 1; k <= 10; ++k) {
                const double gamma = 0.099 * k / L;
                const auto r = prox::prox_point(v, x, gamma, prox::ProxOptions{1e-10});
                worst_res = std::max(worst_res, r.residual);
                worst_order = std::max(worst_order, r.envelope - prev);
                prev = r.envelope;
            }
        }
        std::vector<double> center(d), x(d);
        for (double& c : center) c = rng.normal();
        for (double& c : x) c = 3 * rng.normal();
        const double a = 0.5 + rng.uniform();
        risk::QuadraticPotential q(center, a);
        for (double gamma : {0.01, 0.3, 1.0, 5.0}) {
            const auto r = prox::prox_point(q, x, gamma);
            double dist2 = 0;
            for (std::size_t j = 0; j < d; ++j) {
                const double z = (x[j] + gamma * a * center[j]) / (1 + gamma * a);
                worst_closed = std::max(worst_closed, std::abs(r.minimizer[j] - z));
                dist2 += (x[j] - center[j]) * (x[j] - center[j]);
            }
            worst_closed = std::max(worst_closed, std::abs(r.envelope - a * dist2 / (2 * (1 + gamma * a))));
        }
    }
    return {worst_res < 1e-8 && worst_order <= 1e-12 && worst_closed < 1e-8,
            "max residual " + fmt(worst_res) + ", max u increase " + fmt(worst_order) + " (u(x,0)=V(x) included)" +
                ", closed-form error " + fmt(worst_closed)};
}

// ---- 6 -----------------------------------------------------------------------------

Outcome weak_duality()
{
    const auto v = risk::QuadraticPotential::origin(2);
    Rng rng(66);
    const auto p = DiagGaussian({0, 0}, {1, 1}).sample(256, rng);
    dro::LFDTrainConfig cfg;
    cfg.gamma.gamma = 0.5;
    cfg.epochs = 150;
    cfg.integrator = {flow::Method::Euler, 1};
    cfg.hidden = {16, 16};
    const auto lfd = dro::train_lfd(v, p, cfg);

    std::vector<ad::DenseArray> candidates{lfd.pushforward.points()};
    const double eps = std::sqrt(displacement_cost(p, lfd.pushforward.points()));
    for (int k = 0; k < 10; ++k) {
        ad::DenseArray y = p.points();
        ad::DenseArray delta(y.shape());
        for (double& x : delta.values()) x = rng.normal();
        const double scale = eps * rng.uniform() / std::sqrt(displacement_cost(p, [&] {
                                 ad::DenseArray t = y;
                                 for (std::size_t i = 0; i < t.size(); ++i) t[i] += delta[i];
                                 return t;
                             }()));
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += scale * delta[i];
        candidates.push_back(std::move(y));
    }

    double worst = -INFINITY;
    for (int k = 0; k < 20; ++k) {
        const double lambda = std::exp(rng.normal(0.0, 1.5));
        const double g = prox::dual_value_discrete(v, p, lambda, eps).value;
        for (const auto& q : candidates) {
            const auto vals = v.values(q);
            double eq = 0;
            for (std::size_t i = 0; i < vals.size(); ++i) eq += p.weight(i) * vals[i];
            worst = std::max(worst, g - eq);
        }
    }
    return {worst <= 1e-6, "max G(lambda) - E_Q[V] = " + fmt(worst) + " over 20 lambdas x " +
                               std::to_string(candidates.size()) + " feasible Q at eps " + fmt(eps)};
}

// ---- 7 -----------------------------------------------------------------------------

Outcome wdro_lp()
{
    double worst_two = 0;
    for (double eps : {0.0, 0.2, 0.5, 2.0}) {
        wdro::WdroLpInstance inst{ad::DenseArray::matrix(2, 1, {0, 1}), 1, 1, eps, eps};
        worst_two = std::max(worst_two,
                             std::abs(wdro::solve_wdro(inst).objective - verify::wdro_two_point_grid(eps, eps, 1000)));
    }

    // lattice instances: class sizes dividing 20, budgets on the 1/20 grid; support {0, 1} against the
    // 1/20 enumeration, support {0, 1, 2} against 1/40
    Rng rng(77);
    const std::size_t sizes[] = {1, 2, 4, 5};
    double worst_enum = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n1 = sizes[rng.uniform_index(4)], n2 = sizes[rng.uniform_index(4)];
        if (n1 + n2 > 5) {
            --trial;
            continue;
        }
        const bool wide = trial % 2 == 1;
        std::vector<double> pts(n1 + n2);
        for (double& x : pts) x = static_cast<double>(rng.uniform_index(wide ? 3 : 2));
        wdro::WdroLpInstance inst{ad::DenseArray::matrix(n1 + n2, 1, pts), n1, n2, 0.05 * rng.uniform_index(21),
                                  0.05 * rng.uniform_index(21)};
        worst_enum = std::max(worst_enum, std::abs(wdro::solve_wdro(inst).objective -
                                                   verify::wdro_enumeration_1d(inst, wide ? 40 : 20)));
    }

    // arbitrary 1D instances: the grid optimum is a lower bound
    double worst_bound = -INFINITY;
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n1 = 1 + rng.uniform_index(3), n2 = 1 + rng.uniform_index(2);
        std::vector<double> pts(n1 + n2);
        for (double& x : pts) x = rng.normal();
        wdro::WdroLpInstance inst{ad::DenseArray::matrix(n1 + n2, 1, pts), n1, n2, 0.5 * rng.uniform(),
                                  0.5 * rng.uniform(), trial % 2 == 1};
        worst_bound = std::max(worst_bound, verify::wdro_enumeration_1d(inst, 20) - wdro::solve_wdro(inst).objective);
    }

    bool counts = true;
    for (std::size_t n = 2; n <= 12; ++n) {
        const std::size_t n1 = n / 2;
        ad::DenseArray pts({n, 1});
        for (std::size_t i = 0; i < n; ++i) pts[i] = static_cast<double>(i);
        counts = counts &&
                 wdro::build_wdro_lp({pts, n1, n - n1, 0.1, 0.1}).num_vars == 2 * n + 2 * n * n + n;
    }
    return {worst_two <= 1e-9 && worst_enum <= 1e-3 && worst_bound <= 1e-9 && counts,
            "n=2 max error " + fmt(worst_two) + ", lattice enumeration (200 instances) max error " + fmt(worst_enum) +
                ", grid-above-LP " + fmt(worst_bound) + ", variable counts " + (counts ? "ok" : "wrong")};
}

// ---- 8 -----------------------------------------------------------------------------

Outcome flow_vs_pgd()
{
    int ok = 0;
    double worst_gap = 0, worst_margin = INFINITY;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto cfg = config("lfd_classifier.json");
        cfg.seed = seed;
        const auto r = app::run_experiment(cfg);
        ok += check_passed(r, "budgets matched within 2%") && check_passed(r, "flow risk >= pgd risk - 1e-3");
        worst_gap = std::max(worst_gap, r.require_metric("budget_gap_relative"));
        worst_margin = std::min(worst_margin, r.require_metric("risk_flow") - r.require_metric("risk_pgd"));
    }
    return {ok >= 19, std::to_string(ok) + "/20 seeds, max budget gap " + fmt(worst_gap) +
                          ", min risk_flow - risk_pgd " + fmt(worst_margin)};
}

// ---- 10 ----------------------------------------------------------------------------

Outcome integrators()
{
    const double rk4 = verify::integrator_order(flow::Method::RK4, {2, 4, 8, 16});
    const double euler = verify::integrator_order(flow::Method::Euler, {2, 4, 8, 16, 32});
    bool counter = true;
    for (int s : {1, 3, 7}) {
        const auto blk = verify::linear_decay_block(flow::Method::RK4, s);
        flow::EvalCounter c;
        flow::integrate_batch(blk, ad::DenseArray({13, 1}, 0.5), nullptr, &c);
        counter = counter && c.evaluations == static_cast<std::uint64_t>(4 * s * 13);
    }
    const auto& r = quadratic_run();
    counter = counter && r.require_metric("pass_evaluations") == r.require_metric("pass_evaluations_formula");
    return {rk4 >= 3.5 && euler >= 0.9 && counter,
            "RK4 slope " + fmt(rk4) + ", Euler slope " + fmt(euler) + ", counter " + (counter ? "4 S N" : "mismatch")};
}

// ---- 11 ----------------------------------------------------------------------------

Outcome minmax()
{
    int ok = 0;
    double slowest = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto cfg = config("minmax.json");
        cfg.seed = seed;
        const auto t0 = Clock::now();
        const auto r = app::run_experiment(cfg);
        slowest = std::max(slowest, seconds_since(t0));
        ok += check_passed(r, "FRM error < ERM error for budget fractions >= 0.2");
    }
    return {ok >= 4 && slowest < 300, std::to_string(ok) + "/5 seeds, slowest run " + fmt(slowest) + " s"};
}

// ---- 12 ----------------------------------------------------------------------------

Outcome privacy_ordering()
{
    int ok = 0;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto cfg = config("privacy.json");
        cfg.seed = seed;
        const auto r = app::run_experiment(cfg);
        const bool pass = r.passed();
        ok += pass;
        if (!pass)
            for (const auto& c : r.checks)
                if (!c.passed) detail += " [seed " + std::to_string(seed) + ": " + c.name + ": " + c.detail + "]";
    }
    return {ok >= 4, std::to_string(ok) + "/5 seeds pass clean accuracy, matched budgets and ordering" + detail};
}

// ---- 13 ----------------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& dir)
{
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().filename() == "report.json") continue;
        std::ifstream in(e.path(), std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        files[fs::relative(e.path(), dir).string()] = ss.str();
    }
    return files;
}

std::vector<app::ExperimentConfig> reduced_configs()
{
    std::vector<app::ExperimentConfig> out;

    auto quad = config("lfd_quadratic.json");
    quad.dataset.n = 128;
    quad.lfd.train.epochs = 40;
    out.push_back(quad);

    auto two = config("lfd_two_sample.json");
    two.dataset.n = 200;
    two.classifier.epochs = 50;
    two.lfd.train.epochs = 60;
    two.lfd.calibration_tol = 0.02;
    out.push_back(two);

    auto clf = config("lfd_classifier.json");
    clf.dataset.n = 200;
    clf.classifier.epochs = 40;
    clf.lfd.train.epochs = 40;
    out.push_back(clf);

    auto mm = config("minmax.json");
    mm.dataset.n = 200;
    mm.minmax.frm.iterations = 30;
    mm.minmax.test_n = 200;
    out.push_back(mm);

    auto pv = config("privacy.json");
    pv.dataset.n = 400;
    pv.privacy.test_n = 400;
    pv.privacy.dpm.epochs = 20;
    pv.privacy.budget_fraction.reset();
    out.push_back(pv);

    out.push_back(config("wdro_lp.json"));
    out.push_back(app::default_config(app::ExperimentKind::Verify));
    return out;
}

Outcome determinism()
{
    const auto root = fs::temp_directory_path() / "flowdro_acceptance_determinism";
    fs::remove_all(root);
    int ok = 0, total = 0;
    std::string detail;
    for (const auto& cfg : reduced_configs()) {
        const std::string tag = std::to_string(total) + "_" + app::kind_name(cfg.kind);
        ++total;
        app::run_experiment(cfg, root / (tag + "_a"));
        app::run_experiment(cfg, root / (tag + "_b"));
        const auto a = snapshot(root / (tag + "_a")), b = snapshot(root / (tag + "_b"));
        const bool same = a == b && a.count("metrics.csv") == 1;
        ok += same;
        detail += (detail.empty() ? "" : ", ") + tag + " " + std::to_string(a.size()) + " files " +
                  (same ? "identical" : "DIFFER");
    }
    fs::remove_all(root);
    return {ok == total, detail};
}

}  // namespace

int main(int argc, char** argv)
{
    // optional argument: run only the criterion with this number
    const int only = argc > 1 ? std::atoi(argv[1]) : 0;
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"1 quadratic-Gaussian proximal oracle", quadratic_oracle},
        {"2 two-sample LFDs at calibrated radius", two_sample_lfds},
        {"3 exact OT vs brute force", exact_ot},
        {"4 autodiff vs finite differences", autodiff},
        {"5 Moreau envelope and prox", moreau_prox},
        {"6 weak duality", weak_duality},
        {"7 WDRO LP", wdro_lp},
        {"8 flow LFD risk >= PGD risk at matched budget", flow_vs_pgd},
        {"9 first-order conditions", first_order_conditions},
        {"10 integrator orders and evaluation counter", integrators},
        {"11 min-max robustness", minmax},
        {"12 privacy mechanism ordering", privacy_ordering},
        {"13 determinism", determinism},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        if (only != 0 && std::atoi(name.c_str()) != only) continue;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.passed;
        std::cout << (o.passed ? "PASS " : "FAIL ") << name << " (" << o.detail << "; " << fmt(seconds_since(t0))
                  << " s)" << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
