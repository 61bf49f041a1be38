#include "flowdro/verify.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "flowdro/dro.hpp"
#include "flowdro/error.hpp"
#include "flowdro/format.hpp"
#include "flowdro/ot.hpp"
#include "flowdro/privacy.hpp"
#include "flowdro/prox.hpp"
#include "flowdro/rng.hpp"
#include "flowdro/wdro_lp.hpp"

namespace flowdro::verify {

using ad::DenseArray;

double brute_force_w2(const EmpiricalMeasure& p, const EmpiricalMeasure& q)
{
    FLOWDRO_REQUIRE(p.size() == q.size() && p.dim() == q.dim(), "brute_force_w2: shape mismatch");
    FLOWDRO_REQUIRE(p.size() <= 9, "brute_force_w2: n too large to enumerate");
    const std::size_t n = p.size();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double c = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < p.dim(); ++k) {
                const double d = p.point(i)[k] - q.point(perm[i])[k];
                c += d * d;
            }
        best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return std::sqrt(best / static_cast<double>(n));
}

double mlp_gradient_error(std::uint64_t seed)
{
    Rng rng(seed);
    ad::MlpSpec spec;
    const std::size_t depth = 1 + rng.uniform_index(3);
    spec.widths.push_back(1 + rng.uniform_index(3));
    for (std::size_t l = 0; l < depth; ++l) spec.widths.push_back(2 + rng.uniform_index(5));
    spec.widths.push_back(1 + rng.uniform_index(3));
    spec.activation = rng.uniform() < 0.5 ? ad::Activation::Softplus : ad::Activation::Tanh;
    spec.beta = 1.0 + 4.0 * rng.uniform();
    spec.time_input = rng.uniform() < 0.5;
    ad::Mlp net = ad::Mlp::initialize(spec, rng);
    const double time = rng.uniform();
    const std::size_t n = 1 + rng.uniform_index(4);
    DenseArray x({n, spec.input_dim()});
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = rng.normal();
    DenseArray r({n, spec.output_dim()});
    for (std::size_t k = 0; k < r.size(); ++k) r[k] = rng.normal();

    auto loss = [&](const ad::Mlp& m, const DenseArray& xx) {
        const auto y = m.forward(xx, time);
        double s = 0;
        for (std::size_t k = 0; k < y.size(); ++k) s += y[k] * r[k];
        return s;
    };

    ad::Tape tape;
    auto leaves = net.bind_trainable(tape);
    auto xv = tape.input(x);
    auto out = ad::sum(ad::mul(net.apply(leaves, xv, time), tape.constant(r)));
    net.params().zero_grad();
    tape.backward(out);

    std::vector<double> analytic = net.params().flat_grads();
    const auto& gx = tape.grad(xv);
    analytic.insert(analytic.end(), gx.values().begin(), gx.values().end());

    const double h = 1e-4;
    std::vector<double> numeric;
    auto flat = net.params().flat_values();
    for (std::size_t k = 0; k < flat.size(); ++k) {
        auto plus = flat, minus = flat;
        plus[k] += h;
        minus[k] -= h;
        ad::Mlp a = net, b = net;
        a.params().set_flat_values(plus);
        b.params().set_flat_values(minus);
        numeric.push_back((loss(a, x) - loss(b, x)) / (2 * h));
    }
    for (std::size_t k = 0; k < x.size(); ++k) {
        DenseArray xp = x, xm = x;
        xp[k] += h;
        xm[k] -= h;
        numeric.push_back((loss(net, xp) - loss(net, xm)) / (2 * h));
    }
    double diff = 0, na = 0, nn = 0;
    for (std::size_t k = 0; k < numeric.size(); ++k) {
        diff += (analytic[k] - numeric[k]) * (analytic[k] - numeric[k]);
        na += analytic[k] * analytic[k];
        nn += numeric[k] * numeric[k];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
}

flow::FlowBlock linear_decay_block(flow::Method method, int substeps)
{
    ad::MlpSpec spec;
    spec.widths = {1, 2, 1};
    spec.activation = ad::Activation::Relu;
    ad::ParamStore store;
    store.add("l0.W", DenseArray({1, 2}, std::vector<double>{1.0, -1.0}));
    store.add("l0.b", DenseArray({2}, 0.0));
    store.add("l1.W", DenseArray({2, 1}, std::vector<double>{-1.0, 1.0}));
    store.add("l1.b", DenseArray({1}, 0.0));
    flow::FlowBlock b;
    b.field = flow::VelocityField(ad::Mlp(spec, std::move(store)));
    b.integrator.method = method;
    b.integrator.substeps = substeps;
    return b;
}

double integrator_order(flow::Method method, const std::vector<int>& substeps)
{
    FLOWDRO_REQUIRE(substeps.size() >= 2, "integrator_order: need at least two step counts");
    std::vector<double> lx, ly;
    const double exact = std::exp(-1.0);
    for (int s : substeps) {
        const auto tr = flow::integrate(linear_decay_block(method, s), std::vector<double>{1.0});
        lx.push_back(std::log(1.0 / s));
        ly.push_back(std::log(std::abs(tr.endpoint[0] - exact)));
    }
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / static_cast<double>(lx.size());
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(ly.size());
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    return sxy / sxx;
}

double wdro_two_point_grid(double eps1, double eps2, int resolution)
{
    double best = 0;
    for (int i = 0; i <= resolution; ++i) {
        const double a = static_cast<double>(i) / resolution;
        if (a > eps1 + 1e-12) break;
        for (int j = 0; j <= resolution; ++j) {
            const double b = static_cast<double>(j) / resolution;
            if (b > eps2 + 1e-12) break;
            best = std::max(best, std::min(1 - a, b) + std::min(a, 1 - b));
        }
    }
    return best;
}

namespace {

// Min cost between two pmfs on the same sorted 1D support.
double monotone_cost(const std::vector<double>& loc, const std::vector<double>& a, const std::vector<double>& b,
                     bool squared)
{
    double cost = 0;
    std::size_t i = 0, j = 0;
    double ra = a.empty() ? 0 : a[0], rb = b.empty() ? 0 : b[0];
    while (i < a.size() && j < b.size()) {
        const double m = std::min(ra, rb);
        const double dist = std::abs(loc[i] - loc[j]);
        cost += m * (squared ? dist * dist : dist);
        ra -= m;
        rb -= m;
        if (ra <= 1e-15 && ++i < a.size()) ra = a[i];
        if (rb <= 1e-15 && ++j < b.size()) rb = b[j];
    }
    return cost;
}

void compositions(int parts, int total, std::vector<int>& cur, const std::function<void(const std::vector<int>&)>& f)
{
    if (static_cast<int>(cur.size()) == parts - 1) {
        cur.push_back(total);
        f(cur);
        cur.pop_back();
        return;
    }
    for (int k = 0; k <= total; ++k) {
        cur.push_back(k);
        compositions(parts, total - k, cur, f);
        cur.pop_back();
    }
}

}  // namespace

double wdro_enumeration_1d(const wdro::WdroLpInstance& inst, int resolution)
{
    inst.validate();
    FLOWDRO_REQUIRE(inst.points.cols() == 1, "wdro_enumeration_1d: instance must be one-dimensional");
    FLOWDRO_REQUIRE(resolution >= 1, "wdro_enumeration_1d: resolution must be positive");
    std::vector<double> loc;
    for (std::size_t i = 0; i < inst.n(); ++i) loc.push_back(inst.points(i, 0));
    std::sort(loc.begin(), loc.end());
    loc.erase(std::unique(loc.begin(), loc.end()), loc.end());
    const std::size_t L = loc.size();
    auto empirical = [&](std::size_t begin, std::size_t count) {
        std::vector<double> w(L, 0.0);
        for (std::size_t i = begin; i < begin + count; ++i) {
            const auto it = std::lower_bound(loc.begin(), loc.end(), inst.points(i, 0));
            w[static_cast<std::size_t>(it - loc.begin())] += 1.0 / static_cast<double>(count);
        }
        return w;
    };
    const auto e1 = empirical(0, inst.n1);
    const auto e2 = empirical(inst.n1, inst.n2);

    std::vector<std::vector<double>> f1, f2;
    std::vector<int> cur;
    compositions(static_cast<int>(L), resolution, cur, [&](const std::vector<int>& k) {
        std::vector<double> p(L);
        for (std::size_t l = 0; l < L; ++l) p[l] = static_cast<double>(k[l]) / resolution;
        if (monotone_cost(loc, e1, p, inst.squared_cost) <= inst.eps1 + 1e-12) f1.push_back(p);
        if (monotone_cost(loc, e2, p, inst.squared_cost) <= inst.eps2 + 1e-12) f2.push_back(p);
    });
    double best = 0;
    for (const auto& p : f1)
        for (const auto& q : f2) {
            double s = 0;
            for (std::size_t l = 0; l < L; ++l) s += std::min(p[l], q[l]);
            best = std::max(best, s);
        }
    return best;
}

namespace {

template <class F>
CheckResult check(const std::string& name, F&& body)
{
    CheckResult r;
    r.name = name;
    try {
        std::ostringstream detail;
        r.passed = body(detail);
        r.detail = detail.str();
    } catch (const std::exception& e) {
        r.passed = false;
        r.detail = std::string("exception: ") + e.what();
    }
    return r;
}

EmpiricalMeasure random_cloud(Rng& rng, std::size_t n, std::size_t d)
{
    std::vector<double> flat(n * d);
    for (double& v : flat) v = rng.normal();
    return EmpiricalMeasure::from_rows(d, std::move(flat));
}

}  // namespace

std::vector<CheckResult> run_invariant_suite(std::uint64_t seed)
{
    std::vector<CheckResult> out;
    const Rng root(seed);

    out.push_back(check("autodiff.finite_differences", [&](std::ostream& d) {
        double worst = 0;
        for (std::uint64_t i = 0; i < 20; ++i) worst = std::max(worst, mlp_gradient_error(root.split(100 + i).next_u64()));
        d << "max relative error " << format_double(worst);
        return worst < 1e-5;
    }));

    out.push_back(check("measures_ot.assignment_vs_brute_force", [&](std::ostream& d) {
        Rng rng = root.split(200);
        double worst = 0;
        for (int i = 0; i < 30; ++i) {
            const std::size_t n = 1 + rng.uniform_index(6), dim = 1 + rng.uniform_index(3);
            const auto p = random_cloud(rng, n, dim), q = random_cloud(rng, n, dim);
            worst = std::max(worst, std::abs(w2_assignment(p, q).w2 - brute_force_w2(p, q)));
        }
        d << "max abs difference " << format_double(worst);
        return worst < 1e-12;
    }));

    out.push_back(check("flow.integrator_orders", [&](std::ostream& d) {
        const double rk4 = integrator_order(flow::Method::RK4, {2, 4, 8, 16});
        const double euler = integrator_order(flow::Method::Euler, {8, 16, 32, 64});
        flow::EvalCounter counter;
        auto block = linear_decay_block(flow::Method::RK4, 5);
        flow::integrate_batch(block, DenseArray({7, 1}, 0.5), nullptr, &counter);
        d << "rk4 slope " << format_double(rk4) << ", euler slope " << format_double(euler) << ", evaluations "
          << counter.evaluations;
        return rk4 >= 3.5 && euler >= 0.9 && counter.evaluations == 4u * 5u * 7u;
    }));

    out.push_back(check("prox_dual.quadratic_closed_form", [&](std::ostream& d) {
        const auto v = risk::QuadraticPotential::origin(2);
        Rng rng = root.split(300);
        double worst = 0;
        for (int i = 0; i < 20; ++i) {
            const std::vector<double> x{rng.normal(), rng.normal()};
            const double g = 0.05 + 2 * rng.uniform();
            const auto r = prox::prox_point(v, x, g);
            const double u = (x[0] * x[0] + x[1] * x[1]) / (2 * (1 + g));
            worst = std::max({worst, std::abs(r.envelope - u), std::abs(r.minimizer[0] - x[0] / (1 + g)),
                              std::abs(r.minimizer[1] - x[1] / (1 + g))});
        }
        d << "max deviation " << format_double(worst);
        return worst < 1e-8;
    }));

    out.push_back(check("prox_dual.envelope_bounds", [&](std::ostream& d) {
        Rng rng = root.split(400);
        auto clf = risk::MLPClassifier::initialize(2, {8}, 2, rng, ad::Activation::Softplus, 5.0);
        risk::ClassifierRisk model(clf);
        risk::NegatedLossPotential v(model);
        const std::vector<double> grid{0.02, 0.05, 0.1, 0.2};
        bool ok = true;
        double max_res = 0;
        for (int i = 0; i < 5; ++i) {
            const std::vector<double> x{rng.normal(), rng.normal()};
            const int label = static_cast<int>(i % 2);
            double prev = std::numeric_limits<double>::infinity();
            for (double g : grid) {
                prox::ProxOptions opts;
                opts.smoothness = 4.0;
                const auto r = prox::prox_point(v, x, g, opts, label);
                max_res = std::max(max_res, r.residual);
                ok = ok && r.envelope <= v.value(x, label) + 1e-12 && r.envelope <= prev + 1e-12;
                prev = r.envelope;
            }
        }
        d << "max stationarity residual " << format_double(max_res);
        return ok && max_res < 1e-8;
    }));

    out.push_back(check("prox_dual.weak_duality", [&](std::ostream& d) {
        Rng rng = root.split(500);
        const auto v = risk::QuadraticPotential::origin(2);
        const auto p = random_cloud(rng, 64, 2);
        const double eps = 0.3;
        double worst = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < 10; ++i) {
            // Random feasible Q: rescaled perturbation with cost exactly eps^2.
            DenseArray delta({p.size(), 2});
            for (std::size_t k = 0; k < delta.size(); ++k) delta[k] = rng.normal();
            double norm = 0;
            for (std::size_t k = 0; k < delta.size(); ++k) norm += delta[k] * delta[k];
            const double s = eps * std::sqrt(static_cast<double>(p.size()) / norm);
            DenseArray q = p.points();
            for (std::size_t k = 0; k < q.size(); ++k) q[k] += s * delta[k];
            double eq = 0;
            for (double val : v.values(q)) eq += val / static_cast<double>(p.size());
            const double lambda = std::exp(rng.normal());
            const double g = prox::dual_value_discrete(v, p, lambda, eps).value;
            worst = std::max(worst, g - eq);
        }
        d << "max G(lambda) - E_Q[V] " << format_double(worst);
        return worst <= 1e-6;
    }));

    out.push_back(check("dro_train.quadratic_block_objective_monotone", [&](std::ostream& d) {
        Rng rng = root.split(600);
        const auto p = random_cloud(rng, 128, 2);
        const auto v = risk::QuadraticPotential::origin(2);
        dro::LFDTrainConfig cfg;
        cfg.epochs = 40;
        cfg.lr = 1e-3;
        cfg.optimizer = dro::Optimizer::Sgd;
        cfg.hidden = {8};
        cfg.integrator = {flow::Method::Euler, 1};
        cfg.gamma.gamma = 0.5;
        cfg.seed = seed;
        const auto res = dro::train_lfd(v, p, cfg);
        bool mono = true;
        for (std::size_t i = 1; i < res.report.epochs.size(); ++i)
            mono = mono && res.report.epochs[i].objective <= res.report.epochs[i - 1].objective + 1e-9;
        const bool monge = res.report.w2_estimate <= std::sqrt(res.report.chain_cost) + 1e-12;
        const bool evals = res.report.pass_evaluations == res.report.pass_evaluations_formula &&
                           res.report.pass_evaluations == 128u;
        d << "monotone " << mono << ", monge bound " << monge << ", evaluation count " << res.report.pass_evaluations;
        return mono && monge && evals;
    }));

    out.push_back(check("wdro_lp.two_point_instances", [&](std::ostream& d) {
        double worst = 0;
        bool count_ok = true;
        for (double eps : {0.0, 0.2, 0.5, 2.0}) {
            wdro::WdroLpInstance inst;
            inst.points = DenseArray({2, 1}, std::vector<double>{0.0, 1.0});
            inst.n1 = inst.n2 = 1;
            inst.eps1 = inst.eps2 = eps;
            count_ok = count_ok && wdro::build_wdro_lp(inst).num_vars == 14;
            worst = std::max(worst, std::abs(wdro::solve_wdro(inst).objective - wdro_two_point_grid(eps, eps, 100)));
        }
        d << "max deviation " << format_double(worst);
        return count_ok && worst < 1e-9;
    }));

    out.push_back(check("privacy.apm_calibration", [&](std::ostream& d) {
        const double sg = privacy::calibrate_apm(privacy::MechanismKind::APMGaussian, 1.0, 1);
        const double sl = privacy::calibrate_apm(privacy::MechanismKind::APMLaplace, 1.0, 1);
        const auto m = privacy::Mechanism::gaussian(0.7, 2);
        Rng rng = root.split(700);
        const auto q = random_cloud(rng, 20000, 2);
        const auto out = privacy::apply_mechanism(m, q, seed);
        const double measured = mean_displacement(q, out.points());
        d << "sigma(d=1) " << format_double(sg) << ", b(d=1) " << format_double(sl) << ", measured d=2 budget "
          << format_double(measured);
        return std::abs(sg - std::sqrt(std::numbers::pi / 2)) < 1e-12 && sl == 1.0 &&
               std::abs(measured - 0.7) < 0.02 * 0.7;
    }));

    out.push_back(check("cli.seeded_determinism", [&](std::ostream& d) {
        Rng rng = root.split(800);
        const auto p = random_cloud(rng, 32, 2);
        const auto v = risk::QuadraticPotential::origin(2);
        dro::LFDTrainConfig cfg;
        cfg.epochs = 5;
        cfg.hidden = {4};
        cfg.seed = seed + 1;
        const auto a = dro::train_lfd(v, p, cfg);
        const auto b = dro::train_lfd(v, p, cfg);
        const bool same = a.pushforward.points() == b.pushforward.points();
        d << "identical pushforwards " << same;
        return same;
    }));
    return out;
}

}  // namespace flowdro::verify
