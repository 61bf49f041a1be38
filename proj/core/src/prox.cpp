#include "flowdro/prox.hpp"

#include <algorithm>
#include <cmath>

#include "flowdro/error.hpp"
#include "flowdro/format.hpp"
#include "flowdro/log.hpp"
#include "flowdro/ot.hpp"
#include "flowdro/rng.hpp"

namespace flowdro::prox {
namespace {

double norm2(std::span<const double> a)
{
    double s = 0;
    for (double v : a) s += v * v;
    return std::sqrt(s);
}

double squared_distance(std::span<const double> a, std::span<const double> b)
{
    double s = 0;
    for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return s;
}

double stationarity(std::span<const double> grad, std::span<const double> z, std::span<const double> x, double gamma)
{
    double s = 0;
    for (std::size_t j = 0; j < z.size(); ++j) {
        const double r = gamma * grad[j] + z[j] - x[j];
        s += r * r;
    }
    return std::sqrt(s);
}

ProxResult finish(const risk::Potential& v, std::span<const double> x, double gamma, std::vector<double> z, int label,
                  int iterations, bool analytic)
{
    ProxResult r;
    r.envelope = v.value(z, label) + squared_distance(z, x) / (2.0 * gamma);
    r.residual = stationarity(v.gradient(z, label), z, x, gamma);
    r.minimizer = std::move(z);
    r.iterations = iterations;
    r.analytic = analytic;
    return r;
}

}  // namespace

ProxResult prox_point(const risk::Potential& v, std::span<const double> x, double gamma, const ProxOptions& opts,
                      int label)
{
    FLOWDRO_REQUIRE(gamma > 0 && std::isfinite(gamma), "prox_point: gamma must be positive");
    FLOWDRO_REQUIRE(opts.tol > 0 && opts.max_iter > 0, "prox_point: tol and max_iter must be positive");
    const std::size_t d = x.size();

    if (const auto* q = dynamic_cast<const risk::QuadraticPotential*>(&v)) {
        FLOWDRO_REQUIRE(q->center().size() == d, "prox_point: dimension mismatch");
        const double a = q->scale();
        FLOWDRO_REQUIRE(1.0 + gamma * a > 0, "prox_point: gamma * scale <= -1 leaves the problem unbounded");
        std::vector<double> z(d);
        for (std::size_t j = 0; j < d; ++j) z[j] = (x[j] + gamma * a * q->center()[j]) / (1.0 + gamma * a);
        return finish(v, x, gamma, std::move(z), label, 0, true);
    }
    if (const auto* l = dynamic_cast<const risk::LinearPotential*>(&v)) {
        FLOWDRO_REQUIRE(l->slope().size() == d, "prox_point: dimension mismatch");
        std::vector<double> z(d);
        for (std::size_t j = 0; j < d; ++j) z[j] = x[j] - gamma * l->slope()[j];
        return finish(v, x, gamma, std::move(z), label, 0, true);
    }

    std::optional<double> lip = opts.smoothness ? opts.smoothness : v.smoothness();
    if (!lip) {
        // Local probe around x: a box scaled to the expected prox displacement.
        const auto g0 = v.gradient(x, label);
        const double radius = std::max(1.0, gamma * norm2(g0));
        std::vector<int> labels;
        if (label >= 0) labels.push_back(label);
        EmpiricalMeasure ref(ad::DenseArray({1, d}, std::vector<double>(x.begin(), x.end())), {}, labels);
        lip = risk::estimate_smoothness(v, ref, 256, radius, 0x5eed);
    }
    if (gamma * *lip >= 1.0)
        log::warn("prox_point: gamma * L = " + format_double(gamma * *lip) +
                  " >= 1; the proximal problem may be nonconvex");

    auto objective = [&](std::span<const double> z) {
        return v.value(z, label) + squared_distance(z, x) / (2.0 * gamma);
    };
    double step = 0.9 * gamma / (1.0 + gamma * *lip);
    std::vector<double> z(x.begin(), x.end());
    std::vector<double> trial(d);
    double fz = objective(z);
    for (int it = 0; it < opts.max_iter; ++it) {
        const auto g = v.gradient(z, label);
        if (stationarity(g, z, x, gamma) <= opts.tol) return finish(v, x, gamma, std::move(z), label, it, false);
        // Gradient of the surrogate: grad V(z) + (z - x) / gamma.
        for (int halvings = 0;; ++halvings) {
            for (std::size_t j = 0; j < d; ++j) trial[j] = z[j] - step * (g[j] + (z[j] - x[j]) / gamma);
            const double ft = objective(trial);
            // rounding slack
            if (ft <= fz + 1e-13 * std::max(1.0, std::abs(fz)) || halvings >= 30) {
                fz = ft;
                break;
            }
            step *= 0.5;
        }
        z.swap(trial);
    }
    const auto g = v.gradient(z, label);
    const double res = stationarity(g, z, x, gamma);
    if (res <= opts.tol) return finish(v, x, gamma, std::move(z), label, opts.max_iter, false);
    throw NumericalError("prox_point: no convergence in " + std::to_string(opts.max_iter) +
                         " iterations (residual " + format_double(res) + ")");
}

double moreau_envelope(const risk::Potential& v, std::span<const double> x, double gamma, const ProxOptions& opts,
                       int label)
{
    return prox_point(v, x, gamma, opts, label).envelope;
}

DualEval dual_value_discrete(const risk::Potential& v, const EmpiricalMeasure& p, double lambda, double epsilon,
                             const ProxOptions& opts)
{
    FLOWDRO_REQUIRE(lambda > 0 && std::isfinite(lambda), "dual_value_discrete: lambda must be positive");
    FLOWDRO_REQUIRE(epsilon >= 0, "dual_value_discrete: epsilon must be nonnegative");
    if (v.needs_labels() && !p.has_labels()) throw ValidationError("dual_value_discrete: potential requires labels");
    const double gamma = gamma_from_lambda(lambda);
    DualEval out;
    out.lambda = lambda;
    out.epsilon = epsilon;
    out.envelopes.resize(p.size());
    double mean = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const int label = p.has_labels() ? p.label(i) : -1;
        out.envelopes[i] = prox_point(v, p.point(i), gamma, opts, label).envelope;
        mean += p.weight(i) * out.envelopes[i];
    }
    out.value = mean - lambda * epsilon * epsilon;
    return out;
}

CalibrationResult calibrate_gamma(const RadiusFn& train_fn, double target, double gamma_lo, double gamma_hi,
                                  double tol, int max_iter)
{
    FLOWDRO_REQUIRE(target >= 0, "calibrate_gamma: target radius must be nonnegative");
    FLOWDRO_REQUIRE(gamma_lo > 0 && gamma_hi > gamma_lo, "calibrate_gamma: need 0 < gamma_lo < gamma_hi");
    FLOWDRO_REQUIRE(tol > 0, "calibrate_gamma: tol must be positive");
    CalibrationResult res;
    res.target = target;
    double lo = gamma_lo, hi = gamma_hi;
    const double r_lo = train_fn(lo);
    const double r_hi = train_fn(hi);
    res.evaluations = 2;
    if (r_lo > r_hi) {
        res.monotone = false;
        log::warn("calibrate_gamma: radius decreases across the bracket; monotonicity assumption violated");
    }
    auto accept = [&](double g, double r) {
        res.gamma = g;
        res.achieved = r;
        res.lower = lo;
        res.upper = hi;
        res.converged = true;
        return res;
    };
    if (std::abs(r_lo - target) <= tol) return accept(lo, r_lo);
    if (std::abs(r_hi - target) <= tol) return accept(hi, r_hi);
    if (!(r_lo < target && target < r_hi))
        throw ValidationError("calibrate_gamma: bracket [" + format_double(gamma_lo) + ", " + format_double(gamma_hi) +
                              "] gives radii [" + format_double(r_lo) + ", " + format_double(r_hi) +
                              "] which do not straddle the target " + format_double(target));
    double best_g = lo, best_r = r_lo;
    double prev_g = lo, prev_r = r_lo;
    for (int it = 0; it < max_iter; ++it) {
        const double mid = std::sqrt(lo * hi);
        const double r = train_fn(mid);
        ++res.evaluations;
        if ((mid > prev_g && r + 1e-12 < prev_r) || (mid < prev_g && r > prev_r + 1e-12)) {
            if (res.monotone) log::warn("calibrate_gamma: non-monotone radius observed during bisection");
            res.monotone = false;
        }
        prev_g = mid;
        prev_r = r;
        if (std::abs(r - target) < std::abs(best_r - target)) {
            best_g = mid;
            best_r = r;
        }
        if (std::abs(r - target) <= tol) return accept(mid, r);
        if (r < target)
            lo = mid;
        else
            hi = mid;
    }
    res.gamma = best_g;
    res.achieved = best_r;
    res.lower = lo;
    res.upper = hi;
    res.converged = false;
    log::warn("calibrate_gamma: bracket exhausted without reaching tolerance");
    return res;
}

FocReport foc_report(const risk::Potential& v, const EmpiricalMeasure& p, const EmpiricalMeasure& q, double gamma)
{
    FLOWDRO_REQUIRE(gamma > 0, "foc_residual: gamma must be positive");
    FLOWDRO_REQUIRE(p.dim() == q.dim(), "foc_residual: dimension mismatch");
    FLOWDRO_REQUIRE(p.is_uniform() && q.is_uniform(), "foc_residual: measures must be uniformly weighted");
    EmpiricalMeasure pp = p, qq = q;
    if (p.size() != q.size()) {
        log::warn("foc_residual: sizes differ; resampling the larger measure");
        Rng rng(0);
        if (p.size() > q.size())
            pp = subsample(p, q.size(), rng);
        else
            qq = subsample(q, p.size(), rng);
    }
    // Source Q, target P: T(z_j) = x_{matching[j]}.
    const auto plan = w2_assignment(qq, pp).plan;
    const auto grads = v.gradients(qq.points(), qq.labels());
    const std::size_t d = qq.dim();
    double res = 0, gnorm = 0;
    for (std::size_t j = 0; j < qq.size(); ++j) {
        auto z = qq.point(j);
        auto tz = pp.point(plan.matching[j]);
        for (std::size_t k = 0; k < d; ++k) {
            const double g = grads(j, k);
            const double r = g + (z[k] - tz[k]) / gamma;
            res += r * r;
            gnorm += g * g;
        }
    }
    const double n = static_cast<double>(qq.size());
    return {std::sqrt(res / n), std::sqrt(gnorm / n)};
}

double foc_residual(const risk::Potential& v, const EmpiricalMeasure& p, const EmpiricalMeasure& q, double gamma)
{
    return foc_report(v, p, q, gamma).residual;
}

double backward_euler_residual(const risk::Potential& v, const ad::DenseArray& x, const ad::DenseArray& x_next,
                               double gamma, std::span<const int> labels)
{
    FLOWDRO_REQUIRE(x.shape() == x_next.shape() && x.rank() == 2, "backward_euler_residual: pair shapes differ");
    FLOWDRO_REQUIRE(gamma >= 0, "backward_euler_residual: gamma must be nonnegative");
    const auto g = v.gradients(x_next, labels);
    double worst = 0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double s = 0;
        for (std::size_t k = 0; k < x.cols(); ++k) {
            const double r = x_next(i, k) - x(i, k) + gamma * g(i, k);
            s += r * r;
        }
        worst = std::max(worst, std::sqrt(s));
    }
    return worst;
}

}  // namespace flowdro::prox
