#include "flowdro/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "flowdro/error.hpp"
#include "flowdro/log.hpp"
#include "flowdro/rng.hpp"

namespace flowdro {
namespace {

double squared_distance(std::span<const double> a, std::span<const double> b)
{
    double s = 0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double d = a[j] - b[j];
        s += d * d;
    }
    return s;
}

W2Result assignment_uniform(const EmpiricalMeasure& p, const EmpiricalMeasure& q)
{
    const std::size_t n = p.size();
    if (n > kMaxAssignmentSize)
        throw ValidationError("w2_assignment: n = " + std::to_string(n) + " exceeds the assignment cap of " +
                              std::to_string(kMaxAssignmentSize));
    std::vector<double> cost(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = squared_distance(p.point(i), q.point(j));
    W2Result r;
    r.plan.matching = solve_assignment(cost, n);
    const double mass = 1.0 / static_cast<double>(n);
    double total = 0;
    r.plan.coupling.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = r.plan.matching[i];
        r.plan.coupling.push_back({i, j, mass});
        total += cost[i * n + j];
    }
    r.plan.cost = total * mass;
    r.w2 = std::sqrt(r.plan.cost);
    return r;
}

}  // namespace

std::vector<std::size_t> solve_assignment(const std::vector<double>& cost, std::size_t n)
{
    FLOWDRO_REQUIRE(cost.size() == n * n, "solve_assignment: cost matrix size mismatch");
    if (n == 0) return {};
    // Shortest augmenting path with row/column potentials (1-indexed internally).
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    for (std::size_t i = 1; i <= n; ++i) {
        match[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = match[j0];
            const double* row = cost.data() + (i0 - 1) * n;
            const double ui0 = u[i0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = row[j - 1] - ui0 - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> assignment(n);
    for (std::size_t j = 1; j <= n; ++j) assignment[match[j] - 1] = j - 1;
    return assignment;
}

W2Result w2_assignment(const EmpiricalMeasure& p, const EmpiricalMeasure& q, std::uint64_t seed)
{
    FLOWDRO_REQUIRE(p.dim() == q.dim(), "w2_assignment: dimension mismatch");
    const bool uniform = p.is_uniform() && q.is_uniform();
    if (!uniform) {
        if (p.dim() == 1) return w2_1d_plan(p, q);
        throw ValidationError("w2_assignment: non-uniform weights are only supported in one dimension");
    }
    if (p.size() == q.size()) return assignment_uniform(p, q);
    log::warn("w2_assignment: sizes " + std::to_string(p.size()) + " and " + std::to_string(q.size()) +
              " differ; resampling the larger cloud");
    Rng rng(seed);
    if (p.size() > q.size()) return assignment_uniform(subsample(p, q.size(), rng), q);
    return assignment_uniform(p, subsample(q, p.size(), rng));
}

W2Result w2_1d_plan(const EmpiricalMeasure& p, const EmpiricalMeasure& q)
{
    FLOWDRO_REQUIRE(p.dim() == 1 && q.dim() == 1, "w2_1d: both measures must be one-dimensional");
    auto order = [](const EmpiricalMeasure& m) {
        std::vector<std::size_t> idx(m.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return m.point(a)[0] < m.point(b)[0]; });
        return idx;
    };
    const auto ip = order(p);
    const auto iq = order(q);
    W2Result r;
    const bool equal_uniform = p.size() == q.size() && p.is_uniform() && q.is_uniform();
    if (equal_uniform) {
        const double mass = 1.0 / static_cast<double>(p.size());
        r.plan.matching.assign(p.size(), 0);
        double total = 0;
        for (std::size_t k = 0; k < p.size(); ++k) {
            r.plan.matching[ip[k]] = iq[k];
            r.plan.coupling.push_back({ip[k], iq[k], mass});
            const double d = p.point(ip[k])[0] - q.point(iq[k])[0];
            total += d * d;
        }
        r.plan.cost = total * mass;
    } else {
        // North-west corner rule on sorted supports.
        std::size_t a = 0, b = 0;
        double ra = p.weight(ip[0]), rb = q.weight(iq[0]);
        while (a < p.size() && b < q.size()) {
            const double m = std::min(ra, rb);
            if (m > 0) {
                r.plan.coupling.push_back({ip[a], iq[b], m});
                const double d = p.point(ip[a])[0] - q.point(iq[b])[0];
                r.plan.cost += m * d * d;
            }
            ra -= m;
            rb -= m;
            if (ra <= 0 && a < p.size()) {
                if (++a < p.size()) ra = p.weight(ip[a]);
            }
            if (rb <= 0 && b < q.size()) {
                if (++b < q.size()) rb = q.weight(iq[b]);
            }
        }
    }
    r.w2 = std::sqrt(std::max(0.0, r.plan.cost));
    return r;
}

double w2_1d(const EmpiricalMeasure& p, const EmpiricalMeasure& q) { return w2_1d_plan(p, q).w2; }

double w2_gaussian_diag(const DiagGaussian& a, const DiagGaussian& b)
{
    FLOWDRO_REQUIRE(a.dim() == b.dim(), "w2_gaussian_diag: dimension mismatch");
    double s = 0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        const double dm = a.mean[i] - b.mean[i];
        const double ds = std::sqrt(a.variances[i]) - std::sqrt(b.variances[i]);
        s += dm * dm + ds * ds;
    }
    return std::sqrt(s);
}

double displacement_cost(const EmpiricalMeasure& p, const ad::DenseArray& mapped)
{
    FLOWDRO_REQUIRE(mapped.shape() == p.points().shape(), "displacement_cost: mapped points have the wrong shape");
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) s += p.weight(i) * squared_distance(p.point(i), mapped.row(i));
    return s;
}

double mean_displacement(const EmpiricalMeasure& p, const ad::DenseArray& mapped)
{
    FLOWDRO_REQUIRE(mapped.shape() == p.points().shape(), "mean_displacement: mapped points have the wrong shape");
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) s += p.weight(i) * std::sqrt(squared_distance(p.point(i), mapped.row(i)));
    return s;
}

double pushforward_cost(const PointMap& map, const EmpiricalMeasure& p)
{
    return displacement_cost(p, map(p.points()));
}

EmpiricalMeasure kernel_smooth_sample(const EmpiricalMeasure& q, double bandwidth, std::size_t count,
                                      std::uint64_t seed)
{
    FLOWDRO_REQUIRE(bandwidth > 0, "kernel_smooth_sample: bandwidth must be positive");
    FLOWDRO_REQUIRE(count > 0, "kernel_smooth_sample: count must be positive");
    Rng rng(seed);
    const std::size_t d = q.dim();
    // Cumulative weights for O(log n) component selection.
    std::vector<double> cdf(q.size());
    std::partial_sum(q.weights().begin(), q.weights().end(), cdf.begin());
    std::vector<double> flat(count * d);
    std::vector<int> labels;
    for (std::size_t s = 0; s < count; ++s) {
        const double t = rng.uniform() * cdf.back();
        auto it = std::upper_bound(cdf.begin(), cdf.end(), t);
        std::size_t i = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cdf.begin(), static_cast<std::ptrdiff_t>(q.size() - 1)));
        while (q.weight(i) == 0 && i > 0) --i;
        auto x = q.point(i);
        for (std::size_t j = 0; j < d; ++j) flat[s * d + j] = x[j] + bandwidth * rng.normal();
        if (q.has_labels()) labels.push_back(q.label(i));
    }
    return EmpiricalMeasure::from_rows(d, std::move(flat), std::move(labels));
}

double plan_marginal_error(const TransportPlan& plan, const EmpiricalMeasure& p, const EmpiricalMeasure& q)
{
    std::vector<double> rows(p.size(), 0.0), cols(q.size(), 0.0);
    for (const auto& e : plan.coupling) {
        FLOWDRO_REQUIRE(e.source < p.size() && e.target < q.size(), "plan_marginal_error: entry out of range");
        rows[e.source] += e.mass;
        cols[e.target] += e.mass;
    }
    double err = 0;
    for (std::size_t i = 0; i < p.size(); ++i) err = std::max(err, std::abs(rows[i] - p.weight(i)));
    for (std::size_t j = 0; j < q.size(); ++j) err = std::max(err, std::abs(cols[j] - q.weight(j)));
    return err;
}

double plan_cost(const TransportPlan& plan, const EmpiricalMeasure& p, const EmpiricalMeasure& q)
{
    double c = 0;
    for (const auto& e : plan.coupling) c += e.mass * squared_distance(p.point(e.source), q.point(e.target));
    return c;
}

}  // namespace flowdro
