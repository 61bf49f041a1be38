#include "flowdro/wdro_lp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "flowdro/error.hpp"
#include "flowdro/format.hpp"
#include "flowdro/ot.hpp"

namespace flowdro::lp {

std::size_t LpStandardForm::add_row(Sense sense, double rhs_value)
{
    matrix.resize(matrix.size() + num_vars, 0.0);
    rhs.push_back(rhs_value);
    senses.push_back(sense);
    return rhs.size() - 1;
}

void LpStandardForm::validate() const
{
    FLOWDRO_REQUIRE(objective.size() == num_vars, "LpStandardForm: objective length differs from num_vars");
    FLOWDRO_REQUIRE(matrix.size() == num_vars * rhs.size(), "LpStandardForm: matrix size inconsistent");
    FLOWDRO_REQUIRE(senses.size() == rhs.size(), "LpStandardForm: senses and rhs differ in length");
    for (double v : matrix) FLOWDRO_REQUIRE(std::isfinite(v), "LpStandardForm: non-finite coefficient");
    for (double v : rhs) FLOWDRO_REQUIRE(std::isfinite(v), "LpStandardForm: non-finite right-hand side");
}

namespace {

class Tableau {
public:
    Tableau(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_((rows + 1) * (cols + 1), 0.0) {}

    double& at(std::size_t r, std::size_t c) { return data_[r * (cols_ + 1) + c]; }
    double& rhs(std::size_t r) { return at(r, cols_); }
    double& cost(std::size_t c) { return at(rows_, c); }
    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    void pivot(std::size_t pr, std::size_t pc)
    {
        const double inv = 1.0 / at(pr, pc);
        for (std::size_t c = 0; c <= cols_; ++c) at(pr, c) *= inv;
        at(pr, pc) = 1.0;
        for (std::size_t r = 0; r <= rows_; ++r) {
            if (r == pr) continue;
            const double f = at(r, pc);
            if (f == 0.0) continue;
            double* dst = &data_[r * (cols_ + 1)];
            const double* src = &data_[pr * (cols_ + 1)];
            for (std::size_t c = 0; c <= cols_; ++c) dst[c] -= f * src[c];
            dst[pc] = 0.0;
        }
    }

private:
    std::size_t rows_, cols_;
    std::vector<double> data_;
};

/// Bland's rule on the cost row (maximization; cost row holds reduced costs).
/// Returns iterations; throws on unboundedness.
int run_simplex(Tableau& t, std::vector<std::size_t>& basis, std::size_t allowed_cols, double tol, int max_iter,
                int iter_base)
{
    int it = 0;
    for (;; ++it) {
        if (iter_base + it > max_iter) throw NumericalError("lp_solve: iteration limit reached");
        std::size_t enter = allowed_cols;
        for (std::size_t c = 0; c < allowed_cols; ++c)
            if (t.cost(c) > tol) {
                enter = c;
                break;
            }
        if (enter == allowed_cols) return it;
        std::size_t leave = t.rows();
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < t.rows(); ++r) {
            const double a = t.at(r, enter);
            if (a <= tol) continue;
            const double ratio = t.rhs(r) / a;
            if (ratio < best - 1e-15 || (std::abs(ratio - best) <= 1e-15 && basis[r] < basis[leave])) {
                best = ratio;
                leave = r;
            }
        }
        if (leave == t.rows()) throw NumericalError("lp_solve: problem is unbounded");
        t.pivot(leave, enter);
        basis[leave] = enter;
    }
}

}  // namespace

LpSolution lp_solve(const LpStandardForm& lp, double tol)
{
    lp.validate();
    FLOWDRO_REQUIRE(tol > 0, "lp_solve: tol must be positive");
    const std::size_t m = lp.num_rows();
    const std::size_t n = lp.num_vars;

    // Normalize to nonnegative right-hand sides.
    std::vector<double> sign(m, 1.0);
    std::vector<Sense> sense = lp.senses;
    for (std::size_t i = 0; i < m; ++i)
        if (lp.rhs[i] < 0) {
            sign[i] = -1.0;
            if (sense[i] == Sense::LessEqual)
                sense[i] = Sense::GreaterEqual;
            else if (sense[i] == Sense::GreaterEqual)
                sense[i] = Sense::LessEqual;
        }
    std::size_t n_slack = 0, n_art = 0;
    for (auto s : sense) {
        if (s != Sense::Equal) ++n_slack;
        if (s != Sense::LessEqual) ++n_art;
    }
    const std::size_t art_begin = n + n_slack;
    const std::size_t total = art_begin + n_art;
    Tableau t(m, total);
    std::vector<std::size_t> basis(m);
    std::size_t slack = n, art = art_begin;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) t.at(i, j) = sign[i] * lp.at(i, j);
        t.rhs(i) = sign[i] * lp.rhs[i];
        if (sense[i] == Sense::LessEqual) {
            t.at(i, slack) = 1.0;
            basis[i] = slack++;
        } else {
            if (sense[i] == Sense::GreaterEqual) t.at(i, slack++) = -1.0;
            t.at(i, art) = 1.0;
            basis[i] = art++;
        }
    }
    const int max_iter = 200 * static_cast<int>(m + total) + 1000;

    // Phase 1: maximize -sum(artificials).
    int iterations = 0;
    if (n_art > 0) {
        for (std::size_t i = 0; i < m; ++i) {
            if (basis[i] < art_begin) continue;
            for (std::size_t c = 0; c <= total; ++c) t.at(m, c) += t.at(i, c);
        }
        for (std::size_t c = art_begin; c < total; ++c) t.cost(c) = 0.0;
        iterations += run_simplex(t, basis, art_begin, tol, max_iter, 0);
        double infeas = 0;
        for (std::size_t i = 0; i < m; ++i)
            if (basis[i] >= art_begin) infeas += t.rhs(i);
        double scale = 1.0;
        for (double b : lp.rhs) scale = std::max(scale, std::abs(b));
        if (infeas > tol * scale * static_cast<double>(m))
            throw NumericalError("lp_solve: problem is infeasible (phase-one residual " + format_double(infeas) + ")");
        // Drive zero-valued artificials out of the basis where possible.
        for (std::size_t i = 0; i < m; ++i) {
            if (basis[i] < art_begin) continue;
            for (std::size_t c = 0; c < art_begin; ++c)
                if (std::abs(t.at(i, c)) > tol) {
                    t.pivot(i, c);
                    basis[i] = c;
                    break;
                }
        }
    }

    // Phase 2 cost row: c_j - c_B B^-1 A_j.
    for (std::size_t c = 0; c <= total; ++c) t.cost(c) = c < n ? lp.objective[c] : 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t b = basis[i];
        const double cb = b < n ? lp.objective[b] : 0.0;
        if (cb == 0.0) continue;
        for (std::size_t c = 0; c <= total; ++c) t.at(m, c) -= cb * t.at(i, c);
    }
    iterations += run_simplex(t, basis, art_begin, tol, max_iter, iterations);

    LpSolution sol;
    sol.x.assign(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        if (basis[i] < n) sol.x[basis[i]] = std::max(0.0, t.rhs(i));
    sol.iterations = iterations;
    for (std::size_t j = 0; j < n; ++j) sol.objective += lp.objective[j] * sol.x[j];
    for (std::size_t c = 0; c < art_begin; ++c) sol.dual_residual = std::max(sol.dual_residual, t.cost(c));
    for (std::size_t i = 0; i < m; ++i) {
        double ax = 0;
        for (std::size_t j = 0; j < n; ++j) ax += lp.at(i, j) * sol.x[j];
        const double d = ax - lp.rhs[i];
        double viol = 0;
        switch (lp.senses[i]) {
            case Sense::LessEqual: viol = std::max(0.0, d); break;
            case Sense::GreaterEqual: viol = std::max(0.0, -d); break;
            case Sense::Equal: viol = std::abs(d); break;
        }
        sol.primal_residual = std::max(sol.primal_residual, viol);
    }
    return sol;
}

}  // namespace flowdro::lp

namespace flowdro::wdro {

using ad::DenseArray;

void WdroLpInstance::validate() const
{
    FLOWDRO_REQUIRE(points.rank() == 2, "WdroLpInstance: points must be an n x d array");
    FLOWDRO_REQUIRE(n1 >= 1 && n2 >= 1, "WdroLpInstance: both classes need at least one sample");
    FLOWDRO_REQUIRE(points.rows() == n(), "WdroLpInstance: n1 + n2 = " + std::to_string(n()) + " but " +
                                              std::to_string(points.rows()) + " points given");
    FLOWDRO_REQUIRE(eps1 >= 0 && eps2 >= 0 && std::isfinite(eps1) && std::isfinite(eps2),
                    "WdroLpInstance: radii must be finite and nonnegative");
    FLOWDRO_REQUIRE(n() <= kMaxLpSamples, "WdroLpInstance: n = " + std::to_string(n()) + " exceeds the dense LP cap of " +
                                              std::to_string(kMaxLpSamples));
    FLOWDRO_REQUIRE(points.all_finite(), "WdroLpInstance: non-finite point");
}

DenseArray WdroLpInstance::costs() const
{
    const std::size_t n = points.rows(), d = points.cols();
    DenseArray c({n, n}, 0.0);
    for (std::size_t l = 0; l < n; ++l)
        for (std::size_t m = l + 1; m < n; ++m) {
            double s = 0;
            for (std::size_t k = 0; k < d; ++k) s += (points(l, k) - points(m, k)) * (points(l, k) - points(m, k));
            const double v = squared_cost ? s : std::sqrt(s);
            c(l, m) = v;
            c(m, l) = v;
        }
    return c;
}

lp::LpStandardForm build_wdro_lp(const WdroLpInstance& inst)
{
    inst.validate();
    const std::size_t n = inst.n();
    const WdroLayout L{n};
    const DenseArray cost = inst.costs();
    lp::LpStandardForm f;
    f.num_vars = L.count();
    f.objective.assign(f.num_vars, 0.0);
    for (std::size_t l = 0; l < n; ++l) f.objective[L.t(l)] = 1.0;

    const double eps[2] = {inst.eps1, inst.eps2};
    for (int k = 0; k < 2; ++k) {
        const auto r = f.add_row(lp::Sense::LessEqual, eps[k]);
        for (std::size_t l = 0; l < n; ++l)
            for (std::size_t m = 0; m < n; ++m) f.at(r, k == 0 ? L.g1(l, m) : L.g2(l, m)) = cost(l, m);
    }
    for (std::size_t l = 0; l < n; ++l) {
        const bool class1 = l < inst.n1;
        const auto r1 = f.add_row(lp::Sense::Equal, class1 ? 1.0 / static_cast<double>(inst.n1) : 0.0);
        const auto r2 = f.add_row(lp::Sense::Equal, class1 ? 0.0 : 1.0 / static_cast<double>(inst.n2));
        for (std::size_t m = 0; m < n; ++m) {
            f.at(r1, L.g1(l, m)) = 1.0;
            f.at(r2, L.g2(l, m)) = 1.0;
        }
    }
    for (std::size_t m = 0; m < n; ++m) {
        const auto r1 = f.add_row(lp::Sense::Equal, 0.0);
        const auto r2 = f.add_row(lp::Sense::Equal, 0.0);
        for (std::size_t l = 0; l < n; ++l) {
            f.at(r1, L.g1(l, m)) = 1.0;
            f.at(r2, L.g2(l, m)) = 1.0;
        }
        f.at(r1, L.p1(m)) = -1.0;
        f.at(r2, L.p2(m)) = -1.0;
    }
    for (std::size_t l = 0; l < n; ++l) {
        const auto r1 = f.add_row(lp::Sense::LessEqual, 0.0);
        f.at(r1, L.t(l)) = 1.0;
        f.at(r1, L.p1(l)) = -1.0;
        const auto r2 = f.add_row(lp::Sense::LessEqual, 0.0);
        f.at(r2, L.t(l)) = 1.0;
        f.at(r2, L.p2(l)) = -1.0;
    }
    return f;
}

std::pair<double, double> check_pair(const WdroLpInstance& inst, const DiscreteLfdPair& pair)
{
    const std::size_t n = inst.n();
    const DenseArray cost = inst.costs();
    double marg = 0, budget = 0;
    const double eps[2] = {inst.eps1, inst.eps2};
    for (int k = 0; k < 2; ++k) {
        const DenseArray& g = k == 0 ? pair.gamma1 : pair.gamma2;
        const auto& p = k == 0 ? pair.p1 : pair.p2;
        double spent = 0;
        for (std::size_t l = 0; l < n; ++l) {
            const bool own = (k == 0) == (l < inst.n1);
            const double target = own ? 1.0 / static_cast<double>(k == 0 ? inst.n1 : inst.n2) : 0.0;
            double row = 0, col = 0;
            for (std::size_t m = 0; m < n; ++m) {
                row += g(l, m);
                col += g(m, l);
                spent += g(l, m) * cost(l, m);
                marg = std::max(marg, std::max(0.0, -g(l, m)));
            }
            marg = std::max({marg, std::abs(row - target), std::abs(col - p[l])});
        }
        budget = std::max(budget, spent - eps[k]);
    }
    return {marg, std::max(0.0, budget)};
}

DiscreteLfdPair solve_wdro(const WdroLpInstance& inst, double tol)
{
    const auto form = build_wdro_lp(inst);
    const auto sol = lp::lp_solve(form, tol);
    const std::size_t n = inst.n();
    const WdroLayout L{n};
    DiscreteLfdPair pair;
    pair.p1.resize(n);
    pair.p2.resize(n);
    pair.gamma1 = DenseArray({n, n}, 0.0);
    pair.gamma2 = DenseArray({n, n}, 0.0);
    for (std::size_t l = 0; l < n; ++l) {
        pair.p1[l] = sol.x[L.p1(l)];
        pair.p2[l] = sol.x[L.p2(l)];
        for (std::size_t m = 0; m < n; ++m) {
            pair.gamma1(l, m) = sol.x[L.g1(l, m)];
            pair.gamma2(l, m) = sol.x[L.g2(l, m)];
        }
        pair.objective += std::min(pair.p1[l], pair.p2[l]);
    }
    pair.lp_objective = sol.objective;
    pair.iterations = sol.iterations;
    const auto [marg, budget] = check_pair(inst, pair);
    if (marg > 1e-7 || budget > 1e-7)
        throw NumericalError("solve_wdro: solution violates constraints (marginal " + format_double(marg) +
                             ", budget " + format_double(budget) + ")");
    if (pair.objective < -1e-9 || pair.objective > 1 + 1e-9)
        throw NumericalError("solve_wdro: objective " + format_double(pair.objective) + " outside [0, 1]");
    return pair;
}

std::pair<EmpiricalMeasure, EmpiricalMeasure> smoothed_lfd_sampler(const DiscreteLfdPair& pair,
                                                                   const DenseArray& support, double bandwidth,
                                                                   std::size_t count, std::uint64_t seed)
{
    FLOWDRO_REQUIRE(support.rank() == 2 && support.rows() == pair.p1.size() && pair.p1.size() == pair.p2.size(),
                    "smoothed_lfd_sampler: support does not match the LFD pair");
    auto measure = [&](const std::vector<double>& p, int label) {
        std::vector<double> w(p.size());
        double total = 0;
        for (std::size_t i = 0; i < p.size(); ++i) total += (w[i] = std::max(0.0, p[i]));
        FLOWDRO_REQUIRE(total > 0, "smoothed_lfd_sampler: LFD has no mass");
        for (double& v : w) v /= total;
        return EmpiricalMeasure(support, std::move(w), std::vector<int>(p.size(), label));
    };
    return {kernel_smooth_sample(measure(pair.p1, 0), bandwidth, count, seed),
            kernel_smooth_sample(measure(pair.p2, 1), bandwidth, count, seed + 1)};
}

WdroLpInstance parse_instance_json(const std::string& text)
{
    try {
        const auto j = nlohmann::json::parse(text);
        WdroLpInstance inst;
        const auto rows = j.at("points").get<std::vector<std::vector<double>>>();
        FLOWDRO_REQUIRE(!rows.empty(), "wdro instance: points must be nonempty");
        std::vector<double> flat;
        for (const auto& r : rows) {
            FLOWDRO_REQUIRE(r.size() == rows[0].size() && !r.empty(), "wdro instance: ragged points");
            flat.insert(flat.end(), r.begin(), r.end());
        }
        inst.points = DenseArray({rows.size(), rows[0].size()}, std::move(flat));
        inst.n1 = j.at("n1").get<std::size_t>();
        inst.n2 = j.at("n2").get<std::size_t>();
        inst.eps1 = j.at("eps1").get<double>();
        inst.eps2 = j.at("eps2").get<double>();
        inst.squared_cost = j.value("squared_cost", false);
        inst.validate();
        return inst;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("wdro instance: ") + e.what());
    }
}

WdroLpInstance read_instance(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ValidationError("wdro instance: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_instance_json(ss.str());
}

std::string instance_json(const WdroLpInstance& inst)
{
    nlohmann::ordered_json j;
    auto pts = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < inst.points.rows(); ++i) {
        const auto r = inst.points.row(i);
        pts.push_back(std::vector<double>(r.begin(), r.end()));
    }
    j["points"] = pts;
    j["n1"] = inst.n1;
    j["n2"] = inst.n2;
    j["eps1"] = inst.eps1;
    j["eps2"] = inst.eps2;
    j["squared_cost"] = inst.squared_cost;
    return j.dump(2);
}

std::string pair_json(const DiscreteLfdPair& pair)
{
    auto rows = [](const DenseArray& a) {
        auto out = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < a.rows(); ++i) {
            const auto r = a.row(i);
            out.push_back(std::vector<double>(r.begin(), r.end()));
        }
        return out;
    };
    nlohmann::ordered_json j;
    j["p1"] = pair.p1;
    j["p2"] = pair.p2;
    j["gamma1"] = rows(pair.gamma1);
    j["gamma2"] = rows(pair.gamma2);
    j["objective"] = pair.objective;
    j["lp_objective"] = pair.lp_objective;
    j["iterations"] = pair.iterations;
    return j.dump(2);
}

}  // namespace flowdro::wdro
