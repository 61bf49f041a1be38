#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "flowdro/dense_array.hpp"
#include "flowdro/measure.hpp"

namespace flowdro::lp {

enum class Sense { LessEqual, Equal, GreaterEqual };

/// maximize c.x subject to A x (sense) b, x >= 0. A is dense row-major.
struct LpStandardForm {
    std::size_t num_vars = 0;
    std::vector<double> objective;
    std::vector<double> matrix;
    std::vector<double> rhs;
    std::vector<Sense> senses;

    std::size_t num_rows() const { return rhs.size(); }
    double at(std::size_t row, std::size_t col) const { return matrix[row * num_vars + col]; }
    double& at(std::size_t row, std::size_t col) { return matrix[row * num_vars + col]; }
    /// Appends a zero row and returns its index.
    std::size_t add_row(Sense sense, double rhs_value);
    void validate() const;
};

struct LpSolution {
    std::vector<double> x;
    double objective = 0.0;
    int iterations = 0;
    /// Max violation of A x (sense) b and of x >= 0.
    double primal_residual = 0.0;
    /// Max positive reduced cost at the final basis.
    double dual_residual = 0.0;
};

/// Dense two-phase tableau simplex with Bland's rule. Throws NumericalError
/// when the problem is infeasible or unbounded.
LpSolution lp_solve(const LpStandardForm& lp, double tol = 1e-9);

}  // namespace flowdro::lp

namespace flowdro::wdro {

/// Largest sample count accepted by build_wdro_lp.
inline constexpr std::size_t kMaxLpSamples = 60;

struct WdroLpInstance {
    /// n x d; the first n1 rows are class 1, the remaining n2 class 2.
    ad::DenseArray points;
    std::size_t n1 = 0;
    std::size_t n2 = 0;
    double eps1 = 0.0;
    double eps2 = 0.0;
    /// Budget on squared distances instead of the Euclidean distance.
    bool squared_cost = false;

    std::size_t n() const { return n1 + n2; }
    /// Pairwise cost matrix (n x n): ||x_l - x_m||_2, or its square.
    ad::DenseArray costs() const;
    void validate() const;
};

/// Variable layout of the LP: p1, p2, gamma1 (row-major), gamma2, t.
struct WdroLayout {
    std::size_t n = 0;
    std::size_t p1(std::size_t l) const { return l; }
    std::size_t p2(std::size_t l) const { return n + l; }
    std::size_t g1(std::size_t l, std::size_t m) const { return 2 * n + l * n + m; }
    std::size_t g2(std::size_t l, std::size_t m) const { return 2 * n + n * n + l * n + m; }
    std::size_t t(std::size_t l) const { return 2 * n + 2 * n * n + l; }
    std::size_t count() const { return 3 * n + 2 * n * n; }
};

struct DiscreteLfdPair {
    std::vector<double> p1;
    std::vector<double> p2;
    ad::DenseArray gamma1;
    ad::DenseArray gamma2;
    /// sum_l min(p1_l, p2_l).
    double objective = 0.0;
    double lp_objective = 0.0;
    int iterations = 0;
};

lp::LpStandardForm build_wdro_lp(const WdroLpInstance& inst);

/// Build, solve and unpack; every marginal and budget invariant is checked
/// (1e-7) and a violation raises NumericalError.
DiscreteLfdPair solve_wdro(const WdroLpInstance& inst, double tol = 1e-9);

/// Max deviation from the marginal constraints and max budget excess.
std::pair<double, double> check_pair(const WdroLpInstance& inst, const DiscreteLfdPair& pair);

/// Gaussian-kernel smoothing of the two discrete LFDs; labels 0 and 1.
std::pair<EmpiricalMeasure, EmpiricalMeasure> smoothed_lfd_sampler(const DiscreteLfdPair& pair,
                                                                   const ad::DenseArray& support, double bandwidth,
                                                                   std::size_t count, std::uint64_t seed);

// JSON {points, n1, n2, eps1, eps2[, squared_cost]}.
WdroLpInstance parse_instance_json(const std::string& text);
WdroLpInstance read_instance(const std::string& path);
std::string instance_json(const WdroLpInstance& inst);
std::string pair_json(const DiscreteLfdPair& pair);

}  // namespace flowdro::wdro
