#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "flowdro/measure.hpp"
#include "flowdro/risk.hpp"

namespace flowdro::prox {

struct ProxOptions {
    double tol = 1e-8;
    int max_iter = 10000;
    /// Overrides the potential's own smoothness bound.
    std::optional<double> smoothness;
};

/// Minimizer of V(z) + ||z - x||^2 / (2 gamma) and the envelope value there.
struct ProxResult {
    std::vector<double> minimizer;
    double envelope = 0.0;
    /// ||gamma grad V(z*) + z* - x||
    double residual = 0.0;
    int iterations = 0;
    bool analytic = false;
};

/// Closed form for quadratic and linear potentials; otherwise gradient
/// descent with step 0.9 gamma / (1 + gamma L) and backtracking. Throws
/// NumericalError when the residual does not reach `tol` in `max_iter`.
ProxResult prox_point(const risk::Potential& v, std::span<const double> x, double gamma, const ProxOptions& opts = {},
                      int label = -1);

/// u(x, gamma) = min_z V(z) + ||z - x||^2 / (2 gamma).
double moreau_envelope(const risk::Potential& v, std::span<const double> x, double gamma, const ProxOptions& opts = {},
                       int label = -1);

struct DualEval {
    double lambda = 0.0;
    double epsilon = 0.0;
    /// mean(envelopes) - lambda * epsilon^2
    double value = 0.0;
    std::vector<double> envelopes;
};

/// G(lambda) = E_{x~P} inf_z [V(z) + lambda ||x - z||^2] - lambda eps^2, with
/// the inner problem solved by prox_point at gamma = 1 / (2 lambda).
DualEval dual_value_discrete(const risk::Potential& v, const EmpiricalMeasure& p, double lambda, double epsilon,
                             const ProxOptions& opts = {});

/// lambda <-> gamma correspondence.
inline double gamma_from_lambda(double lambda) { return 1.0 / (2.0 * lambda); }
inline double lambda_from_gamma(double gamma) { return 1.0 / (2.0 * gamma); }

struct CalibrationResult {
    double gamma = 0.0;
    double achieved = 0.0;
    double target = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    int evaluations = 0;
    bool converged = false;
    bool monotone = true;
};

/// Trains a map for a given gamma and returns its achieved W2 radius.
using RadiusFn = std::function<double(double gamma)>;

/// Bisection on gamma (geometric when the bracket is positive) until
/// |radius(gamma) - target| <= tol. Throws ValidationError when the bracket
/// does not straddle the target.
CalibrationResult calibrate_gamma(const RadiusFn& train_fn, double target, double gamma_lo, double gamma_hi,
                                  double tol, int max_iter = 40);

struct FocReport {
    /// sqrt(E_{z~Q} ||grad V(z) + (z - T(z)) / gamma||^2), T the assignment map Q -> P.
    double residual = 0.0;
    /// sqrt(E_{z~Q} ||grad V(z)||^2)
    double gradient_norm = 0.0;
};

FocReport foc_report(const risk::Potential& v, const EmpiricalMeasure& p, const EmpiricalMeasure& q, double gamma);
double foc_residual(const risk::Potential& v, const EmpiricalMeasure& p, const EmpiricalMeasure& q, double gamma);

/// max_k ||x_next_k - x_k + gamma grad V(x_next_k)|| over paired rows.
double backward_euler_residual(const risk::Potential& v, const ad::DenseArray& x, const ad::DenseArray& x_next,
                               double gamma, std::span<const int> labels = {});

}  // namespace flowdro::prox
