#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "flowdro/flow.hpp"
#include "flowdro/measure.hpp"
#include "flowdro/mlp.hpp"
#include "flowdro/wdro_lp.hpp"

namespace flowdro::verify {

// ---- oracles -----------------------------------------------------------------------

/// W2 by enumerating all n! matchings (uniform equal-size clouds, n <= 9).
double brute_force_w2(const EmpiricalMeasure& p, const EmpiricalMeasure& q);

/// Relative error ||g_tape - g_fd|| / max(||g_tape||, ||g_fd||, 1e-12) of a
/// random MLP's parameter and input gradients against central differences.
double mlp_gradient_error(std::uint64_t seed);

/// 1D block whose field is exactly f(x) = -x (relu(x) - relu(-x) construction).
flow::FlowBlock linear_decay_block(flow::Method method, int substeps);

/// Least-squares slope of log|x_S(1) - e^{-1}| against log(1/S), x(0) = 1.
double integrator_order(flow::Method method, const std::vector<int>& substeps);

/// Brute-force optimum of the n = 2 WDRO program with x = {0, 1}: grid over the
/// two transported masses.
double wdro_two_point_grid(double eps1, double eps2, int resolution);

/// Enumeration oracle for 1D WDRO instances: every pair of pmfs on the
/// distinct support locations with masses in multiples of 1 / resolution,
/// feasibility by the exact monotone transport cost. Lower bound on the LP
/// optimum; exact when an optimal pair lies on the grid.
double wdro_enumeration_1d(const wdro::WdroLpInstance& inst, int resolution);

// ---- suite -------------------------------------------------------------------------

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Fast invariant checks over every module (a few seconds on one core).
std::vector<CheckResult> run_invariant_suite(std::uint64_t seed = 0);

}  // namespace flowdro::verify
