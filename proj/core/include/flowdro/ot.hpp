#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "flowdro/measure.hpp"

namespace flowdro {

struct CouplingEntry {
    std::size_t source;
    std::size_t target;
    double mass;
};

/// Optimal coupling between a source and a target measure. Equal-size uniform
/// problems fill `matching` (source i -> target matching[i]) and also list
/// the coupling entries; the 1D weighted path fills `coupling` only.
struct TransportPlan {
    std::vector<std::size_t> matching;
    std::vector<CouplingEntry> coupling;
    /// Sum of mass * squared distance.
    double cost = 0.0;
};

struct W2Result {
    double w2 = 0.0;
    TransportPlan plan;
};

/// Largest problem accepted by the dense Hungarian solver.
inline constexpr std::size_t kMaxAssignmentSize = 4096;

/// Minimum-cost perfect matching on a dense n x n cost matrix (row-major).
/// Returns assignment[row] = column. O(n^3).
std::vector<std::size_t> solve_assignment(const std::vector<double>& cost, std::size_t n);

/// Exact W2 between uniform equal-size clouds via assignment. Unequal sizes
/// (uniform weights) resample the larger cloud to the smaller size with
/// `seed`; weighted 1D inputs are routed to w2_1d; weighted inputs in d > 1
/// are rejected.
W2Result w2_assignment(const EmpiricalMeasure& p, const EmpiricalMeasure& q, std::uint64_t seed = 0);

/// W2 in one dimension via the monotone (quantile) coupling. Accepts arbitrary
/// weights; for equal-size uniform clouds this is the sorted pairing.
double w2_1d(const EmpiricalMeasure& p, const EmpiricalMeasure& q);
W2Result w2_1d_plan(const EmpiricalMeasure& p, const EmpiricalMeasure& q);

/// Closed form between diagonal Gaussians.
double w2_gaussian_diag(const DiagGaussian& a, const DiagGaussian& b);

/// Maps an n x d batch of points to n x d images.
using PointMap = std::function<ad::DenseArray(const ad::DenseArray&)>;

/// E_{x~P} ||x - T(x)||^2 (squared units).
double pushforward_cost(const PointMap& map, const EmpiricalMeasure& p);
/// Same, given the already-mapped points (row i is the image of P's row i).
double displacement_cost(const EmpiricalMeasure& p, const ad::DenseArray& mapped);
/// Weighted mean of ||x - T(x)||_2 (unsquared).
double mean_displacement(const EmpiricalMeasure& p, const ad::DenseArray& mapped);

/// Samples from sum_i w_i N(x_i, h^2 I). Labels ride along with the chosen
/// component when present.
EmpiricalMeasure kernel_smooth_sample(const EmpiricalMeasure& q, double bandwidth, std::size_t count,
                                      std::uint64_t seed);

/// Max absolute deviation of the plan's marginals from the measures' weights.
double plan_marginal_error(const TransportPlan& plan, const EmpiricalMeasure& p, const EmpiricalMeasure& q);
/// Cost recomputed from the coupling entries.
double plan_cost(const TransportPlan& plan, const EmpiricalMeasure& p, const EmpiricalMeasure& q);

}  // namespace flowdro
