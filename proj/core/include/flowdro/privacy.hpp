#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "flowdro/dro.hpp"
#include "flowdro/measure.hpp"
#include "flowdro/risk.hpp"

namespace flowdro::privacy {

enum class MechanismKind { DPM, APMGaussian, APMLaplace };

const char* mechanism_name(MechanismKind k);

/// Scale for additive noise with E||xi||_2 = epsilon in dimension d. Gaussian
/// uses the exact chi mean; Laplace (i.i.d. per coordinate) is exact for d = 1
/// and Monte-Carlo calibrated otherwise.
double calibrate_apm(MechanismKind kind, double epsilon, std::size_t dim, std::size_t mc_samples = 200000,
                     std::uint64_t seed = 0);

/// E||xi||_2 for unit-scale noise (sigma = 1 or b = 1).
double unit_noise_norm(MechanismKind kind, std::size_t dim, std::size_t mc_samples = 200000, std::uint64_t seed = 0);

struct Mechanism {
    MechanismKind kind = MechanismKind::APMGaussian;
    /// DPM only: per-class flow chains.
    dro::LabeledTransport transport;
    /// APM only: sigma or b.
    double scale = 0.0;
    /// Calibrated mean l2 displacement.
    double budget = 0.0;
    std::size_t dim = 0;

    static Mechanism gaussian(double epsilon, std::size_t dim, std::uint64_t seed = 0);
    static Mechanism laplace(double epsilon, std::size_t dim, std::uint64_t seed = 0);
    /// Budget measured as the mean displacement of `transport` on `reference`.
    static Mechanism dpm(dro::LabeledTransport transport, const EmpiricalMeasure& reference);
};

/// Perturbs one query output. DPM is deterministic; APM adds seeded noise.
std::vector<double> apply_mechanism(const Mechanism& m, std::span<const double> query, int label, std::uint64_t seed);
/// Row-wise; row i of APM noise uses stream `i` of the seeded generator.
EmpiricalMeasure apply_mechanism(const Mechanism& m, const EmpiricalMeasure& queries, std::uint64_t seed);

enum class QueryKind { Point, MissingItem };

const char* query_name(QueryKind k);

struct QueryTask {
    QueryKind kind = QueryKind::Point;
    std::size_t classes = 2;
};

/// Coordinatewise mean of C - 1 class representatives.
std::vector<double> missing_item_query(const ad::DenseArray& representatives, std::size_t classes);

/// `count` missing-item queries drawn from labeled `data`: the missing class
/// cycles through 0..C-1; the rest contribute one random point each. Labels
/// are the missing class.
EmpiricalMeasure missing_item_dataset(const EmpiricalMeasure& data, std::size_t classes, std::size_t count,
                                      std::uint64_t seed);

/// Query outputs for a task over a labeled test measure.
EmpiricalMeasure build_queries(const QueryTask& task, const EmpiricalMeasure& test, std::uint64_t seed);

struct ErrorReport {
    std::vector<int> classes;
    std::vector<double> alpha;
    std::vector<double> beta;
    /// Test points with Y = k.
    std::vector<std::size_t> counts;
    std::vector<bool> present;
    double alpha_avg = 0.0;
    double beta_avg = 0.0;
    double budget = 0.0;
    /// Mean l2 displacement realized on these queries.
    double measured_displacement = 0.0;
    double clean_accuracy = 0.0;

    double total() const { return alpha_avg + beta_avg; }
};

/// alpha(k) = P(Yhat = k | Y != k), beta(k) = P(Yhat != k | Y = k) over the
/// perturbed queries, averaged over classes present in the test measure.
ErrorReport error_rates(const risk::MLPClassifier& classifier, const Mechanism& m, const QueryTask& task,
                        const EmpiricalMeasure& test, std::uint64_t seed);
/// Same on prebuilt labeled queries.
ErrorReport error_rates_on(const risk::MLPClassifier& classifier, const Mechanism& m, const EmpiricalMeasure& queries,
                           std::size_t classes, std::uint64_t seed);

/// Columns class,alpha,beta; footer rows "average" and "budget" (target, measured).
void write_error_csv(const ErrorReport& r, std::ostream& out);
std::string error_json(const ErrorReport& r);

}  // namespace flowdro::privacy
