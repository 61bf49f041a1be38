#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "flowdro/flow.hpp"
#include "flowdro/measure.hpp"
#include "flowdro/param_store.hpp"
#include "flowdro/risk.hpp"

namespace flowdro::dro {

enum class ScheduleKind { Even, Geometric, Explicit };

/// gamma_k for k = 1..K: constant, gamma_k = factor * gamma_{k-1}, or listed.
struct GammaSchedule {
    ScheduleKind kind = ScheduleKind::Even;
    double gamma = 1.0;
    double factor = 1.0;
    std::vector<double> values;

    std::vector<double> resolve(int blocks) const;
};

const char* schedule_name(ScheduleKind k);
ScheduleKind parse_schedule(const std::string& s);

enum class Optimizer { Adam, Sgd };

const char* optimizer_name(Optimizer o);
Optimizer parse_optimizer(const std::string& s);

struct LFDTrainConfig {
    int blocks = 1;
    GammaSchedule gamma;
    int epochs = 200;
    std::size_t batch_size = 0;  // 0 = full batch
    double lr = 1e-2;
    Optimizer optimizer = Optimizer::Adam;
    flow::IntegratorConfig integrator;
    std::vector<std::size_t> hidden{32, 32};
    ad::Activation activation = ad::Activation::Softplus;
    double beta = 20.0;
    /// Unset: on for multi-step integration, off for Euler with one substep.
    std::optional<bool> time_conditioned;
    /// Stop adding blocks once the achieved W2 reaches this radius.
    std::optional<double> stop_radius;
    /// One chain per label for labeled data; a single shared chain otherwise.
    bool per_class = true;
    /// Points used for the per-epoch W2 estimate when d > 1.
    std::size_t w2_sample = 64;
    std::uint64_t seed = 0;

    bool resolved_time_conditioning() const;
    void validate() const;
};

struct EpochRecord {
    int block = 0;
    int epoch = 0;
    double objective = 0.0;
    double transport_cost = 0.0;
    double w2_estimate = 0.0;
    double risk = 0.0;
};

struct ClassSummary {
    /// -1 for a shared chain.
    int label = -1;
    double weight = 1.0;
    std::size_t points = 0;
    int blocks_trained = 0;
    std::vector<double> gammas;
    /// Per-block E ||x - T_k(x)||^2 on the block's input measure.
    std::vector<double> block_costs;
    double chain_cost = 0.0;
    double w2 = 0.0;
    double risk = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::vector<ClassSummary> classes;
    /// W2(Q, P) under the label-preserving coupling: sqrt(sum_c w_c W2_c^2).
    double w2_estimate = 0.0;
    /// E ||x - T(x)||^2 over P.
    double chain_cost = 0.0;
    /// E_Q[r] for risk models, E_Q[V] for bare potentials.
    double risk = 0.0;
    std::size_t points = 0;
    /// Field evaluations measured for one pass of P through the trained chains.
    std::uint64_t pass_evaluations = 0;
    /// evaluations-per-point(method, S) * K * N summed over chains.
    std::uint64_t pass_evaluations_formula = 0;
};

/// Flow chains for a labeled or unlabeled measure.
struct LabeledTransport {
    bool per_class = false;
    /// Labels in order of `chains` when per_class.
    std::vector<int> labels;
    std::vector<flow::FlowChain> chains;

    const flow::FlowChain& chain_for(int label) const;
    EmpiricalMeasure apply(const EmpiricalMeasure& p, flow::EvalCounter* counter = nullptr) const;
};

struct LfdResult {
    LabeledTransport transport;
    TrainReport report;
    EmpiricalMeasure pushforward;
};

/// Block-wise progressive training: block k + 1 is fit on the pushforward of P
/// through blocks 1..k.
LfdResult train_lfd(const risk::Potential& v, const EmpiricalMeasure& p, const LFDTrainConfig& cfg);
/// V = -r for the model, frozen.
LfdResult train_lfd(const risk::RiskModel& model, const EmpiricalMeasure& p, const LFDTrainConfig& cfg);

/// Single chain on an unlabeled (or label-carrying) measure; building block of
/// train_lfd.
struct ChainResult {
    flow::FlowChain chain;
    std::vector<EpochRecord> epochs;
    ClassSummary summary;
    EmpiricalMeasure pushforward;
};
ChainResult train_chain(const risk::Potential& v, const EmpiricalMeasure& p, const LFDTrainConfig& cfg,
                        double risk_sign = 1.0);

void write_report_csv(const TrainReport& r, std::ostream& out);
std::string report_json(const TrainReport& r);

// ---- min-max ------------------------------------------------------------------

struct MinMaxConfig {
    double gamma = 5.0;
    int iterations = 200;
    int inner_loops = 3;
    double classifier_lr = 1e-2;
    double flow_lr = 1e-2;
    std::size_t batch_size = 0;
    flow::IntegratorConfig integrator;
    std::vector<std::size_t> hidden{32, 32};
    /// Single persistent flow across outer iterations; false re-initializes it.
    bool warm_start = true;
    std::uint64_t seed = 0;

    void validate() const;
};

struct MinMaxRecord {
    int iteration = 0;
    double flow_objective = 0.0;
    double transport_cost = 0.0;
    double classifier_loss = 0.0;
};

struct MinMaxResult {
    flow::FlowBlock flow;
    std::vector<MinMaxRecord> history;
};

/// Alternates inner_loops flow steps against the current classifier with one
/// classifier step on the pushforward. `model` is updated in place.
MinMaxResult solve_minmax(risk::ClassifierRisk& model, const EmpiricalMeasure& p, const MinMaxConfig& cfg);

// ---- evaluation -------------------------------------------------------------------

struct LfdEvaluation {
    double risk_p = 0.0;
    double risk_q = 0.0;
    /// Percent; present for classifiers.
    std::optional<double> accuracy_p;
    std::optional<double> accuracy_q;
    double w2 = 0.0;
};

/// Risk and accuracy on P and Q plus the assignment W2 between them.
LfdEvaluation evaluate_lfd(const risk::RiskModel& model, const EmpiricalMeasure& p, const EmpiricalMeasure& q,
                           std::uint64_t seed = 0);

/// Draws `count` points of a fixed dimension.
struct Sampler {
    std::size_t dim = 0;
    std::function<EmpiricalMeasure(std::size_t count, Rng& rng)> draw;

    EmpiricalMeasure operator()(std::size_t count, Rng& rng) const { return draw(count, rng); }
};

Sampler gaussian_sampler(const DiagGaussian& g);
/// x ~ base, then x -> T(x).
Sampler compose_sampler(const Sampler& base, const flow::FlowChain& chain);

}  // namespace flowdro::dro
