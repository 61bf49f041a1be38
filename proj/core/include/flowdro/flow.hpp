#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "flowdro/measure.hpp"
#include "flowdro/mlp.hpp"
#include "flowdro/risk.hpp"

namespace flowdro::flow {

enum class Method { Euler, RK4 };

const char* method_name(Method m);
Method parse_method(const std::string& s);

struct IntegratorConfig {
    Method method = Method::RK4;
    int substeps = 3;

    /// Field evaluations per point for one pass through a block.
    std::uint64_t evaluations_per_point() const
    {
        return static_cast<std::uint64_t>(method == Method::RK4 ? 4 : 1) * static_cast<std::uint64_t>(substeps);
    }
};

/// Counts velocity-field evaluations, one per point per call.
struct EvalCounter {
    std::uint64_t evaluations = 0;
};

/// Velocity field f(x, t; theta): R^d (x [0,1)) -> R^d.
class VelocityField {
public:
    VelocityField() = default;
    explicit VelocityField(ad::Mlp net);

    /// Hidden widths between input and output; final layer zero-initialized so
    /// the field starts at f = 0 (identity block).
    static VelocityField initialize(std::size_t dim, std::vector<std::size_t> hidden, bool time_conditioned, Rng& rng,
                                    ad::Activation act = ad::Activation::Softplus, double beta = 20.0);

    std::size_t dim() const { return net_.spec().output_dim(); }
    bool time_conditioned() const { return net_.spec().time_input; }
    ad::Mlp& net() { return net_; }
    const ad::Mlp& net() const { return net_; }
    ad::ParamStore& params() { return net_.params(); }
    const ad::ParamStore& params() const { return net_.params(); }

    ad::DenseArray evaluate(const ad::DenseArray& x, double t, EvalCounter* counter = nullptr) const;

private:
    ad::Mlp net_;
};

struct FlowBlock {
    VelocityField field;
    IntegratorConfig integrator;
    double gamma = 1.0;

    void validate() const;
};

/// T = T_K o ... o T_1; blocks applied in order.
struct FlowChain {
    std::vector<FlowBlock> blocks;

    bool empty() const { return blocks.empty(); }
    std::size_t size() const { return blocks.size(); }
    /// Throws when blocks disagree in dimension.
    void validate() const;
};

struct Trajectory {
    std::vector<double> endpoint;
    /// S + 1 states including the start, when requested.
    std::vector<std::vector<double>> states;
};

/// Integrates one point over [0, 1) with the block's scheme.
Trajectory integrate(const FlowBlock& block, std::span<const double> x, bool keep_trajectory = false,
                     EvalCounter* counter = nullptr);

/// Batched integration of every row. `states`, when given, receives the S + 1
/// intermediate batches.
ad::DenseArray integrate_batch(const FlowBlock& block, const ad::DenseArray& x, std::vector<ad::DenseArray>* states = nullptr,
                               EvalCounter* counter = nullptr);

/// Unrolled integration on a tape. `leaves` come from the field's net bound to
/// the same tape.
ad::Var integrate_on_tape(const FlowBlock& block, const std::vector<ad::Var>& leaves, ad::Var x);

ad::DenseArray push_points(const FlowChain& chain, const ad::DenseArray& x, EvalCounter* counter = nullptr);
EmpiricalMeasure push_forward(const FlowChain& chain, const EmpiricalMeasure& p, EvalCounter* counter = nullptr);

/// E_{x~P} ||x - T_final(x)||^2.
double chain_transport_cost(const FlowChain& chain, const EmpiricalMeasure& p);

/// SAA of E[V(T(x)) + ||x - T(x)||^2 / (2 gamma)] over the batch (weighted).
double block_objective(const FlowBlock& block, const risk::Potential& v, const EmpiricalMeasure& batch);

struct ObjectiveTerms {
    double objective = 0.0;
    double potential = 0.0;       // weighted mean of V(T(x))
    double transport_cost = 0.0;  // weighted mean of ||x - T(x)||^2
};

/// Objective value and its exact gradient (through the unrolled integrator),
/// accumulated into block.field.params().
ObjectiveTerms block_objective_grad(FlowBlock& block, const risk::Potential& v, const EmpiricalMeasure& batch);

// Chain serialization: manifest JSON with one entry per block plus one
// checkpoint file per block ("<stem>.block<k>.json" next to the manifest).
void save_chain(const FlowChain& chain, const std::string& manifest_path);
FlowChain load_chain(const std::string& manifest_path);

}  // namespace flowdro::flow
