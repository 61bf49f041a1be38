#include "flowdro/flow.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "flowdro/error.hpp"
#include "flowdro/ot.hpp"
#include "flowdro/rng.hpp"

namespace flowdro::flow {

using ad::DenseArray;
using ad::Tape;
using ad::Var;

const char* method_name(Method m) { return m == Method::Euler ? "euler" : "rk4"; }

Method parse_method(const std::string& s)
{
    if (s == "euler") return Method::Euler;
    if (s == "rk4") return Method::RK4;
    throw ValidationError("unknown integrator '" + s + "' (expected euler or rk4)");
}

VelocityField::VelocityField(ad::Mlp net) : net_(std::move(net))
{
    FLOWDRO_REQUIRE(net_.spec().input_dim() == net_.spec().output_dim(),
                    "VelocityField: output dimension must equal the spatial input dimension");
}

VelocityField VelocityField::initialize(std::size_t dim, std::vector<std::size_t> hidden, bool time_conditioned,
                                        Rng& rng, ad::Activation act, double beta)
{
    ad::MlpSpec spec;
    spec.widths.push_back(dim);
    spec.widths.insert(spec.widths.end(), hidden.begin(), hidden.end());
    spec.widths.push_back(dim);
    spec.activation = act;
    spec.beta = beta;
    spec.time_input = time_conditioned;
    return VelocityField(ad::Mlp::initialize(std::move(spec), rng, /*zero_last=*/true));
}

DenseArray VelocityField::evaluate(const DenseArray& x, double t, EvalCounter* counter) const
{
    if (counter) counter->evaluations += x.rows();
    return net_.forward(x, t);
}

void FlowBlock::validate() const
{
    FLOWDRO_REQUIRE(gamma > 0, "FlowBlock: gamma must be positive");
    FLOWDRO_REQUIRE(integrator.substeps >= 1, "FlowBlock: substeps must be at least 1");
}

void FlowChain::validate() const
{
    for (const auto& b : blocks) {
        b.validate();
        FLOWDRO_REQUIRE(b.field.dim() == blocks.front().field.dim(), "FlowChain: blocks disagree in dimension");
    }
}

namespace {

// a * x + b * y, elementwise; identical arithmetic to the tape's Add node.
DenseArray axpby(double a, const DenseArray& x, double b, const DenseArray& y)
{
    DenseArray out = x;
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = a * out[k] + b * y[k];
    return out;
}

void check_state(const DenseArray& x, int substep)
{
    if (!x.all_finite())
        throw NumericalError("flow integration: non-finite state after substep " + std::to_string(substep));
}

}  // namespace

DenseArray integrate_batch(const FlowBlock& block, const DenseArray& x0, std::vector<DenseArray>* states,
                           EvalCounter* counter)
{
    block.validate();
    FLOWDRO_REQUIRE(x0.rank() == 2 && x0.cols() == block.field.dim(),
                    "integrate: input shape " + ad::shape_string(x0.shape()) + " does not match field dimension " +
                        std::to_string(block.field.dim()));
    check_state(x0, 0);
    const int S = block.integrator.substeps;
    const double h = 1.0 / S;
    DenseArray x = x0;
    if (states) {
        states->clear();
        states->push_back(x);
    }
    for (int s = 0; s < S; ++s) {
        const double t = s * h;
        const auto& f = block.field;
        if (block.integrator.method == Method::Euler) {
            x = axpby(1.0, x, h, f.evaluate(x, t, counter));
        } else {
            DenseArray k1 = f.evaluate(x, t, counter);
            DenseArray k2 = f.evaluate(axpby(1.0, x, 0.5 * h, k1), t + 0.5 * h, counter);
            DenseArray k3 = f.evaluate(axpby(1.0, x, 0.5 * h, k2), t + 0.5 * h, counter);
            DenseArray k4 = f.evaluate(axpby(1.0, x, h, k3), t + h, counter);
            DenseArray acc = axpby(1.0, k1, 2.0, k2);
            acc = axpby(1.0, acc, 2.0, k3);
            acc = axpby(1.0, acc, 1.0, k4);
            x = axpby(1.0, x, h / 6.0, acc);
        }
        check_state(x, s + 1);
        if (states) states->push_back(x);
    }
    return x;
}

Trajectory integrate(const FlowBlock& block, std::span<const double> x, bool keep_trajectory, EvalCounter* counter)
{
    DenseArray x0({1, x.size()}, std::vector<double>(x.begin(), x.end()));
    std::vector<DenseArray> states;
    DenseArray end = integrate_batch(block, x0, keep_trajectory ? &states : nullptr, counter);
    Trajectory tr;
    tr.endpoint.assign(end.values().begin(), end.values().end());
    for (const auto& s : states) tr.states.emplace_back(s.values().begin(), s.values().end());
    return tr;
}

Var integrate_on_tape(const FlowBlock& block, const std::vector<Var>& leaves, Var x)
{
    block.validate();
    const int S = block.integrator.substeps;
    const double h = 1.0 / S;
    const auto& net = block.field.net();
    for (int s = 0; s < S; ++s) {
        const double t = s * h;
        if (block.integrator.method == Method::Euler) {
            x = ad::add(x, net.apply(leaves, x, t), 1.0, h);
        } else {
            Var k1 = net.apply(leaves, x, t);
            Var k2 = net.apply(leaves, ad::add(x, k1, 1.0, 0.5 * h), t + 0.5 * h);
            Var k3 = net.apply(leaves, ad::add(x, k2, 1.0, 0.5 * h), t + 0.5 * h);
            Var k4 = net.apply(leaves, ad::add(x, k3, 1.0, h), t + h);
            Var acc = ad::add(k1, k2, 1.0, 2.0);
            acc = ad::add(acc, k3, 1.0, 2.0);
            acc = ad::add(acc, k4, 1.0, 1.0);
            x = ad::add(x, acc, 1.0, h / 6.0);
        }
    }
    return x;
}

DenseArray push_points(const FlowChain& chain, const DenseArray& x, EvalCounter* counter)
{
    chain.validate();
    DenseArray y = x;
    for (const auto& b : chain.blocks) y = integrate_batch(b, y, nullptr, counter);
    return y;
}

EmpiricalMeasure push_forward(const FlowChain& chain, const EmpiricalMeasure& p, EvalCounter* counter)
{
    if (chain.empty()) return p;
    FLOWDRO_REQUIRE(chain.blocks.front().field.dim() == p.dim(), "push_forward: dimension mismatch");
    return p.with_points(push_points(chain, p.points(), counter));
}

double chain_transport_cost(const FlowChain& chain, const EmpiricalMeasure& p)
{
    return displacement_cost(p, push_forward(chain, p).points());
}

namespace {

struct TapeObjective {
    Var objective;
    Var potential;
    Var cost;
};

TapeObjective build_objective(Tape& tape, const FlowBlock& block, const std::vector<Var>& leaves,
                              const risk::Potential& v, const EmpiricalMeasure& batch)
{
    FLOWDRO_REQUIRE(batch.dim() == block.field.dim(), "block_objective: dimension mismatch");
    if (v.needs_labels() && !batch.has_labels()) throw ValidationError("block_objective: potential requires labels");
    Var x = tape.constant(batch.points());
    Var y = integrate_on_tape(block, leaves, x);
    Var w = tape.constant(DenseArray({batch.size(), 1}, batch.weights()));
    Var pot = ad::sum(ad::mul(v.on_tape(tape, y, batch.labels()), w));
    Var cost = ad::sum(ad::mul(ad::squared_norm_rows(ad::sub(x, y)), w));
    Var obj = ad::add(pot, cost, 1.0, 1.0 / (2.0 * block.gamma));
    return {obj, pot, cost};
}

void require_finite_objective(double v)
{
    if (!std::isfinite(v)) throw NumericalError("block_objective: non-finite objective value");
}

}  // namespace

double block_objective(const FlowBlock& block, const risk::Potential& v, const EmpiricalMeasure& batch)
{
    block.validate();
    Tape tape;
    auto leaves = block.field.net().bind_frozen(tape);
    auto terms = build_objective(tape, block, leaves, v, batch);
    const double value = tape.value(terms.objective).item();
    require_finite_objective(value);
    return value;
}

ObjectiveTerms block_objective_grad(FlowBlock& block, const risk::Potential& v, const EmpiricalMeasure& batch)
{
    block.validate();
    Tape tape;
    auto leaves = block.field.net().bind_trainable(tape);
    auto terms = build_objective(tape, block, leaves, v, batch);
    ObjectiveTerms out;
    out.objective = tape.value(terms.objective).item();
    out.potential = tape.value(terms.potential).item();
    out.transport_cost = tape.value(terms.cost).item();
    require_finite_objective(out.objective);
    tape.backward(terms.objective);
    return out;
}

// ---- serialization ------------------------------------------------------------

void save_chain(const FlowChain& chain, const std::string& manifest_path)
{
    chain.validate();
    namespace fs = std::filesystem;
    const fs::path manifest(manifest_path);
    nlohmann::json blocks = nlohmann::json::array();
    for (std::size_t k = 0; k < chain.blocks.size(); ++k) {
        const auto& b = chain.blocks[k];
        const auto& spec = b.field.net().spec();
        const std::string ckpt = manifest.stem().string() + ".block" + std::to_string(k) + ".json";
        ad::save_checkpoint(b.field.params(), (manifest.parent_path() / ckpt).string(), false);
        blocks.push_back({{"widths", spec.widths},
                          {"activation", ad::activation_name(spec.activation)},
                          {"beta", spec.beta},
                          {"time_conditioned", spec.time_input},
                          {"method", method_name(b.integrator.method)},
                          {"substeps", b.integrator.substeps},
                          {"gamma", b.gamma},
                          {"checkpoint", ckpt}});
    }
    nlohmann::json doc = {{"format_version", 1}, {"blocks", blocks}};
    std::ofstream out(manifest_path);
    if (!out) throw ValidationError("save_chain: cannot open '" + manifest_path + "'");
    out << doc.dump(2) << '\n';
}

FlowChain load_chain(const std::string& manifest_path)
{
    namespace fs = std::filesystem;
    std::ifstream in(manifest_path);
    if (!in) throw ValidationError("load_chain: cannot open '" + manifest_path + "'");
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
        FlowChain chain;
        for (const auto& jb : doc.at("blocks")) {
            ad::MlpSpec spec;
            spec.widths = jb.at("widths").get<std::vector<std::size_t>>();
            spec.activation = ad::parse_activation(jb.at("activation").get<std::string>());
            spec.beta = jb.at("beta").get<double>();
            spec.time_input = jb.at("time_conditioned").get<bool>();
            const auto ckpt = fs::path(manifest_path).parent_path() / jb.at("checkpoint").get<std::string>();
            FlowBlock b;
            b.field = VelocityField(ad::Mlp(spec, ad::load_checkpoint(ckpt.string())));
            b.integrator.method = parse_method(jb.at("method").get<std::string>());
            b.integrator.substeps = jb.at("substeps").get<int>();
            b.gamma = jb.at("gamma").get<double>();
            chain.blocks.push_back(std::move(b));
        }
        chain.validate();
        return chain;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("load_chain: malformed manifest: ") + e.what());
    }
}

}  // namespace flowdro::flow
