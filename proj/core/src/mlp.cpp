#include "flowdro/mlp.hpp"

#include <cmath>

#include "flowdro/error.hpp"
#include "flowdro/rng.hpp"

namespace flowdro::ad {
namespace {

Op activation_op(Activation a)
{
    switch (a) {
        case Activation::Softplus: return Op::Softplus;
        case Activation::Tanh: return Op::Tanh;
        case Activation::Relu: return Op::Relu;
    }
    return Op::Softplus;
}

std::size_t first_fan_in(const MlpSpec& s) { return s.widths[0] + (s.time_input ? 1 : 0); }

void validate_spec(const MlpSpec& s)
{
    FLOWDRO_REQUIRE(!s.widths.empty(), "Mlp: need at least an input width");
    FLOWDRO_REQUIRE(s.widths.size() >= 2 || !s.time_input, "Mlp: a zero-layer network cannot take a time input");
    for (auto w : s.widths) FLOWDRO_REQUIRE(w >= 1, "Mlp: widths must be positive");
    FLOWDRO_REQUIRE(s.beta > 0, "Mlp: softplus beta must be positive");
}

}  // namespace

const char* activation_name(Activation a)
{
    switch (a) {
        case Activation::Softplus: return "softplus";
        case Activation::Tanh: return "tanh";
        case Activation::Relu: return "relu";
    }
    return "?";
}

Activation parse_activation(const std::string& s)
{
    if (s == "softplus") return Activation::Softplus;
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    throw ValidationError("unknown activation '" + s + "' (expected softplus, tanh or relu)");
}

Mlp::Mlp(MlpSpec spec, ParamStore params) : spec_(std::move(spec)), params_(std::move(params))
{
    validate_spec(spec_);
    FLOWDRO_REQUIRE(params_.size() == 2 * spec_.layer_count(), "Mlp: parameter count does not match layer count");
    for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
        const std::size_t fan_in = l == 0 ? first_fan_in(spec_) : spec_.widths[l];
        const std::size_t fan_out = spec_.widths[l + 1];
        const auto& w = params_.at(2 * l);
        const auto& b = params_.at(2 * l + 1);
        FLOWDRO_REQUIRE(w.name == "l" + std::to_string(l) + ".W" && b.name == "l" + std::to_string(l) + ".b",
                        "Mlp: unexpected parameter names");
        FLOWDRO_REQUIRE(w.value.shape() == std::vector<std::size_t>({fan_in, fan_out}),
                        "Mlp: layer " + std::to_string(l) + " weight has shape " + shape_string(w.value.shape()));
        FLOWDRO_REQUIRE(b.value.shape() == std::vector<std::size_t>({fan_out}),
                        "Mlp: layer " + std::to_string(l) + " bias has shape " + shape_string(b.value.shape()));
    }
}

Mlp Mlp::initialize(MlpSpec spec, Rng& rng, bool zero_last)
{
    validate_spec(spec);
    ParamStore store;
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
        const std::size_t fan_in = l == 0 ? first_fan_in(spec) : spec.widths[l];
        const std::size_t fan_out = spec.widths[l + 1];
        const bool zero = zero_last && l + 1 == spec.layer_count();
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        DenseArray w({fan_in, fan_out}, 0.0);
        DenseArray b({fan_out}, 0.0);
        if (!zero) {
            for (auto& v : w.values()) v = bound * (2.0 * rng.uniform() - 1.0);
            for (auto& v : b.values()) v = bound * (2.0 * rng.uniform() - 1.0);
        }
        store.add("l" + std::to_string(l) + ".W", std::move(w));
        store.add("l" + std::to_string(l) + ".b", std::move(b));
    }
    return Mlp(std::move(spec), std::move(store));
}

DenseArray Mlp::forward(const DenseArray& x, double time) const
{
    FLOWDRO_REQUIRE(x.rank() == 2 && x.cols() == spec_.input_dim(),
                    "Mlp::forward: input shape " + shape_string(x.shape()) + " expected n x " +
                        std::to_string(spec_.input_dim()));
    DenseArray h = x;
    for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
        h = kernel::affine(h, params_.at(2 * l).value, &params_.at(2 * l + 1).value, time);
        if (l + 1 < spec_.layer_count()) kernel::activate_inplace(h, activation_op(spec_.activation), spec_.beta);
    }
    return h;
}

std::vector<Var> Mlp::bind_trainable(Tape& tape)
{
    std::vector<Var> leaves;
    for (std::size_t i = 0; i < params_.size(); ++i) leaves.push_back(tape.param(params_, i));
    return leaves;
}

std::vector<Var> Mlp::bind_frozen(Tape& tape) const
{
    std::vector<Var> leaves;
    for (std::size_t i = 0; i < params_.size(); ++i) leaves.push_back(tape.frozen(params_, i));
    return leaves;
}

Var Mlp::apply(const std::vector<Var>& leaves, Var x, double time) const
{
    FLOWDRO_REQUIRE(leaves.size() == params_.size(), "Mlp::apply: leaf count mismatch");
    Var h = x;
    for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
        h = affine_timed(h, leaves[2 * l], leaves[2 * l + 1], time);
        if (l + 1 < spec_.layer_count()) {
            switch (spec_.activation) {
                case Activation::Softplus: h = softplus(h, spec_.beta); break;
                case Activation::Tanh: h = ad::tanh(h); break;
                case Activation::Relu: h = relu(h); break;
            }
        }
    }
    return h;
}

}  // namespace flowdro::ad
