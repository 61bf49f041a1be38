#pragma once

#include <string>
#include <vector>

#include "flowdro/param_store.hpp"
#include "flowdro/tape.hpp"

namespace flowdro {
class Rng;
}

namespace flowdro::ad {

enum class Activation { Softplus, Tanh, Relu };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& s);

/// widths = {input, hidden..., output}; a single width is the identity map.
/// When `time_input` is set the first affine layer carries one extra weight
/// row multiplied by the time argument.
struct MlpSpec {
    std::vector<std::size_t> widths;
    Activation activation = Activation::Softplus;
    double beta = 20.0;
    bool time_input = false;

    std::size_t input_dim() const { return widths.front(); }
    std::size_t output_dim() const { return widths.back(); }
    std::size_t layer_count() const { return widths.size() - 1; }
};

/// Fully connected network. Parameters "l{i}.W" (fan_in x fan_out) and
/// "l{i}.b" (fan_out) live in an owned ParamStore.
class Mlp {
public:
    Mlp() = default;
    /// Validates parameter shapes against the spec.
    Mlp(MlpSpec spec, ParamStore params);

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init. `zero_last` zeroes the
    /// final affine layer so the network outputs 0 everywhere.
    static Mlp initialize(MlpSpec spec, Rng& rng, bool zero_last = false);

    const MlpSpec& spec() const { return spec_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    /// Tape-free forward pass on an n x input_dim batch.
    DenseArray forward(const DenseArray& x, double time = 0.0) const;

    /// Parameter leaves on a tape, one per ParamStore entry.
    std::vector<Var> bind_trainable(Tape& tape);
    std::vector<Var> bind_frozen(Tape& tape) const;
    /// Forward pass on the tape using previously bound leaves.
    Var apply(const std::vector<Var>& leaves, Var x, double time = 0.0) const;

private:
    MlpSpec spec_;
    ParamStore params_;
};

}  // namespace flowdro::ad
