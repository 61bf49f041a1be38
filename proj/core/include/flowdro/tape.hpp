#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "flowdro/dense_array.hpp"
#include "flowdro/param_store.hpp"

namespace flowdro::ad {

class Tape;

/// Handle to a node on a tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;
};

enum class Op {
    Input,
    Constant,
    Param,
    Affine,          // X W + b; optional extra W row scaled by a time attribute
    Softplus,        // (1/beta) log(1 + exp(beta x))
    Tanh,
    Relu,
    Exp,
    Add,             // ca * a + cb * b
    Mul,             // a * b
    Scale,           // a * x + b, scalars a, b
    Sum,
    Mean,
    SquaredNormRows, // n x d -> n x 1
    LogSumExpRows,   // n x C -> n x 1
    SoftmaxCrossEntropy,  // logits n x C, integer labels -> n x 1
};

const char* op_name(Op op);

/// Reverse-mode tape over dense arrays.
///
/// Operations record and evaluate eagerly. `eval` replays the recorded graph
/// with new input values (parameters are re-read from their store), so a tape
/// doubles as a reusable compiled function. Parameter gradients accumulate into
/// the owning ParamStore on `backward`.
class Tape {
public:
    explicit Tape(bool checked = checked_mode()) : checked_(checked) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var input(DenseArray value);
    Var constant(DenseArray value);
    /// Non-trainable copy of a store entry (no gradient flows back).
    Var frozen(const ParamStore& store, std::size_t index) { return constant(store.at(index).value); }
    Var param(ParamStore& store, std::size_t index);
    Var param(ParamStore& store, const std::string& name) { return param(store, store.index(name)); }

    const DenseArray& value(Var v) const;
    /// Adjoint of a node; valid after backward.
    const DenseArray& grad(Var v) const;

    /// Replays every node with the given input values (one per `input` leaf, in
    /// creation order) and returns the value of `output`.
    const DenseArray& eval(std::span<const DenseArray> inputs, Var output);

    /// Drops all forward values; backward is rejected until the next eval.
    void invalidate();
    bool evaluated() const { return evaluated_; }

    /// Propagates `seed` from `output`. Parameter gradients are added to their
    /// stores.
    void backward(Var output, const DenseArray& seed);
    /// Scalar output with seed 1.
    void backward(Var output);

    std::size_t size() const { return nodes_.size(); }
    std::size_t input_count() const { return input_ids_.size(); }
    bool checked() const { return checked_; }

    // Recording primitives (use the free functions below).
    Var record(Op op, std::vector<std::size_t> args, double a = 0.0, double b = 0.0,
               std::vector<int> labels = {}, bool flag = false);

private:
    struct Node {
        Op op = Op::Input;
        std::vector<std::size_t> args;
        double a = 0.0;  // beta / scale / time / ca
        double b = 0.0;  // shift / cb
        bool flag = false;  // Affine: has bias; time row present is inferred from shapes
        std::vector<int> labels;
        ParamStore* store = nullptr;
        std::size_t param_index = 0;
        DenseArray value;
        DenseArray adjoint;
    };

    void forward_node(Node& node);
    void check(const Node& node, std::size_t id) const;

    std::vector<Node> nodes_;
    std::vector<std::size_t> input_ids_;
    bool checked_;
    bool evaluated_ = true;
    bool backward_done_ = false;
};

// ---- primitives -----------------------------------------------------------

/// X (n x k) times W (k x m, or (k+1) x m with the last row scaled by `time`)
/// plus optional bias b (m or 1 x m).
Var affine(Var x, Var w);
Var affine(Var x, Var w, Var bias);
Var affine_timed(Var x, Var w, Var bias, double time);

Var softplus(Var x, double beta = 20.0);
Var tanh(Var x);
Var relu(Var x);
Var exp(Var x);
Var add(Var a, Var b, double ca = 1.0, double cb = 1.0);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor, double shift = 0.0);
Var sum(Var x);
Var mean(Var x);
Var squared_norm_rows(Var x);
Var log_sum_exp_rows(Var x);
Var softmax_cross_entropy(Var logits, std::vector<int> labels);

// ---- kernels shared with tape-free evaluation paths -------------------------

namespace kernel {

double softplus(double x, double beta);
double sigmoid(double x);
DenseArray affine(const DenseArray& x, const DenseArray& w, const DenseArray* bias, double time);
void activate_inplace(DenseArray& x, Op activation, double beta);

}  // namespace kernel

}  // namespace flowdro::ad
