#include "flowdro/tape.hpp"

#include <algorithm>
#include <cmath>

#include "flowdro/error.hpp"

namespace flowdro::ad {

const char* op_name(Op op)
{
    switch (op) {
        case Op::Input: return "input";
        case Op::Constant: return "constant";
        case Op::Param: return "param";
        case Op::Affine: return "affine";
        case Op::Softplus: return "softplus";
        case Op::Tanh: return "tanh";
        case Op::Relu: return "relu";
        case Op::Exp: return "exp";
        case Op::Add: return "add";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::SquaredNormRows: return "squared_norm_rows";
        case Op::LogSumExpRows: return "log_sum_exp_rows";
        case Op::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    }
    return "?";
}

// ---- kernels --------------------------------------------------------------

namespace kernel {

double softplus(double x, double beta)
{
    const double z = beta * x;
    if (z > 0) return x + std::log1p(std::exp(-z)) / beta;
    return std::log1p(std::exp(z)) / beta;
}

double sigmoid(double x)
{
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

DenseArray affine(const DenseArray& x, const DenseArray& w, const DenseArray* bias, double time)
{
    const std::size_t n = x.rows();
    const std::size_t k = x.cols();
    FLOWDRO_REQUIRE(w.rank() == 2, "affine: weight must be rank 2, got " + shape_string(w.shape()));
    const std::size_t wr = w.shape()[0];
    const std::size_t m = w.shape()[1];
    FLOWDRO_REQUIRE(wr == k || wr == k + 1, "affine: input " + shape_string(x.shape()) + " incompatible with weight " +
                                                shape_string(w.shape()));
    if (bias) FLOWDRO_REQUIRE(bias->size() == m, "affine: bias size mismatch");
    DenseArray y({n, m}, 0.0);
    std::vector<double> offset(m, 0.0);
    if (bias)
        for (std::size_t j = 0; j < m; ++j) offset[j] = (*bias)[j];
    if (wr == k + 1)
        for (std::size_t j = 0; j < m; ++j) offset[j] += time * w(k, j);
    const double* xd = x.values().data();
    const double* wd = w.values().data();
    double* yd = y.values().data();
    for (std::size_t i = 0; i < n; ++i) {
        double* yi = yd + i * m;
        for (std::size_t j = 0; j < m; ++j) yi[j] = offset[j];
        const double* xi = xd + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double xv = xi[p];
            const double* wp = wd + p * m;
            for (std::size_t j = 0; j < m; ++j) yi[j] += xv * wp[j];
        }
    }
    return y;
}

void activate_inplace(DenseArray& x, Op activation, double beta)
{
    switch (activation) {
        case Op::Softplus:
            for (auto& v : x.values()) v = softplus(v, beta);
            break;
        case Op::Tanh:
            for (auto& v : x.values()) v = std::tanh(v);
            break;
        case Op::Relu:
            for (auto& v : x.values()) v = v > 0 ? v : 0.0;
            break;
        default:
            throw ValidationError(std::string("activate_inplace: not an activation: ") + op_name(activation));
    }
}

}  // namespace kernel

// ---- recording --------------------------------------------------------------

Var Tape::input(DenseArray value)
{
    Node node;
    node.op = Op::Input;
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    input_ids_.push_back(nodes_.size() - 1);
    check(nodes_.back(), nodes_.size() - 1);
    return {this, nodes_.size() - 1};
}

Var Tape::constant(DenseArray value)
{
    Node node;
    node.op = Op::Constant;
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
}

Var Tape::param(ParamStore& store, std::size_t index)
{
    Node node;
    node.op = Op::Param;
    node.store = &store;
    node.param_index = index;
    node.value = store.at(index).value;
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
}

Var Tape::record(Op op, std::vector<std::size_t> args, double a, double b, std::vector<int> labels, bool flag)
{
    FLOWDRO_REQUIRE(evaluated_, std::string("Tape: cannot record ") + op_name(op) + " on an invalidated tape");
    for (auto id : args) FLOWDRO_REQUIRE(id < nodes_.size(), "Tape: argument references a later node");
    Node node;
    node.op = op;
    node.args = std::move(args);
    node.a = a;
    node.b = b;
    node.flag = flag;
    node.labels = std::move(labels);
    nodes_.push_back(std::move(node));
    forward_node(nodes_.back());
    check(nodes_.back(), nodes_.size() - 1);
    backward_done_ = false;
    return {this, nodes_.size() - 1};
}

const DenseArray& Tape::value(Var v) const
{
    FLOWDRO_REQUIRE(v.tape == this && v.id < nodes_.size(), "Tape: foreign or invalid Var");
    FLOWDRO_REQUIRE(evaluated_, "Tape: value requested from an invalidated tape");
    return nodes_[v.id].value;
}

const DenseArray& Tape::grad(Var v) const
{
    FLOWDRO_REQUIRE(v.tape == this && v.id < nodes_.size(), "Tape: foreign or invalid Var");
    FLOWDRO_REQUIRE(backward_done_, "Tape: gradient requested before backward");
    return nodes_[v.id].adjoint;
}

void Tape::check(const Node& node, std::size_t id) const
{
    if (!checked_) return;
    if (!node.value.all_finite())
        throw NumericalError(std::string("Tape: non-finite value produced by ") + op_name(node.op) + " (node " +
                             std::to_string(id) + ")");
}

void Tape::invalidate()
{
    evaluated_ = false;
    backward_done_ = false;
}

const DenseArray& Tape::eval(std::span<const DenseArray> inputs, Var output)
{
    FLOWDRO_REQUIRE(output.tape == this && output.id < nodes_.size(), "Tape::eval: foreign or invalid output");
    FLOWDRO_REQUIRE(inputs.size() == input_ids_.size(), "Tape::eval: expected " + std::to_string(input_ids_.size()) +
                                                            " inputs, got " + std::to_string(inputs.size()));
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto& declared = nodes_[input_ids_[i]].value;
        if (!declared.same_shape(inputs[i]))
            throw ValidationError("Tape::eval: input " + std::to_string(i) + " has shape " +
                                  shape_string(inputs[i].shape()) + ", declared " + shape_string(declared.shape()));
    }
    evaluated_ = false;
    std::size_t next_input = 0;
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        auto& node = nodes_[id];
        switch (node.op) {
            case Op::Input: node.value = inputs[next_input++]; break;
            case Op::Constant: break;
            case Op::Param: node.value = node.store->at(node.param_index).value; break;
            default: forward_node(node); break;
        }
        check(node, id);
    }
    evaluated_ = true;
    backward_done_ = false;
    return nodes_[output.id].value;
}

// ---- forward ---------------------------------------------------------------

namespace {

void require_same_shape(const DenseArray& a, const DenseArray& b, const char* op)
{
    if (!a.same_shape(b))
        throw ValidationError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                              shape_string(b.shape()));
}

}  // namespace

void Tape::forward_node(Node& node)
{
    auto arg = [&](std::size_t i) -> const DenseArray& { return nodes_[node.args[i]].value; };
    switch (node.op) {
        case Op::Affine: {
            const DenseArray* bias = node.flag ? &arg(2) : nullptr;
            node.value = kernel::affine(arg(0), arg(1), bias, node.a);
            break;
        }
        case Op::Softplus:
        case Op::Tanh:
        case Op::Relu:
            node.value = arg(0);
            kernel::activate_inplace(node.value, node.op, node.a);
            break;
        case Op::Exp:
            node.value = arg(0);
            for (auto& v : node.value.values()) v = std::exp(v);
            break;
        case Op::Add: {
            require_same_shape(arg(0), arg(1), "add");
            node.value = arg(0);
            const auto& y = arg(1);
            for (std::size_t k = 0; k < y.size(); ++k) node.value[k] = node.a * node.value[k] + node.b * y[k];
            break;
        }
        case Op::Mul: {
            require_same_shape(arg(0), arg(1), "mul");
            node.value = arg(0);
            const auto& y = arg(1);
            for (std::size_t k = 0; k < y.size(); ++k) node.value[k] *= y[k];
            break;
        }
        case Op::Scale:
            node.value = arg(0);
            for (auto& v : node.value.values()) v = node.a * v + node.b;
            break;
        case Op::Sum:
        case Op::Mean: {
            const auto& x = arg(0);
            double s = 0;
            for (double v : x.values()) s += v;
            if (node.op == Op::Mean) {
                FLOWDRO_REQUIRE(x.size() > 0, "mean of empty array");
                s /= static_cast<double>(x.size());
            }
            node.value = DenseArray::scalar(s);
            break;
        }
        case Op::SquaredNormRows: {
            const auto& x = arg(0);
            DenseArray y({x.rows(), 1}, 0.0);
            for (std::size_t i = 0; i < x.rows(); ++i) {
                double s = 0;
                for (double v : x.row(i)) s += v * v;
                y[i] = s;
            }
            node.value = std::move(y);
            break;
        }
        case Op::LogSumExpRows:
        case Op::SoftmaxCrossEntropy: {
            const auto& x = arg(0);
            const std::size_t n = x.rows();
            const std::size_t c = x.cols();
            if (node.op == Op::SoftmaxCrossEntropy)
                FLOWDRO_REQUIRE(node.labels.size() == n, "softmax_cross_entropy: " + std::to_string(n) + " rows but " +
                                                             std::to_string(node.labels.size()) + " labels");
            DenseArray y({n, 1}, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                auto r = x.row(i);
                const double mx = *std::max_element(r.begin(), r.end());
                double s = 0;
                for (double v : r) s += std::exp(v - mx);
                double lse = mx + std::log(s);
                if (node.op == Op::SoftmaxCrossEntropy) {
                    const int lbl = node.labels[i];
                    FLOWDRO_REQUIRE(lbl >= 0 && static_cast<std::size_t>(lbl) < c,
                                    "softmax_cross_entropy: label out of range");
                    lse -= r[static_cast<std::size_t>(lbl)];
                }
                y[i] = lse;
            }
            node.value = std::move(y);
            break;
        }
        case Op::Input:
        case Op::Constant:
        case Op::Param:
            break;
    }
}

// ---- backward --------------------------------------------------------------

void Tape::backward(Var output) { backward(output, DenseArray::scalar(1.0)); }

void Tape::backward(Var output, const DenseArray& seed)
{
    FLOWDRO_REQUIRE(output.tape == this && output.id < nodes_.size(), "Tape::backward: foreign or invalid output");
    FLOWDRO_REQUIRE(evaluated_, "Tape::backward: forward values are missing (call eval first)");
    const auto& out_value = nodes_[output.id].value;
    if (seed.size() != out_value.size())
        throw ValidationError("Tape::backward: seed shape " + shape_string(seed.shape()) + " does not match output " +
                              shape_string(out_value.shape()));

    for (std::size_t id = 0; id <= output.id; ++id) nodes_[id].adjoint = DenseArray::zeros_like(nodes_[id].value);
    for (std::size_t id = output.id + 1; id < nodes_.size(); ++id) nodes_[id].adjoint = DenseArray();
    {
        auto& adj = nodes_[output.id].adjoint;
        for (std::size_t k = 0; k < seed.size(); ++k) adj[k] = seed[k];
    }

    for (std::size_t id = output.id + 1; id-- > 0;) {
        Node& node = nodes_[id];
        const DenseArray& g = node.adjoint;
        auto adj = [&](std::size_t i) -> DenseArray& { return nodes_[node.args[i]].adjoint; };
        auto val = [&](std::size_t i) -> const DenseArray& { return nodes_[node.args[i]].value; };
        switch (node.op) {
            case Op::Input:
            case Op::Constant:
                break;
            case Op::Param:
                node.store->accumulate_grad(node.param_index, g);
                break;
            case Op::Affine: {
                const auto& x = val(0);
                const auto& w = val(1);
                const std::size_t n = x.rows();
                const std::size_t k = x.cols();
                const std::size_t m = w.shape()[1];
                const bool timed = w.shape()[0] == k + 1;
                auto& gx = adj(0);
                auto& gw = adj(1);
                const double* gd = g.values().data();
                const double* xd = x.values().data();
                const double* wd = w.values().data();
                for (std::size_t i = 0; i < n; ++i) {
                    const double* gi = gd + i * m;
                    const double* xi = xd + i * k;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double* wp = wd + p * m;
                        double* gwp = gw.values().data() + p * m;
                        double acc = 0;
                        const double xv = xi[p];
                        for (std::size_t j = 0; j < m; ++j) {
                            acc += gi[j] * wp[j];
                            gwp[j] += xv * gi[j];
                        }
                        gx[i * k + p] += acc;
                    }
                }
                if (timed || node.flag) {
                    std::vector<double> colsum(m, 0.0);
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < m; ++j) colsum[j] += gd[i * m + j];
                    if (timed)
                        for (std::size_t j = 0; j < m; ++j) gw(k, j) += node.a * colsum[j];
                    if (node.flag) {
                        auto& gb = adj(2);
                        for (std::size_t j = 0; j < m; ++j) gb[j] += colsum[j];
                    }
                }
                break;
            }
            case Op::Softplus: {
                const auto& x = val(0);
                auto& gx = adj(0);
                for (std::size_t k = 0; k < x.size(); ++k) gx[k] += g[k] * kernel::sigmoid(node.a * x[k]);
                break;
            }
            case Op::Tanh: {
                auto& gx = adj(0);
                for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * (1.0 - node.value[k] * node.value[k]);
                break;
            }
            case Op::Relu: {
                const auto& x = val(0);
                auto& gx = adj(0);
                for (std::size_t k = 0; k < x.size(); ++k)
                    if (x[k] > 0) gx[k] += g[k];
                break;
            }
            case Op::Exp: {
                auto& gx = adj(0);
                for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * node.value[k];
                break;
            }
            case Op::Add: {
                // Both arguments may be the same node; accumulate sequentially.
                for (std::size_t k = 0; k < g.size(); ++k) adj(0)[k] += node.a * g[k];
                for (std::size_t k = 0; k < g.size(); ++k) adj(1)[k] += node.b * g[k];
                break;
            }
            case Op::Mul: {
                const auto& a = val(0);
                const auto& b = val(1);
                for (std::size_t k = 0; k < g.size(); ++k) adj(0)[k] += g[k] * b[k];
                for (std::size_t k = 0; k < g.size(); ++k) adj(1)[k] += g[k] * a[k];
                break;
            }
            case Op::Scale: {
                auto& gx = adj(0);
                for (std::size_t k = 0; k < g.size(); ++k) gx[k] += node.a * g[k];
                break;
            }
            case Op::Sum:
            case Op::Mean: {
                auto& gx = adj(0);
                double s = g[0];
                if (node.op == Op::Mean) s /= static_cast<double>(gx.size());
                for (auto& v : gx.values()) v += s;
                break;
            }
            case Op::SquaredNormRows: {
                const auto& x = val(0);
                auto& gx = adj(0);
                const std::size_t c = x.cols();
                for (std::size_t i = 0; i < x.rows(); ++i)
                    for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += 2.0 * x[i * c + j] * g[i];
                break;
            }
            case Op::LogSumExpRows:
            case Op::SoftmaxCrossEntropy: {
                const auto& x = val(0);
                auto& gx = adj(0);
                const std::size_t c = x.cols();
                for (std::size_t i = 0; i < x.rows(); ++i) {
                    auto r = x.row(i);
                    const double mx = *std::max_element(r.begin(), r.end());
                    double s = 0;
                    for (double v : r) s += std::exp(v - mx);
                    for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i] * std::exp(r[j] - mx) / s;
                    if (node.op == Op::SoftmaxCrossEntropy) gx[i * c + static_cast<std::size_t>(node.labels[i])] -= g[i];
                }
                break;
            }
        }
    }
    backward_done_ = true;
}

// ---- free-function primitives ---------------------------------------------------

namespace {

Tape& tape_of(Var v)
{
    FLOWDRO_REQUIRE(v.tape != nullptr, "Var is not attached to a tape");
    return *v.tape;
}

void same_tape(Var a, Var b)
{
    FLOWDRO_REQUIRE(a.tape == b.tape, "Vars belong to different tapes");
}

}  // namespace

Var affine(Var x, Var w)
{
    same_tape(x, w);
    return tape_of(x).record(Op::Affine, {x.id, w.id}, 0.0, 0.0, {}, false);
}

Var affine(Var x, Var w, Var bias)
{
    same_tape(x, w);
    same_tape(x, bias);
    return tape_of(x).record(Op::Affine, {x.id, w.id, bias.id}, 0.0, 0.0, {}, true);
}

Var affine_timed(Var x, Var w, Var bias, double time)
{
    same_tape(x, w);
    same_tape(x, bias);
    return tape_of(x).record(Op::Affine, {x.id, w.id, bias.id}, time, 0.0, {}, true);
}

Var softplus(Var x, double beta)
{
    FLOWDRO_REQUIRE(beta > 0, "softplus: beta must be positive");
    return tape_of(x).record(Op::Softplus, {x.id}, beta);
}

Var tanh(Var x) { return tape_of(x).record(Op::Tanh, {x.id}); }
Var relu(Var x) { return tape_of(x).record(Op::Relu, {x.id}); }
Var exp(Var x) { return tape_of(x).record(Op::Exp, {x.id}); }

Var add(Var a, Var b, double ca, double cb)
{
    same_tape(a, b);
    return tape_of(a).record(Op::Add, {a.id, b.id}, ca, cb);
}

Var sub(Var a, Var b) { return add(a, b, 1.0, -1.0); }

Var mul(Var a, Var b)
{
    same_tape(a, b);
    return tape_of(a).record(Op::Mul, {a.id, b.id});
}

Var scale(Var x, double factor, double shift) { return tape_of(x).record(Op::Scale, {x.id}, factor, shift); }
Var sum(Var x) { return tape_of(x).record(Op::Sum, {x.id}); }
Var mean(Var x) { return tape_of(x).record(Op::Mean, {x.id}); }
Var squared_norm_rows(Var x) { return tape_of(x).record(Op::SquaredNormRows, {x.id}); }
Var log_sum_exp_rows(Var x) { return tape_of(x).record(Op::LogSumExpRows, {x.id}); }

Var softmax_cross_entropy(Var logits, std::vector<int> labels)
{
    return tape_of(logits).record(Op::SoftmaxCrossEntropy, {logits.id}, 0.0, 0.0, std::move(labels));
}

}  // namespace flowdro::ad
