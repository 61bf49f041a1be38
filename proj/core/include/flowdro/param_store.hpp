#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "flowdro/dense_array.hpp"

namespace flowdro::ad {

struct Parameter {
    std::string name;
    DenseArray value;
    DenseArray grad;
    // Adam moments; empty until the first adam_step.
    DenseArray first_moment;
    DenseArray second_moment;
};

/// Named trainable arrays with matching gradient buffers and optimizer state.
class ParamStore {
public:
    /// Registers a parameter; the name must be unique.
    std::size_t add(std::string name, DenseArray init);

    bool contains(const std::string& name) const;
    std::size_t index(const std::string& name) const;
    std::size_t size() const { return params_.size(); }
    bool empty() const { return params_.empty(); }
    /// Total number of scalar entries across all parameters.
    std::size_t scalar_count() const;

    Parameter& at(std::size_t i) { return params_.at(i); }
    const Parameter& at(std::size_t i) const { return params_.at(i); }
    DenseArray& value(const std::string& name) { return params_[index(name)].value; }
    const DenseArray& value(const std::string& name) const { return params_[index(name)].value; }
    DenseArray& grad(const std::string& name) { return params_[index(name)].grad; }

    std::vector<Parameter>& params() { return params_; }
    const std::vector<Parameter>& params() const { return params_; }

    void accumulate_grad(std::size_t i, const DenseArray& g);
    void zero_grad();
    /// Set after backward accumulation (or manually, when gradients are written by hand).
    bool has_gradients() const { return grads_ready_; }
    void mark_gradients_ready() { grads_ready_ = true; }

    std::int64_t step() const { return step_; }
    void set_step(std::int64_t s) { step_ = s; }
    void increment_step() { ++step_; }

    /// Flattened copy of every parameter, in registration order.
    std::vector<double> flat_values() const;
    std::vector<double> flat_grads() const;
    void set_flat_values(const std::vector<double>& flat);

    friend bool operator==(const ParamStore&, const ParamStore&);

private:
    std::vector<Parameter> params_;
    std::int64_t step_ = 0;
    bool grads_ready_ = false;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One Adam update with bias correction. Zeroes gradients afterwards.
/// Throws ValidationError if no gradients have been accumulated.
void adam_step(ParamStore& store, const AdamConfig& cfg);

/// Plain gradient descent: p -= lr * g. Zeroes gradients afterwards.
void sgd_step(ParamStore& store, double lr);

/// Checkpoint: versioned JSON with param_names, shapes, nested values printed
/// with 17 significant digits, and optional Adam state.
void save_checkpoint(const ParamStore& store, std::ostream& out, bool with_optimizer_state = true);
void save_checkpoint(const ParamStore& store, const std::string& path, bool with_optimizer_state = true);
ParamStore load_checkpoint(std::istream& in);
ParamStore load_checkpoint(const std::string& path);

inline constexpr int kCheckpointFormatVersion = 1;

}  // namespace flowdro::ad
