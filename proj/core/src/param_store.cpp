#include "flowdro/param_store.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "flowdro/error.hpp"
#include "flowdro/format.hpp"

namespace flowdro::ad {

std::size_t ParamStore::add(std::string name, DenseArray init)
{
    FLOWDRO_REQUIRE(!contains(name), "ParamStore: duplicate parameter '" + name + "'");
    Parameter p;
    p.name = std::move(name);
    p.grad = DenseArray::zeros_like(init);
    p.value = std::move(init);
    params_.push_back(std::move(p));
    return params_.size() - 1;
}

bool ParamStore::contains(const std::string& name) const
{
    for (const auto& p : params_)
        if (p.name == name) return true;
    return false;
}

std::size_t ParamStore::index(const std::string& name) const
{
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (params_[i].name == name) return i;
    throw ValidationError("ParamStore: unknown parameter '" + name + "'");
}

std::size_t ParamStore::scalar_count() const
{
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

void ParamStore::accumulate_grad(std::size_t i, const DenseArray& g)
{
    auto& p = params_.at(i);
    if (!p.grad.same_shape(g)) {
        throw ValidationError("ParamStore: gradient shape " + shape_string(g.shape()) + " for '" + p.name +
                              "' expected " + shape_string(p.value.shape()));
    }
    for (std::size_t k = 0; k < g.size(); ++k) p.grad[k] += g[k];
    grads_ready_ = true;
}

void ParamStore::zero_grad()
{
    for (auto& p : params_) p.grad.fill(0.0);
    grads_ready_ = false;
}

std::vector<double> ParamStore::flat_values() const
{
    std::vector<double> out;
    out.reserve(scalar_count());
    for (const auto& p : params_) out.insert(out.end(), p.value.values().begin(), p.value.values().end());
    return out;
}

std::vector<double> ParamStore::flat_grads() const
{
    std::vector<double> out;
    out.reserve(scalar_count());
    for (const auto& p : params_) out.insert(out.end(), p.grad.values().begin(), p.grad.values().end());
    return out;
}

void ParamStore::set_flat_values(const std::vector<double>& flat)
{
    FLOWDRO_REQUIRE(flat.size() == scalar_count(), "ParamStore::set_flat_values: size mismatch");
    std::size_t k = 0;
    for (auto& p : params_)
        for (auto& v : p.value.values()) v = flat[k++];
}

bool operator==(const ParamStore& a, const ParamStore& b)
{
    if (a.params_.size() != b.params_.size() || a.step_ != b.step_) return false;
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
        const auto& p = a.params_[i];
        const auto& q = b.params_[i];
        if (p.name != q.name || p.value != q.value || p.first_moment != q.first_moment ||
            p.second_moment != q.second_moment)
            return false;
    }
    return true;
}

void adam_step(ParamStore& store, const AdamConfig& cfg)
{
    FLOWDRO_REQUIRE(store.has_gradients(), "adam_step: no gradients accumulated");
    FLOWDRO_REQUIRE(cfg.lr > 0 && cfg.eps > 0, "adam_step: lr and eps must be positive");
    store.increment_step();
    const auto t = static_cast<double>(store.step());
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (auto& p : store.params()) {
        if (p.first_moment.empty() && !p.value.empty()) {
            p.first_moment = DenseArray::zeros_like(p.value);
            p.second_moment = DenseArray::zeros_like(p.value);
        }
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            const double g = p.grad[k];
            p.first_moment[k] = cfg.beta1 * p.first_moment[k] + (1.0 - cfg.beta1) * g;
            p.second_moment[k] = cfg.beta2 * p.second_moment[k] + (1.0 - cfg.beta2) * g * g;
            const double mhat = p.first_moment[k] / c1;
            const double vhat = p.second_moment[k] / c2;
            p.value[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
    store.zero_grad();
}

void sgd_step(ParamStore& store, double lr)
{
    FLOWDRO_REQUIRE(store.has_gradients(), "sgd_step: no gradients accumulated");
    store.increment_step();
    for (auto& p : store.params())
        for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] -= lr * p.grad[k];
    store.zero_grad();
}

// ---- checkpoint -----------------------------------------------------------

namespace {

void write_nested(std::ostream& out, const DenseArray& a)
{
    const auto& shape = a.shape();
    if (shape.empty()) {
        out << format_double(a[0]);
        return;
    }
    // Recursive descent over the row-major layout.
    std::vector<std::size_t> stride(shape.size(), 1);
    for (std::size_t d = shape.size() - 1; d > 0; --d) stride[d - 1] = stride[d] * shape[d];
    auto rec = [&](auto&& self, std::size_t dim, std::size_t offset) -> void {
        out << '[';
        for (std::size_t i = 0; i < shape[dim]; ++i) {
            if (i) out << ',';
            if (dim + 1 == shape.size())
                out << format_double(a[offset + i]);
            else
                self(self, dim + 1, offset + i * stride[dim]);
        }
        out << ']';
    };
    rec(rec, 0, 0);
}

void flatten_into(const nlohmann::json& j, std::vector<double>& out)
{
    if (j.is_array()) {
        for (const auto& e : j) flatten_into(e, out);
    } else if (j.is_number()) {
        out.push_back(j.get<double>());
    } else {
        throw ValidationError("checkpoint: non-numeric entry in values");
    }
}

DenseArray read_array(const nlohmann::json& values, const std::vector<std::size_t>& shape, const std::string& what)
{
    std::vector<double> flat;
    flatten_into(values, flat);
    try {
        return DenseArray(shape, std::move(flat));
    } catch (const ValidationError& e) {
        throw ValidationError("checkpoint: " + what + ": " + e.what());
    }
}

}  // namespace

void save_checkpoint(const ParamStore& store, std::ostream& out, bool with_optimizer_state)
{
    nlohmann::json names = nlohmann::json::array();
    nlohmann::json shapes = nlohmann::json::array();
    for (const auto& p : store.params()) {
        names.push_back(p.name);
        shapes.push_back(p.value.shape());
    }
    out << "{\"format_version\":" << kCheckpointFormatVersion << ",\n";
    out << "\"param_names\":" << names.dump() << ",\n";
    out << "\"shapes\":" << shapes.dump() << ",\n";
    out << "\"values\":[";
    for (std::size_t i = 0; i < store.size(); ++i) {
        if (i) out << ",\n";
        write_nested(out, store.at(i).value);
    }
    out << "]";
    const bool has_state = with_optimizer_state && !store.empty() && !store.at(0).first_moment.empty();
    if (has_state) {
        out << ",\n\"optimizer_state\":{\"kind\":\"adam\",\"step\":" << store.step() << ",\"first_moment\":[";
        for (std::size_t i = 0; i < store.size(); ++i) {
            if (i) out << ",";
            write_nested(out, store.at(i).first_moment);
        }
        out << "],\"second_moment\":[";
        for (std::size_t i = 0; i < store.size(); ++i) {
            if (i) out << ",";
            write_nested(out, store.at(i).second_moment);
        }
        out << "]}";
    }
    out << "}\n";
}

void save_checkpoint(const ParamStore& store, const std::string& path, bool with_optimizer_state)
{
    std::ofstream out(path);
    if (!out) throw ValidationError("checkpoint: cannot open '" + path + "' for writing");
    save_checkpoint(store, out, with_optimizer_state);
}

ParamStore load_checkpoint(std::istream& in)
{
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("checkpoint: parse error: ") + e.what());
    }
    if (!doc.contains("format_version") || doc["format_version"].get<int>() != kCheckpointFormatVersion)
        throw ValidationError("checkpoint: unsupported or missing format_version");
    const auto names = doc.at("param_names").get<std::vector<std::string>>();
    const auto shapes = doc.at("shapes").get<std::vector<std::vector<std::size_t>>>();
    const auto& values = doc.at("values");
    FLOWDRO_REQUIRE(names.size() == shapes.size() && values.size() == names.size(),
                    "checkpoint: param_names, shapes and values disagree in length");
    ParamStore store;
    for (std::size_t i = 0; i < names.size(); ++i) store.add(names[i], read_array(values[i], shapes[i], names[i]));
    if (doc.contains("optimizer_state")) {
        const auto& st = doc["optimizer_state"];
        store.set_step(st.at("step").get<std::int64_t>());
        const auto& m = st.at("first_moment");
        const auto& v = st.at("second_moment");
        FLOWDRO_REQUIRE(m.size() == names.size() && v.size() == names.size(),
                        "checkpoint: optimizer state length mismatch");
        for (std::size_t i = 0; i < names.size(); ++i) {
            store.at(i).first_moment = read_array(m[i], shapes[i], names[i] + " first_moment");
            store.at(i).second_moment = read_array(v[i], shapes[i], names[i] + " second_moment");
        }
    }
    return store;
}

ParamStore load_checkpoint(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ValidationError("checkpoint: cannot open '" + path + "'");
    return load_checkpoint(in);
}

}  // namespace flowdro::ad
