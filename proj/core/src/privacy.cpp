#include "flowdro/privacy.hpp"

#include <cmath>
#include <numbers>
#include <ostream>

#include <json.hpp>

#include "flowdro/error.hpp"
#include "flowdro/format.hpp"
#include "flowdro/log.hpp"
#include "flowdro/ot.hpp"
#include "flowdro/rng.hpp"

namespace flowdro::privacy {

using ad::DenseArray;

const char* mechanism_name(MechanismKind k)
{
    switch (k) {
        case MechanismKind::DPM: return "dpm";
        case MechanismKind::APMGaussian: return "apm-gaussian";
        case MechanismKind::APMLaplace: return "apm-laplace";
    }
    return "?";
}

const char* query_name(QueryKind k) { return k == QueryKind::Point ? "point" : "missing-item"; }

double unit_noise_norm(MechanismKind kind, std::size_t dim, std::size_t mc_samples, std::uint64_t seed)
{
    FLOWDRO_REQUIRE(dim >= 1, "unit_noise_norm: dimension must be positive");
    if (kind == MechanismKind::APMGaussian) {
        const double d = static_cast<double>(dim);
        return std::sqrt(2.0) * std::exp(std::lgamma((d + 1.0) / 2.0) - std::lgamma(d / 2.0));
    }
    FLOWDRO_REQUIRE(kind == MechanismKind::APMLaplace, "unit_noise_norm: DPM has no noise scale");
    if (dim == 1) return 1.0;
    FLOWDRO_REQUIRE(mc_samples >= 1000, "unit_noise_norm: too few Monte-Carlo samples");
    Rng rng(seed);
    double acc = 0;
    for (std::size_t i = 0; i < mc_samples; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < dim; ++j) {
            const double v = rng.laplace(1.0);
            s += v * v;
        }
        acc += std::sqrt(s);
    }
    return acc / static_cast<double>(mc_samples);
}

double calibrate_apm(MechanismKind kind, double epsilon, std::size_t dim, std::size_t mc_samples, std::uint64_t seed)
{
    FLOWDRO_REQUIRE(epsilon >= 0 && std::isfinite(epsilon), "calibrate_apm: epsilon must be nonnegative");
    if (epsilon == 0) return 0.0;
    return epsilon / unit_noise_norm(kind, dim, mc_samples, seed);
}

Mechanism Mechanism::gaussian(double epsilon, std::size_t dim, std::uint64_t seed)
{
    Mechanism m;
    m.kind = MechanismKind::APMGaussian;
    m.scale = calibrate_apm(m.kind, epsilon, dim, 200000, seed);
    m.budget = epsilon;
    m.dim = dim;
    return m;
}

Mechanism Mechanism::laplace(double epsilon, std::size_t dim, std::uint64_t seed)
{
    Mechanism m;
    m.kind = MechanismKind::APMLaplace;
    m.scale = calibrate_apm(m.kind, epsilon, dim, 200000, seed);
    m.budget = epsilon;
    m.dim = dim;
    return m;
}

Mechanism Mechanism::dpm(dro::LabeledTransport transport, const EmpiricalMeasure& reference)
{
    Mechanism m;
    m.kind = MechanismKind::DPM;
    m.dim = reference.dim();
    const auto mapped = transport.apply(reference);
    m.budget = mean_displacement(reference, mapped.points());
    m.transport = std::move(transport);
    return m;
}

namespace {

void add_noise(const Mechanism& m, std::span<double> x, Rng& rng)
{
    if (m.scale == 0) return;
    for (double& v : x) v += m.kind == MechanismKind::APMGaussian ? m.scale * rng.normal() : rng.laplace(m.scale);
}

}  // namespace

std::vector<double> apply_mechanism(const Mechanism& m, std::span<const double> query, int label, std::uint64_t seed)
{
    FLOWDRO_REQUIRE(query.size() == m.dim, "apply_mechanism: query dimension " + std::to_string(query.size()) +
                                               " does not match mechanism dimension " + std::to_string(m.dim));
    std::vector<double> out(query.begin(), query.end());
    if (m.kind == MechanismKind::DPM) {
        const auto& chain = m.transport.chain_for(label);
        if (chain.empty()) return out;
        const auto y = flow::push_points(chain, DenseArray({1, m.dim}, out));
        return {y.values().begin(), y.values().end()};
    }
    Rng rng(seed);
    add_noise(m, out, rng);
    return out;
}

EmpiricalMeasure apply_mechanism(const Mechanism& m, const EmpiricalMeasure& queries, std::uint64_t seed)
{
    FLOWDRO_REQUIRE(queries.dim() == m.dim, "apply_mechanism: query dimension does not match mechanism");
    if (m.kind == MechanismKind::DPM) return m.transport.apply(queries);
    DenseArray out = queries.points();
    const Rng root(seed);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        Rng rng = root.split(i);
        add_noise(m, std::span<double>(&out(i, 0), out.cols()), rng);
    }
    return queries.with_points(std::move(out));
}

std::vector<double> missing_item_query(const DenseArray& representatives, std::size_t classes)
{
    FLOWDRO_REQUIRE(classes >= 2, "missing_item_query: need at least two classes");
    FLOWDRO_REQUIRE(representatives.rank() == 2 && representatives.rows() == classes - 1,
                    "missing_item_query: expected exactly " + std::to_string(classes - 1) + " representatives, got " +
                        std::to_string(representatives.rank() == 2 ? representatives.rows() : 0));
    std::vector<double> mean(representatives.cols(), 0.0);
    for (std::size_t i = 0; i < representatives.rows(); ++i)
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += representatives(i, j);
    for (double& v : mean) v /= static_cast<double>(representatives.rows());
    return mean;
}

EmpiricalMeasure missing_item_dataset(const EmpiricalMeasure& data, std::size_t classes, std::size_t count,
                                      std::uint64_t seed)
{
    FLOWDRO_REQUIRE(data.has_labels(), "missing_item_dataset: labeled data required");
    FLOWDRO_REQUIRE(count >= 1, "missing_item_dataset: count must be positive");
    std::vector<std::vector<std::size_t>> by_class(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        by_class[c] = data.indices_with_label(static_cast<int>(c));
        FLOWDRO_REQUIRE(!by_class[c].empty(),
                        "missing_item_dataset: class " + std::to_string(c) + " absent from the reference measure");
    }
    Rng rng(seed);
    const std::size_t d = data.dim();
    std::vector<double> flat;
    flat.reserve(count * d);
    std::vector<int> labels(count);
    DenseArray reps({classes - 1, d});
    for (std::size_t q = 0; q < count; ++q) {
        const std::size_t missing = q % classes;
        std::size_t r = 0;
        for (std::size_t c = 0; c < classes; ++c) {
            if (c == missing) continue;
            const auto i = by_class[c][rng.uniform_index(by_class[c].size())];
            std::copy_n(data.point(i).begin(), d, &reps(r++, 0));
        }
        const auto mean = missing_item_query(reps, classes);
        flat.insert(flat.end(), mean.begin(), mean.end());
        labels[q] = static_cast<int>(missing);
    }
    return EmpiricalMeasure::from_rows(d, std::move(flat), std::move(labels));
}

EmpiricalMeasure build_queries(const QueryTask& task, const EmpiricalMeasure& test, std::uint64_t seed)
{
    FLOWDRO_REQUIRE(test.has_labels(), "build_queries: labeled test measure required");
    if (task.kind == QueryKind::Point) return test;
    return missing_item_dataset(test, task.classes, test.size(), seed);
}

ErrorReport error_rates_on(const risk::MLPClassifier& classifier, const Mechanism& m, const EmpiricalMeasure& queries,
                           std::size_t classes, std::uint64_t seed)
{
    FLOWDRO_REQUIRE(classifier.classes() == classes,
                    "error_rates: classifier has " + std::to_string(classifier.classes()) + " classes, task has " +
                        std::to_string(classes));
    FLOWDRO_REQUIRE(queries.has_labels(), "error_rates: labeled queries required");
    const auto perturbed = apply_mechanism(m, queries, seed);
    const auto pred = classifier.predict(perturbed.points());
    const auto clean = classifier.predict(queries.points());
    ErrorReport r;
    r.budget = m.budget;
    r.measured_displacement = mean_displacement(queries, perturbed.points());
    const std::size_t n = queries.size();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += clean[i] == queries.label(i);
    r.clean_accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(n);
    std::size_t used = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        const int k = static_cast<int>(c);
        std::size_t pos = 0, neg = 0, false_accept = 0, false_reject = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (queries.label(i) == k) {
                ++pos;
                false_reject += pred[i] != k;
            } else {
                ++neg;
                false_accept += pred[i] == k;
            }
        }
        r.classes.push_back(k);
        r.counts.push_back(pos);
        const bool present = pos > 0 && neg > 0;
        r.present.push_back(present);
        if (!present) {
            log::warn("error_rates: class " + std::to_string(k) + " absent; rates undefined and excluded");
            r.alpha.push_back(std::nan(""));
            r.beta.push_back(std::nan(""));
            continue;
        }
        r.alpha.push_back(static_cast<double>(false_accept) / static_cast<double>(neg));
        r.beta.push_back(static_cast<double>(false_reject) / static_cast<double>(pos));
        r.alpha_avg += r.alpha.back();
        r.beta_avg += r.beta.back();
        ++used;
    }
    if (used == 0) throw ValidationError("error_rates: no class has defined rates");
    r.alpha_avg /= static_cast<double>(used);
    r.beta_avg /= static_cast<double>(used);
    return r;
}

ErrorReport error_rates(const risk::MLPClassifier& classifier, const Mechanism& m, const QueryTask& task,
                        const EmpiricalMeasure& test, std::uint64_t seed)
{
    const auto queries = build_queries(task, test, seed);
    return error_rates_on(classifier, m, queries, task.classes, Rng(seed).split(7).next_u64());
}

void write_error_csv(const ErrorReport& r, std::ostream& out)
{
    out << "class,alpha,beta\n";
    for (std::size_t i = 0; i < r.classes.size(); ++i)
        out << r.classes[i] << ',' << format_double(r.alpha[i]) << ',' << format_double(r.beta[i]) << '\n';
    out << "average," << format_double(r.alpha_avg) << ',' << format_double(r.beta_avg) << '\n';
    out << "budget," << format_double(r.budget) << ',' << format_double(r.measured_displacement) << '\n';
}

std::string error_json(const ErrorReport& r)
{
    nlohmann::ordered_json j;
    auto rows = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < r.classes.size(); ++i) {
        nlohmann::ordered_json row;
        row["class"] = r.classes[i];
        row["count"] = r.counts[i];
        if (r.present[i]) {
            row["alpha"] = r.alpha[i];
            row["beta"] = r.beta[i];
        } else {
            row["alpha"] = nullptr;
            row["beta"] = nullptr;
        }
        rows.push_back(row);
    }
    j["per_class"] = rows;
    j["alpha_avg"] = r.alpha_avg;
    j["beta_avg"] = r.beta_avg;
    j["budget"] = r.budget;
    j["measured_displacement"] = r.measured_displacement;
    j["clean_accuracy"] = r.clean_accuracy;
    return j.dump(2);
}

}  // namespace flowdro::privacy
