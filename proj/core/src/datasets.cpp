#include "flowdro/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "flowdro/error.hpp"
#include "flowdro/rng.hpp"

namespace flowdro::data {

const char* dataset_kind(const DatasetSpec& spec)
{
    static constexpr const char* names[] = {"gaussian", "gaussian-mixture", "two-moons", "csv"};
    return names[spec.index()];
}

void validate(const DatasetSpec& spec)
{
    if (const auto* g = std::get_if<GaussianSpec>(&spec)) {
        FLOWDRO_REQUIRE(!g->mean.empty(), "gaussian: mean must be nonempty");
        FLOWDRO_REQUIRE(g->mean.size() == g->variances.size(), "gaussian: mean and variances differ in length");
        for (double v : g->variances) FLOWDRO_REQUIRE(v >= 0 && std::isfinite(v), "gaussian: variances must be >= 0");
    } else if (const auto* m = std::get_if<MixtureSpec>(&spec)) {
        FLOWDRO_REQUIRE(!m->means.empty(), "gaussian-mixture: at least one component required");
        FLOWDRO_REQUIRE(m->means.size() == m->variances.size() && m->means.size() == m->weights.size(),
                        "gaussian-mixture: means, variances and weights differ in length");
        double total = 0;
        for (std::size_t c = 0; c < m->means.size(); ++c) {
            FLOWDRO_REQUIRE(m->means[c].size() == m->means[0].size() && !m->means[c].empty(),
                            "gaussian-mixture: components differ in dimension");
            FLOWDRO_REQUIRE(m->variances[c].size() == m->means[c].size(),
                            "gaussian-mixture: variances[" + std::to_string(c) + "] has wrong length");
            for (double v : m->variances[c]) FLOWDRO_REQUIRE(v >= 0, "gaussian-mixture: variances must be >= 0");
            FLOWDRO_REQUIRE(m->weights[c] >= 0, "gaussian-mixture: weights must be >= 0");
            total += m->weights[c];
        }
        FLOWDRO_REQUIRE(total > 0, "gaussian-mixture: weights sum to zero");
    } else if (const auto* t = std::get_if<TwoMoonsSpec>(&spec)) {
        FLOWDRO_REQUIRE(t->noise >= 0, "two-moons: noise must be >= 0");
    } else {
        FLOWDRO_REQUIRE(!std::get<CsvSpec>(spec).path.empty(), "csv: path must be nonempty");
    }
}

namespace {

EmpiricalMeasure two_moons(const TwoMoonsSpec& s, std::size_t n, Rng& rng)
{
    const std::size_t n0 = (n + 1) / 2;
    std::vector<double> flat(2 * n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const bool upper = i < n0;
        const std::size_t k = upper ? i : i - n0;
        const std::size_t count = upper ? n0 : n - n0;
        const double theta = count > 1 ? std::numbers::pi * static_cast<double>(k) / static_cast<double>(count - 1) : 0.0;
        double x = upper ? std::cos(theta) : 1.0 - std::cos(theta);
        double y = upper ? std::sin(theta) : 0.5 - std::sin(theta);
        flat[2 * i] = x + s.noise * rng.normal();
        flat[2 * i + 1] = y + s.noise * rng.normal();
        labels[i] = upper ? 0 : 1;
    }
    return EmpiricalMeasure::from_rows(2, std::move(flat), std::move(labels));
}

/// Component index per sample, counts by largest remainder, in component order.
std::vector<std::size_t> stratified_components(const std::vector<double>& weights, std::size_t n)
{
    double total = 0;
    for (double w : weights) total += w;
    std::vector<std::size_t> counts(weights.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < weights.size(); ++c) {
        const double exact = static_cast<double>(n) * weights[c] / total;
        counts[c] = static_cast<std::size_t>(std::floor(exact));
        assigned += counts[c];
        remainders.emplace_back(-(exact - std::floor(exact)), c);
    }
    std::sort(remainders.begin(), remainders.end());
    for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++counts[remainders[r % remainders.size()].second];
    std::vector<std::size_t> order;
    order.reserve(n);
    for (std::size_t c = 0; c < counts.size(); ++c) order.insert(order.end(), counts[c], c);
    return order;
}

}  // namespace

EmpiricalMeasure generate_dataset(const DatasetSpec& spec, std::size_t n, std::uint64_t seed)
{
    validate(spec);
    FLOWDRO_REQUIRE(n >= 1, "generate_dataset: n must be positive");
    Rng rng(seed);
    if (const auto* g = std::get_if<GaussianSpec>(&spec)) return DiagGaussian(g->mean, g->variances).sample(n, rng);
    if (const auto* m = std::get_if<MixtureSpec>(&spec)) {
        const std::size_t d = m->means[0].size();
        std::vector<double> flat(n * d);
        std::vector<int> labels(n);
        std::vector<std::size_t> order;
        if (m->stratified) order = stratified_components(m->weights, n);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = m->stratified ? order[i] : rng.categorical(m->weights);
            labels[i] = static_cast<int>(c);
            for (std::size_t j = 0; j < d; ++j)
                flat[i * d + j] = m->means[c][j] + std::sqrt(m->variances[c][j]) * rng.normal();
        }
        return EmpiricalMeasure::from_rows(d, std::move(flat), std::move(labels));
    }
    if (const auto* t = std::get_if<TwoMoonsSpec>(&spec)) return two_moons(*t, n, rng);
    auto data = read_point_csv(std::get<CsvSpec>(spec).path);
    if (data.size() > n) return subsample(data, n, rng);
    return data;
}

EmpiricalMeasure two_sample_1d(std::size_t n_per_class, std::uint64_t seed)
{
    MixtureSpec spec{{{0.0}, {2.0}}, {{1.0}, {1.2}}, {0.5, 0.5}};
    FLOWDRO_REQUIRE(n_per_class >= 1, "two_sample_1d: n must be positive");
    Rng rng(seed);
    std::vector<double> flat(2 * n_per_class);
    std::vector<int> labels(2 * n_per_class);
    for (std::size_t i = 0; i < 2 * n_per_class; ++i) {
        const int c = i < n_per_class ? 0 : 1;
        labels[i] = c;
        flat[i] = spec.means[c][0] + std::sqrt(spec.variances[c][0]) * rng.normal();
    }
    return EmpiricalMeasure::from_rows(1, std::move(flat), std::move(labels));
}

}  // namespace flowdro::data
