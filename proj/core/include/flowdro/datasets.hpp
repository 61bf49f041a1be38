#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "flowdro/measure.hpp"

namespace flowdro::data {

/// N(mean, diag(variances)); unlabeled.
struct GaussianSpec {
    std::vector<double> mean{0.0};
    std::vector<double> variances{1.0};
};

/// Component c drawn with probability weights[c]; the label is c. Stratified
/// sampling fixes the per-component counts at n * weights (largest remainder)
/// and emits components in order.
struct MixtureSpec {
    std::vector<std::vector<double>> means;
    std::vector<std::vector<double>> variances;
    std::vector<double> weights;
    bool stratified = false;
};

/// Balanced two-moons in 2D with isotropic Gaussian jitter; labels 0 and 1.
struct TwoMoonsSpec {
    double noise = 0.1;
};

/// Point CSV (see read_point_csv); `n` rows are subsampled when smaller.
struct CsvSpec {
    std::string path;
};

using DatasetSpec = std::variant<GaussianSpec, MixtureSpec, TwoMoonsSpec, CsvSpec>;

const char* dataset_kind(const DatasetSpec& spec);
void validate(const DatasetSpec& spec);

EmpiricalMeasure generate_dataset(const DatasetSpec& spec, std::size_t n, std::uint64_t seed);

/// n samples each from N(0, 1) (label 0) and N(2, 1.2) (label 1); 1.2 is the variance.
EmpiricalMeasure two_sample_1d(std::size_t n_per_class, std::uint64_t seed);

}  // namespace flowdro::data
