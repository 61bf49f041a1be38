#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "flowdro/datasets.hpp"
#include "flowdro/dro.hpp"
#include "flowdro/risk.hpp"

namespace flowdro::app {

enum class ExperimentKind { Lfd, MinMax, WdroLp, Privacy, Verify };

const char* kind_name(ExperimentKind k);
ExperimentKind parse_kind(const std::string& s);

struct DatasetConfig {
    data::DatasetSpec spec = data::GaussianSpec{{0.0, 0.0}, {1.0, 1.0}};
    std::size_t n = 512;
};

struct ClassifierConfig {
    std::vector<std::size_t> hidden{32, 32};
    ad::Activation activation = ad::Activation::Softplus;
    double beta = 20.0;
    int epochs = 200;
    double lr = 1e-2;
    std::size_t batch_size = 0;
};

enum class LfdTarget { Potential, Classifier, Hypothesis };

struct LfdSection {
    LfdTarget target = LfdTarget::Potential;
    /// quadratic | linear
    std::string potential = "quadratic";
    std::vector<double> center;
    double scale = 1.0;
    std::vector<double> slope;
    dro::LFDTrainConfig train;
    /// Hypothesis target: detector risk and per-class radius calibration.
    risk::GeneratingFunction generating = risk::GeneratingFunction::Logistic;
    double target_radius = 0.1;
    double calibration_tol = 0.005;
    double gamma_lo = 1e-3;
    double gamma_hi = 10.0;
    std::size_t histogram_bins = 60;
    /// Classifier target: PGD comparison at matched budget.
    int pgd_steps = 40;
};

struct MinMaxSection {
    dro::MinMaxConfig frm;
    std::vector<double> attack_fractions{0.0, 0.1, 0.2, 0.3, 0.4};
    int pgd_steps = 40;
    std::size_t test_n = 1000;
};

struct WdroSection {
    /// Instance JSON; empty generates one from the 1D two-sample setup.
    std::string instance;
    std::size_t n_per_class = 10;
    double eps1 = 0.1;
    double eps2 = 0.1;
    bool squared_cost = false;
    double bandwidth = 0.1;
    std::size_t samples = 1000;
};

struct PrivacySection {
    std::size_t classes = 4;
    dro::LFDTrainConfig dpm;
    /// When set, the DPM gamma is calibrated per task so that the mean
    /// displacement on the training queries equals this fraction of their
    /// mean norm; otherwise dpm.gamma is used as given.
    std::optional<double> budget_fraction;
    double gamma_lo = 1e-3;
    double gamma_hi = 20.0;
    std::size_t test_n = 10000;
};

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::Verify;
    std::uint64_t seed = 0;
    std::string output_dir = "flowdro-out";
    DatasetConfig dataset;
    ClassifierConfig classifier;
    LfdSection lfd;
    MinMaxSection minmax;
    WdroSection wdro;
    PrivacySection privacy;
};

/// Parses and validates; errors name the offending field path. Relative file
/// paths resolve against `base_dir` and must exist.
ExperimentConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = ".");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Full JSON with defaults filled in (sections relevant to the kind only).
std::string serialize_config(const ExperimentConfig& cfg);

/// Desk-scale defaults for each experiment kind.
ExperimentConfig default_config(ExperimentKind kind);

}  // namespace flowdro::app
