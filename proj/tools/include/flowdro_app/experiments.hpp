#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "flowdro_app/config.hpp"

namespace flowdro::app {

struct Metric {
    std::string name;
    double value = 0.0;
};

/// Numeric table written as CSV with the given header.
struct Table {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

/// Built-in acceptance check evaluated at the end of a run.
struct Check {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct InputDigest {
    std::string name;
    std::string sha1;
};

struct RunReport {
    ExperimentConfig config;
    std::vector<InputDigest> inputs;
    /// Git-style blob hash over the input digests.
    std::string input_hash;
    std::vector<Metric> metrics;
    /// Figure panels (see emit_figure_data).
    std::vector<Table> figures;
    /// Training curves and other per-step tables.
    std::vector<Table> tables;
    std::vector<std::pair<std::string, double>> timings;
    std::vector<std::string> artifacts;
    std::vector<Check> checks;

    std::optional<double> metric(const std::string& name) const;
    /// Throws ValidationError naming the metric when absent.
    double require_metric(const std::string& name) const;
    bool passed() const;
};

/// Git blob SHA-1 ("blob <len>\0" + content), hex encoded.
std::string git_blob_sha1(const std::string& content);

/// Runs the configured experiment. With a non-empty `out_dir` the report,
/// metric CSVs, figure CSVs and checkpoints are written there.
RunReport run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir = {});

/// Names of the figure panels an experiment is expected to produce.
std::vector<std::string> expected_figures(const ExperimentConfig& cfg);

/// One CSV per figure panel in `dir`; throws ValidationError naming the first
/// missing series.
std::vector<std::filesystem::path> emit_figure_data(const RunReport& report, const std::filesystem::path& dir);

void write_table_csv(const Table& t, const std::filesystem::path& path);
/// Columns metric,value in insertion order.
void write_metrics_csv(const RunReport& report, const std::filesystem::path& path);
std::string report_json(const RunReport& report);

}  // namespace flowdro::app
