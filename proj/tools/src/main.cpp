#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "flowdro/error.hpp"
#include "flowdro/format.hpp"
#include "flowdro_app/config.hpp"
#include "flowdro_app/experiments.hpp"

namespace {

enum Exit { kOk = 0, kValidation = 1, kNumerical = 2, kAcceptance = 3 };

int run(const std::string& experiment, const std::string& config_path, std::optional<std::uint64_t> seed,
        const std::string& out)
{
    using namespace flowdro::app;
    const auto kind = parse_kind(experiment);
    ExperimentConfig cfg;
    if (!config_path.empty()) {
        cfg = load_config(config_path);
        if (cfg.kind != kind)
            throw flowdro::ValidationError("config: experiment: file declares '" + std::string(kind_name(cfg.kind)) +
                                           "' but the command is '" + experiment + "'");
    } else if (kind == ExperimentKind::Verify) {
        cfg = default_config(kind);
    } else {
        throw flowdro::ValidationError("--config is required for experiment '" + experiment + "'");
    }
    if (seed) cfg.seed = *seed;
    if (!out.empty()) cfg.output_dir = out;

    const auto report = run_experiment(cfg, cfg.output_dir);
    for (const auto& m : report.metrics) std::cout << m.name << " = " << flowdro::format_double(m.value) << '\n';
    for (const auto& c : report.checks)
        std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << (c.detail.empty() ? "" : " (" + c.detail + ")")
                  << '\n';
    std::cout << "report: " << (std::filesystem::path(cfg.output_dir) / "report.json").string() << '\n';
    return report.passed() ? kOk : kAcceptance;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"flowdro: worst-case distributions in Wasserstein-2 balls via flow transport maps"};
    std::string experiment, config, out;
    std::optional<std::uint64_t> seed;
    app.add_option("experiment", experiment, "lfd | minmax | wdro-lp | privacy | verify")
        ->required()
        ->check(CLI::IsMember({"lfd", "minmax", "wdro-lp", "privacy", "verify"}));
    app.add_option("--config,-c", config, "experiment configuration (JSON)")->check(CLI::ExistingFile);
    app.add_option("--seed,-s", seed, "override the configured seed");
    app.add_option("--out,-o", out, "output directory (overrides output_dir)");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kValidation;
    }
    try {
        return run(experiment, config, seed, out);
    } catch (const flowdro::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kValidation;
    } catch (const flowdro::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kValidation;
    }
}
