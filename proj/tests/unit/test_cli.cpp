#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "doctest.h"
#include "flowdro/datasets.hpp"
#include "flowdro/error.hpp"
#include "flowdro_app/config.hpp"
#include "flowdro_app/experiments.hpp"

using namespace flowdro;
using namespace flowdro::app;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name)
{
    auto dir = fs::temp_directory_path() / ("flowdro_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run_cli(const std::string& args)
{
    const std::string cmd = std::string(FLOWDRO_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config round trip")
{
    for (auto kind : {ExperimentKind::Lfd, ExperimentKind::MinMax, ExperimentKind::WdroLp, ExperimentKind::Privacy,
                      ExperimentKind::Verify}) {
        const auto text = serialize_config(default_config(kind));
        CHECK(serialize_config(parse_config(text)) == text);
    }
    for (const auto& entry : fs::directory_iterator(FLOWDRO_CONFIG_DIR)) {
        const auto j = nlohmann::json::parse(slurp(entry.path()));
        if (!j.contains("experiment")) continue;
        const auto cfg = load_config(entry.path());
        CHECK(serialize_config(parse_config(serialize_config(cfg), entry.path().parent_path())) ==
              serialize_config(cfg));
    }
}

TEST_CASE("config validation names the field")
{
    auto fails_with = [](const std::string& text, const std::string& fragment) {
        try {
            parse_config(text);
        } catch (const ValidationError& e) {
            const std::string what = e.what();
            INFO(what);
            CHECK(what.find(fragment) != std::string::npos);
            return;
        }
        FAIL("no ValidationError for " << text);
    };
    fails_with(R"({"experiment":"lfd","bogus":1})", "bogus");
    fails_with(R"({"experiment":"lfd","lfd":{"train":{"epochs":-3}}})", "lfd.train.epochs");
    fails_with(R"({"experiment":"lfd","lfd":{"train":{"gamma":0}}})", "gamma");
    fails_with(R"({"experiment":"nope"})", "experiment");
    fails_with(R"({"experiment":"wdro-lp","minmax":{}})", "minmax");
    fails_with(R"({"experiment":"lfd","dataset":{"kind":"csv","path":"/does/not/exist.csv"}})", "path");
    fails_with(R"({"experiment":"lfd","lfd":{"train":{"integrator":{"method":"midpoint"}}}})", "lfd.train.integrator.method");
    CHECK_THROWS_AS(parse_config("{not json"), ValidationError);
}

TEST_CASE("dataset generation")
{
    auto g = data::generate_dataset(data::GaussianSpec{{0}, {1}}, 500, 3);
    CHECK(g.points() == data::generate_dataset(data::GaussianSpec{{0}, {1}}, 500, 3).points());
    CHECK(std::abs(g.mean()[0]) < 5.0 / std::sqrt(500.0));

    auto one = data::generate_dataset(data::MixtureSpec{{{0}, {5}}, {{1}, {1}}, {1.0, 0.0}}, 100, 1);
    CHECK(one.distinct_labels() == std::vector<int>{0});

    auto moons = data::generate_dataset(data::TwoMoonsSpec{0.1}, 1000, 2);
    CHECK(moons.indices_with_label(0).size() == 500);
    CHECK(moons.indices_with_label(1).size() == 500);

    auto strat = data::generate_dataset(data::MixtureSpec{{{0}, {2}}, {{1}, {1.2}}, {0.5, 0.5}, true}, 1000, 4);
    CHECK(strat.indices_with_label(1).size() == 500);
}

TEST_CASE("figure emission")
{
    RunReport empty;
    empty.config = default_config(ExperimentKind::Lfd);
    try {
        emit_figure_data(empty, scratch("fig"));
        FAIL("expected a ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("pushforward_points") != std::string::npos);
    }
}

TEST_CASE("verify experiment")
{
    auto report = run_experiment(default_config(ExperimentKind::Verify));
    CHECK(report.passed());
    CHECK(!report.checks.empty());
}

TEST_CASE("wdro run writes reproducible outputs")
{
    auto cfg = default_config(ExperimentKind::WdroLp);
    cfg.wdro.n_per_class = 4;
    const auto a = scratch("wdro_a"), b = scratch("wdro_b");
    auto ra = run_experiment(cfg, a);
    run_experiment(cfg, b);
    CHECK(ra.passed());
    CHECK(ra.require_metric("variables") == 3 * 8 + 2 * 64);
    CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
    CHECK(slurp(a / "metrics.csv").rfind("metric,value\n", 0) == 0);
    for (const auto& name : expected_figures(cfg)) CHECK(fs::exists(a / ("figure_" + name + ".csv")));
    const auto report = nlohmann::json::parse(slurp(a / "report.json"));
    CHECK(report.at("passed").get<bool>());
    CHECK(report.at("input_hash").get<std::string>().size() == 40);
    CHECK_THROWS_AS(ra.require_metric("nope"), ValidationError);
}

TEST_CASE("git blob hash")
{
    // git hash-object of an empty file
    CHECK(git_blob_sha1("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST_CASE("cli exit codes")
{
    const auto out = scratch("exit");
    CHECK(run_cli("verify --out " + out.string()) == 0);
    CHECK(fs::exists(out / "report.json"));
    CHECK(run_cli("lfd") == 1);
    CHECK(run_cli("bogus") == 1);

    std::ofstream(out / "bad.json") << R"({"experiment":"lfd","lfd":{"train":{"epochs":"many"}}})";
    CHECK(run_cli("lfd --config " + (out / "bad.json").string()) == 1);
    CHECK(run_cli("minmax --config " + (std::string(FLOWDRO_CONFIG_DIR) + "/wdro_lp.json")) == 1);

    // a divergent flow training is reported as a numerical failure
    std::ofstream(out / "diverge.json") << R"({"experiment":"lfd","dataset":{"kind":"gaussian","n":16,"mean":[0],"variances":[1]},
        "lfd":{"target":"potential","train":{"gamma":0.5,"epochs":20,"lr":1000,"hidden":[4]}}})";
    CHECK(run_cli("lfd --config " + (out / "diverge.json").string() + " --out " + (out / "d").string()) == 2);

    CHECK(run_cli("wdro-lp --config " + std::string(FLOWDRO_CONFIG_DIR) + "/wdro_lp.json --seed 3 --out " +
                  (out / "w").string()) == 0);
    CHECK(fs::exists(out / "w" / "metrics.csv"));
}
