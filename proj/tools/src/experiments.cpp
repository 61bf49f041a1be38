#include "flowdro_app/experiments.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "flowdro/datasets.hpp"
#include "flowdro/dro.hpp"
#include "flowdro/error.hpp"
#include "flowdro/format.hpp"
#include "flowdro/log.hpp"
#include "flowdro/ot.hpp"
#include "flowdro/privacy.hpp"
#include "flowdro/prox.hpp"
#include "flowdro/rng.hpp"
#include "flowdro/verify.hpp"
#include "flowdro/wdro_lp.hpp"

namespace flowdro::app {

namespace fs = std::filesystem;
using ad::DenseArray;
using nlohmann::ordered_json;

std::optional<double> RunReport::metric(const std::string& name) const
{
    for (const auto& m : metrics)
        if (m.name == name) return m.value;
    return std::nullopt;
}

double RunReport::require_metric(const std::string& name) const
{
    if (auto v = metric(name)) return *v;
    throw ValidationError("run report has no metric '" + name + "'");
}

bool RunReport::passed() const
{
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

std::string git_blob_sha1(const std::string& content)
{
    const std::string header = "blob " + std::to_string(content.size()) + '\0';
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), header.data(), header.size()) != 1 ||
        EVP_DigestUpdate(ctx.get(), content.data(), content.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
        throw NumericalError("sha1: digest computation failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

namespace {

std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read input file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class Stopwatch {
public:
    double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

/// Builder for the report plus the files that go alongside it.
struct Run {
    RunReport& report;
    fs::path out;
    Rng root;

    void metric(const std::string& name, double v) { report.metrics.push_back({name, v}); }
    void check(const std::string& name, bool ok, const std::string& detail)
    {
        report.checks.push_back({name, ok, detail});
    }
    void timing(const std::string& name, const Stopwatch& w) { report.timings.emplace_back(name, w.seconds()); }
    bool writing() const { return !out.empty(); }
    std::string artifact(const std::string& file)
    {
        report.artifacts.push_back(file);
        return (out / file).string();
    }
    std::uint64_t seed(std::uint64_t stream) const { return root.split(stream).next_u64(); }
};

std::string fmt(double v) { return format_double(v); }

/// Shortest round-trip form, for metric names.
std::string tag_of(double v)
{
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

/// Misclassified weight fraction, in percent.
double error_percent(const risk::MLPClassifier& clf, const EmpiricalMeasure& q)
{
    const auto pred = clf.predict(q.points());
    double wrong = 0;
    for (std::size_t i = 0; i < q.size(); ++i) wrong += q.weight(i) * (pred[i] != q.label(i));
    return 100.0 * wrong;
}

// Stream ids for child seeds.
enum Stream : std::uint64_t { kData = 1, kTest, kModel, kTrain, kFlow, kAttack, kQueries, kNoise, kSmooth };

risk::TrainClassifierConfig classifier_train(const ClassifierConfig& c, std::uint64_t seed)
{
    risk::TrainClassifierConfig t;
    t.epochs = c.epochs;
    t.lr = c.lr;
    t.batch_size = c.batch_size;
    t.seed = seed;
    return t;
}

risk::MLPClassifier fit_classifier(const ClassifierConfig& c, const EmpiricalMeasure& data, std::size_t classes,
                                   Run& run, std::uint64_t init_seed, std::uint64_t train_seed)
{
    Rng rng(init_seed);
    auto clf = risk::MLPClassifier::initialize(data.dim(), c.hidden, classes, rng, c.activation, c.beta);
    risk::train_classifier(clf, data, classifier_train(c, train_seed));
    (void)run;
    return clf;
}

std::size_t class_count(const EmpiricalMeasure& data)
{
    FLOWDRO_REQUIRE(data.has_labels(), "experiment requires a labeled dataset");
    const auto labels = data.distinct_labels();
    FLOWDRO_REQUIRE(labels.front() >= 0, "labels must be nonnegative");
    return static_cast<std::size_t>(labels.back()) + 1;
}

Table epoch_table(const std::vector<dro::EpochRecord>& epochs, const std::string& name)
{
    Table t{name, {"block", "epoch", "objective", "transport_cost", "w2_estimate", "risk"}, {}};
    for (const auto& e : epochs)
        t.rows.push_back({static_cast<double>(e.block), static_cast<double>(e.epoch), e.objective, e.transport_cost,
                          e.w2_estimate, e.risk});
    return t;
}

void save_transport(Run& run, const dro::LabeledTransport& tr, const std::string& stem)
{
    if (!run.writing()) return;
    for (std::size_t i = 0; i < tr.chains.size(); ++i) {
        const std::string name =
            tr.per_class ? stem + "_class" + std::to_string(tr.labels[i]) + ".json" : stem + ".json";
        flow::save_chain(tr.chains[i], run.artifact(name));
        for (std::size_t k = 0; k < tr.chains[i].size(); ++k)
            run.report.artifacts.push_back(fs::path(name).stem().string() + ".block" + std::to_string(k) + ".json");
    }
}

void save_points(Run& run, const EmpiricalMeasure& m, const std::string& file)
{
    if (run.writing()) write_point_csv(m, run.artifact(file), false);
}

void save_params(Run& run, const ad::ParamStore& params, const std::string& file)
{
    if (run.writing()) ad::save_checkpoint(params, run.artifact(file), false);
}

double mean_value(const std::vector<double>& v, const std::vector<double>& w)
{
    double s = 0;
    for (std::size_t i = 0; i < v.size(); ++i) s += w[i] * v[i];
    return s;
}

// ---- lfd: analytic potential -------------------------------------------------------

std::unique_ptr<risk::Potential> make_potential(const LfdSection& l, std::size_t dim)
{
    if (l.potential == "linear") {
        auto slope = l.slope.empty() ? std::vector<double>(dim, 1.0) : l.slope;
        FLOWDRO_REQUIRE(slope.size() == dim, "lfd.slope has length " + std::to_string(slope.size()) +
                                                 ", data dimension is " + std::to_string(dim));
        return std::make_unique<risk::LinearPotential>(slope);
    }
    auto center = l.center.empty() ? std::vector<double>(dim, 0.0) : l.center;
    FLOWDRO_REQUIRE(center.size() == dim, "lfd.center has length " + std::to_string(center.size()) +
                                              ", data dimension is " + std::to_string(dim));
    return std::make_unique<risk::QuadraticPotential>(center, l.scale);
}

/// Composition of exact proximal maps with the block gammas.
DenseArray exact_prox_chain(const risk::Potential& v, const DenseArray& x, const std::vector<double>& gammas)
{
    DenseArray y = x;
    for (double g : gammas)
        for (std::size_t i = 0; i < y.rows(); ++i) {
            const auto r = prox::prox_point(v, y.row(i), g);
            std::copy(r.minimizer.begin(), r.minimizer.end(), y.row(i).begin());
        }
    return y;
}

void run_lfd_potential(const ExperimentConfig& cfg, Run& run)
{
    const auto& l = cfg.lfd;
    Stopwatch total;
    const auto p = data::generate_dataset(cfg.dataset.spec, cfg.dataset.n, run.seed(kData));
    const auto v = make_potential(l, p.dim());
    auto train = l.train;
    train.seed = run.seed(kFlow);
    train.per_class = false;

    Stopwatch tw;
    const auto res = dro::train_lfd(*v, p, train);
    run.timing("train", tw);
    const auto& q = res.pushforward;
    const auto& chain = res.transport.chains.front();
    const auto gammas = res.report.classes.front().gammas;

    run.metric("w2_estimate", res.report.w2_estimate);
    run.metric("chain_cost", res.report.chain_cost);
    run.metric("potential_p", mean_value(v->values(p.points()), p.weights()));
    run.metric("potential_q", res.report.risk);
    run.metric("blocks_trained", static_cast<double>(chain.size()));
    run.metric("pass_evaluations", static_cast<double>(res.report.pass_evaluations));
    run.metric("pass_evaluations_formula", static_cast<double>(res.report.pass_evaluations_formula));

    Stopwatch ow;
    // Oracle: exact proximal pushforward (closed form for both potentials).
    const auto exact = exact_prox_chain(*v, p.points(), gammas);
    double err = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        double s = 0;
        for (std::size_t j = 0; j < p.dim(); ++j) s += std::pow(q.points()(i, j) - exact(i, j), 2);
        err += p.weight(i) * s;
    }
    const double second = p.second_moment();
    run.metric("map_error", err);
    run.metric("map_error_relative", second > 0 ? err / second : err);

    // Optimality conditions of the last block on its own input measure.
    flow::FlowChain head;
    head.blocks.assign(chain.blocks.begin(), chain.blocks.end() - 1);
    const auto input = head.empty() ? p : flow::push_forward(head, p);
    const double g_last = gammas.back();
    const auto foc0 = prox::foc_report(*v, input, input, g_last);
    const auto foc1 = prox::foc_report(*v, input, q, g_last);
    const double be0 = prox::backward_euler_residual(*v, input.points(), input.points(), g_last);
    const double be1 = prox::backward_euler_residual(*v, input.points(), q.points(), g_last);
    run.metric("foc_residual_initial", foc0.residual);
    run.metric("foc_residual", foc1.residual);
    run.metric("backward_euler_initial", be0);
    run.metric("backward_euler_residual", be1);

    // Weak duality at the achieved radius: G(lambda) <= E_Q[V] for feasible Q.
    const double eps = std::sqrt(res.report.chain_cost) * (1.0 + 1e-9);
    double worst_gap = -INFINITY;
    for (double lambda : {0.1, 0.5, 1.0, 2.0, 10.0}) {
        const auto g = prox::dual_value_discrete(*v, p, lambda, eps);
        worst_gap = std::max(worst_gap, g.value - res.report.risk);
    }
    run.metric("dual_gap_max", worst_gap);
    run.timing("oracles", ow);

    run.report.tables.push_back(epoch_table(res.report.epochs, "train"));
    save_transport(run, res.transport, "chain");
    save_points(run, q, "pushforward.csv");

    Table fig{"pushforward_points", {}, {}};
    for (std::size_t j = 0; j < p.dim(); ++j) fig.columns.push_back("p" + std::to_string(j));
    for (std::size_t j = 0; j < p.dim(); ++j) fig.columns.push_back("q" + std::to_string(j));
    for (std::size_t j = 0; j < p.dim(); ++j) fig.columns.push_back("exact" + std::to_string(j));
    for (std::size_t i = 0; i < p.size(); ++i) {
        std::vector<double> row;
        for (std::size_t j = 0; j < p.dim(); ++j) row.push_back(p.points()(i, j));
        for (std::size_t j = 0; j < p.dim(); ++j) row.push_back(q.points()(i, j));
        for (std::size_t j = 0; j < p.dim(); ++j) row.push_back(exact(i, j));
        fig.rows.push_back(std::move(row));
    }
    run.report.figures.push_back(std::move(fig));

    run.check("map_error_relative < 1e-2", err < 1e-2 * second, "map_error_relative=" + fmt(err / second));
    run.check("weak duality", worst_gap <= 1e-6, "max G(lambda) - E_Q[V] = " + fmt(worst_gap));
    run.check("field evaluations match formula",
              res.report.pass_evaluations == res.report.pass_evaluations_formula,
              std::to_string(res.report.pass_evaluations) + " vs " +
                  std::to_string(res.report.pass_evaluations_formula));
    run.timing("total", total);
}

// ---- lfd: classifier risk vs pointwise attack --------------------------------------------

void run_lfd_classifier(const ExperimentConfig& cfg, Run& run)
{
    const auto& l = cfg.lfd;
    Stopwatch total;
    const auto p = data::generate_dataset(cfg.dataset.spec, cfg.dataset.n, run.seed(kData));
    const auto classes = class_count(p);
    Stopwatch cw;
    auto clf = fit_classifier(cfg.classifier, p, classes, run, run.seed(kModel), run.seed(kTrain));
    run.timing("classifier", cw);
    const risk::ClassifierRisk model(clf);

    auto train = l.train;
    train.seed = run.seed(kFlow);
    Stopwatch tw;
    const auto res = dro::train_lfd(model, p, train);
    run.timing("flow", tw);
    const auto& q = res.pushforward;
    const double budget = res.report.w2_estimate;

    // Pointwise L2 attack rescaled until its displacement matches the flow's.
    Stopwatch aw;
    risk::PgdConfig pgd;
    pgd.norm = risk::Norm::L2;
    pgd.steps = l.pgd_steps;
    pgd.epsilon = budget;
    EmpiricalMeasure attacked = p;
    double attack_budget = 0;
    for (int it = 0; it < 30 && budget > 0; ++it) {
        attacked = risk::pgd_attack_measure(model, p, pgd);
        attack_budget = std::sqrt(displacement_cost(p, attacked.points()));
        if (std::abs(attack_budget - budget) <= 5e-3 * budget || attack_budget == 0) break;
        pgd.epsilon *= budget / attack_budget;
    }
    run.timing("attack", aw);
    const double gap = budget > 0 ? std::abs(attack_budget - budget) / budget : 0.0;

    const double risk_p = risk::risk_eval(model, p);
    const double risk_flow = risk::risk_eval(model, q);
    const double risk_pgd = risk::risk_eval(model, attacked);
    run.metric("budget_flow", budget);
    run.metric("budget_pgd", attack_budget);
    run.metric("budget_gap_relative", gap);
    run.metric("pgd_epsilon", pgd.epsilon);
    run.metric("w2_estimate", res.report.w2_estimate);
    run.metric("risk_p", risk_p);
    run.metric("risk_flow", risk_flow);
    run.metric("risk_pgd", risk_pgd);
    run.metric("accuracy_p", risk::accuracy_eval(clf, p));
    run.metric("accuracy_flow", risk::accuracy_eval(clf, q));
    run.metric("accuracy_pgd", risk::accuracy_eval(clf, attacked));

    run.report.tables.push_back(epoch_table(res.report.epochs, "train"));
    save_params(run, clf.net().params(), "classifier.json");
    save_transport(run, res.transport, "chain");
    save_points(run, q, "pushforward.csv");
    save_points(run, attacked, "pgd_pushforward.csv");

    Table fig{"lfd_vs_pgd", {"x0", "x1", "label", "flow0", "flow1", "pgd0", "pgd1"}, {}};
    if (p.dim() == 2)
        for (std::size_t i = 0; i < p.size(); ++i)
            fig.rows.push_back({p.points()(i, 0), p.points()(i, 1), static_cast<double>(p.label(i)),
                                q.points()(i, 0), q.points()(i, 1), attacked.points()(i, 0),
                                attacked.points()(i, 1)});
    if (!fig.rows.empty()) run.report.figures.push_back(std::move(fig));

    run.check("budgets matched within 2%", gap <= 0.02, "relative gap " + fmt(gap));
    run.check("flow risk >= pgd risk - 1e-3", risk_flow >= risk_pgd - 1e-3,
              "risk_flow=" + fmt(risk_flow) + " risk_pgd=" + fmt(risk_pgd));
    run.timing("total", total);
}

// ---- lfd: hypothesis testing (two-sample, per-class calibrated radius) ------------------

std::vector<double> histogram(const EmpiricalMeasure& m, double lo, double width, std::size_t bins)
{
    std::vector<double> h(bins, 0.0);
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double x = m.point(i)[0];
        auto b = static_cast<long>(std::floor((x - lo) / width));
        b = std::clamp<long>(b, 0, static_cast<long>(bins) - 1);
        h[static_cast<std::size_t>(b)] += m.weight(i) / width;
    }
    return h;
}

void run_lfd_hypothesis(const ExperimentConfig& cfg, Run& run)
{
    const auto& l = cfg.lfd;
    Stopwatch total;
    const auto p = data::generate_dataset(cfg.dataset.spec, cfg.dataset.n, run.seed(kData));
    FLOWDRO_REQUIRE(class_count(p) == 2, "hypothesis target needs exactly labels 0 and 1");
    const auto p0 = p.filter_label(0);
    const auto p1 = p.filter_label(1);

    Stopwatch dw;
    Rng init(run.seed(kModel));
    auto det = risk::ScalarDetector::initialize(p.dim(), cfg.classifier.hidden, init, cfg.classifier.activation,
                                                cfg.classifier.beta);
    risk::train_detector(det, p0, p1, l.generating, classifier_train(cfg.classifier, run.seed(kTrain)));
    run.timing("detector", dw);
    const risk::HypothesisRisk model(det, l.generating);
    const risk::NegatedLossPotential v(model);

    std::vector<EmpiricalMeasure> qs;
    std::vector<std::vector<dro::EpochRecord>> curves;
    bool all_within = true;
    std::string radii;
    for (int c = 0; c < 2; ++c) {
        const auto& pc = c == 0 ? p0 : p1;
        std::map<double, dro::ChainResult> trained;
        auto train = l.train;
        train.seed = Rng(run.seed(kFlow)).split(static_cast<std::uint64_t>(c)).next_u64();
        const prox::RadiusFn radius = [&](double gamma) {
            auto t = train;
            t.gamma = {};
            t.gamma.gamma = gamma;
            auto r = dro::train_chain(v, pc, t, -1.0);
            const double w2 = r.summary.w2;
            trained.insert_or_assign(gamma, std::move(r));
            return w2;
        };
        Stopwatch cw;
        const auto cal = prox::calibrate_gamma(radius, l.target_radius, l.gamma_lo, l.gamma_hi, l.calibration_tol);
        run.timing("calibrate_class" + std::to_string(c), cw);
        auto& best = trained.at(cal.gamma);
        const std::string tag = std::to_string(c);
        run.metric("gamma_" + tag, cal.gamma);
        run.metric("radius_" + tag, cal.achieved);
        run.metric("calibration_evaluations_" + tag, cal.evaluations);
        const bool within = std::abs(cal.achieved - l.target_radius) <= 0.1 * l.target_radius;
        all_within = all_within && within;
        radii += (c ? ", " : "") + fmt(cal.achieved);
        qs.push_back(best.pushforward);
        curves.push_back(best.epochs);
        if (run.writing()) {
            flow::save_chain(best.chain, run.artifact("chain_class" + tag + ".json"));
            for (std::size_t k = 0; k < best.chain.size(); ++k)
                run.report.artifacts.push_back("chain_class" + tag + ".block" + std::to_string(k) + ".json");
        }
    }
    const double w2_p = w2_1d(p0, p1);
    const double w2_q = w2_1d(qs[0], qs[1]);
    run.metric("w2_p0_p1", w2_p);
    run.metric("w2_q0_q1", w2_q);
    run.metric("risk_p", risk::hypothesis_risk(det, p0, p1, l.generating));
    run.metric("risk_q", risk::hypothesis_risk(det, qs[0], qs[1], l.generating));

    for (int c = 0; c < 2; ++c) {
        auto t = epoch_table(curves[c], "train_class" + std::to_string(c));
        run.report.tables.push_back(std::move(t));
    }
    save_params(run, det.net().params(), "detector.json");
    save_points(run, concatenate({qs[0], qs[1]}), "pushforward.csv");

    if (p.dim() == 1) {
        double lo = INFINITY, hi = -INFINITY;
        for (const EmpiricalMeasure* m : std::initializer_list<const EmpiricalMeasure*>{&p0, &p1, &qs[0], &qs[1]})
            for (std::size_t i = 0; i < m->size(); ++i) {
                lo = std::min(lo, m->point(i)[0]);
                hi = std::max(hi, m->point(i)[0]);
            }
        const std::size_t bins = l.histogram_bins;
        const double width = (hi - lo) / static_cast<double>(bins) * (1 + 1e-12) + 1e-300;
        const auto h0 = histogram(p0, lo, width, bins), h1 = histogram(p1, lo, width, bins);
        const auto g0 = histogram(qs[0], lo, width, bins), g1 = histogram(qs[1], lo, width, bins);
        Table fig{"fig1_histograms", {"x_grid", "hist_P0", "hist_P1", "hist_Q0", "hist_Q1"}, {}};
        for (std::size_t b = 0; b < bins; ++b)
            fig.rows.push_back({lo + (static_cast<double>(b) + 0.5) * width, h0[b], h1[b], g0[b], g1[b]});
        run.report.figures.push_back(std::move(fig));
    }

    run.check("achieved radii within 10% of target", all_within, "radii " + radii);
    run.check("W2(Q0,Q1) < W2(P0,P1)", w2_q < w2_p, fmt(w2_q) + " vs " + fmt(w2_p));
    run.timing("total", total);
}

// ---- min-max -------------------------------------------------------------------------

void run_minmax(const ExperimentConfig& cfg, Run& run)
{
    const auto& m = cfg.minmax;
    Stopwatch total;
    const auto p = data::generate_dataset(cfg.dataset.spec, cfg.dataset.n, run.seed(kData));
    const auto test = data::generate_dataset(cfg.dataset.spec, m.test_n, run.seed(kTest));
    const auto classes = class_count(p);
    Rng init(run.seed(kModel));
    const auto start = risk::MLPClassifier::initialize(p.dim(), cfg.classifier.hidden, classes, init,
                                                       cfg.classifier.activation, cfg.classifier.beta);

    Stopwatch ew;
    auto erm = start;
    const auto erm_curve = risk::train_classifier(erm, p, classifier_train(cfg.classifier, run.seed(kTrain)));
    run.timing("erm", ew);

    Stopwatch fw;
    risk::ClassifierRisk frm(start);
    auto mc = m.frm;
    mc.seed = run.seed(kFlow);
    const auto mm = dro::solve_minmax(frm, p, mc);
    run.timing("frm", fw);

    double scale = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        double s = 0;
        for (double x : test.point(i)) s += x * x;
        scale += test.weight(i) * std::sqrt(s);
    }
    run.metric("attack_scale_mean_norm", scale);

    Stopwatch aw;
    const risk::ClassifierRisk erm_risk(erm);
    Table curve{"robustness_curve", {"attack_budget_fraction", "error_frm", "error_erm"}, {}};
    bool better = true;
    std::string detail;
    for (double frac : m.attack_fractions) {
        risk::PgdConfig pgd;
        pgd.norm = risk::Norm::L2;
        pgd.steps = m.pgd_steps;
        pgd.epsilon = frac * scale;
        auto error = [&](const risk::ClassifierRisk& model) {
            const auto attacked = frac > 0 ? risk::pgd_attack_measure(model, test, pgd) : test;
            return error_percent(model.classifier(), attacked);
        };
        const double e_frm = error(frm);
        const double e_erm = error(erm_risk);
        curve.rows.push_back({frac, e_frm, e_erm});
        const std::string tag = tag_of(frac);
        run.metric("error_frm@" + tag, e_frm);
        run.metric("error_erm@" + tag, e_erm);
        if (frac >= 0.2 - 1e-12) {
            better = better && e_frm < e_erm;
            detail += (detail.empty() ? "" : "; ") + tag + ": frm " + fmt(e_frm) + " erm " + fmt(e_erm);
        }
    }
    run.timing("attack", aw);
    run.report.figures.push_back(std::move(curve));

    Table hist{"minmax_history", {"iteration", "flow_objective", "transport_cost", "classifier_loss"}, {}};
    for (const auto& h : mm.history)
        hist.rows.push_back({static_cast<double>(h.iteration), h.flow_objective, h.transport_cost, h.classifier_loss});
    run.report.tables.push_back(std::move(hist));
    Table ec{"erm_history", {"epoch", "loss"}, {}};
    for (std::size_t e = 0; e < erm_curve.epoch_loss.size(); ++e)
        ec.rows.push_back({static_cast<double>(e), erm_curve.epoch_loss[e]});
    run.report.tables.push_back(std::move(ec));

    save_params(run, frm.classifier().net().params(), "classifier_frm.json");
    save_params(run, erm.net().params(), "classifier_erm.json");
    if (run.writing()) {
        flow::FlowChain chain;
        chain.blocks.push_back(mm.flow);
        flow::save_chain(chain, run.artifact("flow.json"));
        run.report.artifacts.push_back("flow.block0.json");
    }

    if (!detail.empty())
        run.check("FRM error < ERM error for budget fractions >= 0.2", better, detail);
    run.timing("total", total);
}

// ---- wdro-lp -------------------------------------------------------------------------

void run_wdro(const ExperimentConfig& cfg, Run& run)
{
    const auto& w = cfg.wdro;
    Stopwatch total;
    wdro::WdroLpInstance inst;
    if (!w.instance.empty()) {
        inst = wdro::read_instance(w.instance);
    } else {
        const auto sample = data::two_sample_1d(w.n_per_class, run.seed(kData));
        inst.points = sample.points();
        inst.n1 = inst.n2 = w.n_per_class;
        inst.eps1 = w.eps1;
        inst.eps2 = w.eps2;
        inst.squared_cost = w.squared_cost;
    }
    inst.validate();
    const std::size_t n = inst.n();
    Stopwatch sw;
    const auto pair = wdro::solve_wdro(inst);
    run.timing("solve", sw);
    const auto [marginal, excess] = wdro::check_pair(inst, pair);
    const auto lp = wdro::build_wdro_lp(inst);

    run.metric("samples", static_cast<double>(n));
    run.metric("variables", static_cast<double>(lp.num_vars));
    run.metric("constraints", static_cast<double>(lp.num_rows()));
    run.metric("objective", pair.objective);
    run.metric("lp_objective", pair.lp_objective);
    run.metric("simplex_iterations", pair.iterations);
    run.metric("marginal_error", marginal);
    run.metric("budget_excess", excess);

    const std::size_t d = inst.points.cols();
    Table fig{"lfd_pmf", {}, {}};
    for (std::size_t j = 0; j < d; ++j) fig.columns.push_back("x" + std::to_string(j));
    for (const char* c : {"empirical1", "empirical2", "p1", "p2"}) fig.columns.emplace_back(c);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> row(inst.points.row(i).begin(), inst.points.row(i).end());
        row.push_back(i < inst.n1 ? 1.0 / static_cast<double>(inst.n1) : 0.0);
        row.push_back(i >= inst.n1 ? 1.0 / static_cast<double>(inst.n2) : 0.0);
        row.push_back(pair.p1[i]);
        row.push_back(pair.p2[i]);
        fig.rows.push_back(std::move(row));
    }
    run.report.figures.push_back(std::move(fig));

    const auto [s1, s2] = wdro::smoothed_lfd_sampler(pair, inst.points, w.bandwidth, w.samples, run.seed(kSmooth));
    save_points(run, concatenate({s1, s2}), "smoothed_lfd_samples.csv");
    if (run.writing()) {
        std::ofstream(run.artifact("instance.json")) << wdro::instance_json(inst) << '\n';
        std::ofstream(run.artifact("lfd_pair.json")) << wdro::pair_json(pair) << '\n';
    }

    const std::size_t expected = 2 * n + 2 * n * n + n;
    run.check("variable count 2n + 2n^2 + n", lp.num_vars == expected,
              std::to_string(lp.num_vars) + " vs " + std::to_string(expected));
    run.check("marginals and budgets feasible", marginal <= 1e-7 && excess <= 1e-7,
              "marginal " + fmt(marginal) + ", budget excess " + fmt(excess));
    run.check("objective in [0, 1]", pair.objective >= -1e-9 && pair.objective <= 1 + 1e-9, fmt(pair.objective));
    run.timing("total", total);
}

// ---- privacy -------------------------------------------------------------------------

double mean_norm(const EmpiricalMeasure& m)
{
    double total = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        double s = 0;
        for (double x : m.point(i)) s += x * x;
        total += m.weight(i) * std::sqrt(s);
    }
    return total;
}

void run_privacy(const ExperimentConfig& cfg, Run& run)
{
    const auto& pv = cfg.privacy;
    Stopwatch total;
    const auto data = data::generate_dataset(cfg.dataset.spec, cfg.dataset.n, run.seed(kData));
    const auto test = data::generate_dataset(cfg.dataset.spec, pv.test_n, run.seed(kTest));
    const std::size_t classes = pv.classes;
    FLOWDRO_REQUIRE(class_count(data) == classes, "privacy.classes is " + std::to_string(classes) +
                                                      " but the dataset has " + std::to_string(class_count(data)));

    bool dominates = true, accurate = true, fair = true;
    std::string detail, acc_detail;
    for (auto kind : {privacy::QueryKind::Point, privacy::QueryKind::MissingItem}) {
        const std::string task = privacy::query_name(kind);
        const std::uint64_t stream = kind == privacy::QueryKind::Point ? 0 : 1;
        const privacy::QueryTask qt{kind, classes};
        const Rng task_rng = run.root.split(100 + stream);
        const auto train_q = privacy::build_queries(qt, data, task_rng.split(kQueries).next_u64());
        const auto test_q = privacy::build_queries(qt, test, task_rng.split(kTest).next_u64());

        Stopwatch cw;
        auto clf = fit_classifier(cfg.classifier, train_q, classes, run, task_rng.split(kModel).next_u64(),
                                  task_rng.split(kTrain).next_u64());
        run.timing(task + "_classifier", cw);
        const risk::ClassifierRisk model(clf);

        Stopwatch fw;
        auto dcfg = pv.dpm;
        dcfg.seed = task_rng.split(kFlow).next_u64();
        std::optional<dro::LfdResult> lfd;
        if (pv.budget_fraction) {
            const double target = *pv.budget_fraction * mean_norm(train_q);
            std::map<double, dro::LfdResult> trained;
            const prox::RadiusFn budget = [&](double gamma) {
                auto t = dcfg;
                t.gamma = {};
                t.gamma.gamma = gamma;
                auto r = dro::train_lfd(model, train_q, t);
                const double b = mean_displacement(train_q, r.pushforward.points());
                trained.insert_or_assign(gamma, std::move(r));
                return b;
            };
            const auto cal = prox::calibrate_gamma(budget, target, pv.gamma_lo, pv.gamma_hi, 0.025 * target);
            run.metric(task + "_dpm_gamma", cal.gamma);
            run.metric(task + "_dpm_target_budget", target);
            lfd = std::move(trained.at(cal.gamma));
        } else {
            lfd = dro::train_lfd(model, train_q, dcfg);
        }
        run.timing(task + "_dpm", fw);
        const auto dpm = privacy::Mechanism::dpm(lfd->transport, test_q);
        const auto gauss = privacy::Mechanism::gaussian(dpm.budget, test_q.dim(), task_rng.split(kNoise).next_u64());
        const auto lap = privacy::Mechanism::laplace(dpm.budget, test_q.dim(), task_rng.split(kNoise).next_u64());

        double dpm_total = 0, best_apm = -INFINITY, dpm_disp = 0, displacement_spread = 0;
        for (const auto* mech : {&dpm, &gauss, &lap}) {
            const std::string name = privacy::mechanism_name(mech->kind);
            const auto rep = privacy::error_rates_on(clf, *mech, test_q, classes, task_rng.split(kAttack).next_u64());
            const std::string tag = task + "_" + name;
            run.metric(tag + "_alpha", rep.alpha_avg);
            run.metric(tag + "_beta", rep.beta_avg);
            run.metric(tag + "_total", rep.total());
            run.metric(tag + "_budget", rep.budget);
            run.metric(tag + "_displacement", rep.measured_displacement);
            if (mech == &dpm) {
                dpm_disp = rep.measured_displacement;
                dpm_total = rep.total();
                run.metric(task + "_clean_accuracy", rep.clean_accuracy);
                accurate = accurate && rep.clean_accuracy > 95.0;
                acc_detail += (acc_detail.empty() ? "" : "; ") + task + " " + fmt(rep.clean_accuracy);
            } else {
                best_apm = std::max(best_apm, rep.total());
                if (dpm_disp > 0)
                    displacement_spread =
                        std::max(displacement_spread, std::abs(rep.measured_displacement - dpm_disp) / dpm_disp);
            }
            Table t{"errors_" + tag, {"class", "alpha", "beta"}, {}};
            for (std::size_t k = 0; k < rep.classes.size(); ++k)
                t.rows.push_back({static_cast<double>(rep.classes[k]), rep.alpha[k], rep.beta[k]});
            t.rows.push_back({-1.0, rep.alpha_avg, rep.beta_avg});
            run.report.tables.push_back(std::move(t));
            if (run.writing()) {
                std::ofstream out(run.artifact("error_report_" + tag + ".csv"));
                privacy::write_error_csv(rep, out);
            }
        }
        dominates = dominates && dpm_total >= best_apm;
        fair = fair && displacement_spread <= 0.02;
        detail += (detail.empty() ? "" : "; ") + task + ": dpm " + fmt(dpm_total) + " best apm " + fmt(best_apm);
        run.report.tables.push_back(epoch_table(lfd->report.epochs, "dpm_train_" + task));
        save_params(run, clf.net().params(), "classifier_" + task + ".json");
        save_transport(run, lfd->transport, "dpm_" + task);
    }
    run.check("clean accuracy > 95%", accurate, acc_detail);
    run.check("measured displacements agree within 2%", fair, "see *_displacement metrics");
    run.check("DPM alpha+beta >= APM-G and APM-L", dominates, detail);
    run.timing("total", total);
}

// ---- verify --------------------------------------------------------------------------

void run_verify(const ExperimentConfig& cfg, Run& run)
{
    Stopwatch total;
    const auto results = verify::run_invariant_suite(cfg.seed);
    std::size_t passed = 0;
    for (const auto& r : results) {
        run.check(r.name, r.passed, r.detail);
        passed += r.passed;
    }
    run.metric("checks_passed", static_cast<double>(passed));
    run.metric("checks_total", static_cast<double>(results.size()));
    run.timing("total", total);
}

std::vector<InputDigest> digest_inputs(const ExperimentConfig& cfg)
{
    std::vector<InputDigest> out;
    out.push_back({"config", git_blob_sha1(serialize_config(cfg))});
    if (const auto* csv = std::get_if<data::CsvSpec>(&cfg.dataset.spec); csv && cfg.kind != ExperimentKind::WdroLp &&
                                                                          cfg.kind != ExperimentKind::Verify)
        out.push_back({csv->path, git_blob_sha1(read_file(csv->path))});
    if (cfg.kind == ExperimentKind::WdroLp && !cfg.wdro.instance.empty())
        out.push_back({cfg.wdro.instance, git_blob_sha1(read_file(cfg.wdro.instance))});
    return out;
}

}  // namespace

std::vector<std::string> expected_figures(const ExperimentConfig& cfg)
{
    switch (cfg.kind) {
        case ExperimentKind::Lfd:
            switch (cfg.lfd.target) {
                case LfdTarget::Potential: return {"pushforward_points"};
                case LfdTarget::Classifier: return {};
                case LfdTarget::Hypothesis: return {"fig1_histograms"};
            }
            break;
        case ExperimentKind::MinMax: return {"robustness_curve"};
        case ExperimentKind::WdroLp: return {"lfd_pmf"};
        default: break;
    }
    return {};
}

void write_table_csv(const Table& t, const fs::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write '" + path.string() + "'");
    for (std::size_t j = 0; j < t.columns.size(); ++j) out << (j ? "," : "") << t.columns[j];
    out << '\n';
    for (const auto& row : t.rows) {
        for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << format_double(row[j]);
        out << '\n';
    }
}

void write_metrics_csv(const RunReport& report, const fs::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write '" + path.string() + "'");
    out << "metric,value\n";
    for (const auto& m : report.metrics) out << m.name << ',' << format_double(m.value) << '\n';
}

std::vector<fs::path> emit_figure_data(const RunReport& report, const fs::path& dir)
{
    const auto names = expected_figures(report.config);
    if (report.figures.empty() && !names.empty())
        throw ValidationError("emit_figure_data: report is missing series '" + names.front() + "'");
    for (const auto& n : names)
        if (std::none_of(report.figures.begin(), report.figures.end(), [&](const Table& t) { return t.name == n; }))
            throw ValidationError("emit_figure_data: report is missing series '" + n + "'");
    std::vector<fs::path> paths;
    for (const auto& t : report.figures) {
        if (t.rows.empty()) throw ValidationError("emit_figure_data: series '" + t.name + "' is empty");
        paths.push_back(dir / ("figure_" + t.name + ".csv"));
        write_table_csv(t, paths.back());
    }
    return paths;
}

std::string report_json(const RunReport& r)
{
    ordered_json j;
    j["experiment"] = kind_name(r.config.kind);
    j["config"] = ordered_json::parse(serialize_config(r.config));
    auto inputs = ordered_json::array();
    for (const auto& i : r.inputs) inputs.push_back({{"name", i.name}, {"sha1", i.sha1}});
    j["inputs"] = inputs;
    j["input_hash"] = r.input_hash;
    ordered_json metrics = ordered_json::object();
    for (const auto& m : r.metrics) {
        if (std::isfinite(m.value))
            metrics[m.name] = m.value;
        else
            metrics[m.name] = nullptr;
    }
    j["metrics"] = metrics;
    auto checks = ordered_json::array();
    for (const auto& c : r.checks) checks.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    j["acceptance"] = checks;
    j["passed"] = r.passed();
    ordered_json timings = ordered_json::object();
    for (const auto& [k, v] : r.timings) timings[k] = v;
    j["timings_seconds"] = timings;
    j["artifacts"] = r.artifacts;
    return j.dump(2);
}

RunReport run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir)
{
    RunReport report;
    report.config = cfg;
    report.inputs = digest_inputs(cfg);
    std::string listing;
    for (const auto& i : report.inputs) listing += i.sha1 + ' ' + i.name + '\n';
    report.input_hash = git_blob_sha1(listing);
    if (!out_dir.empty()) fs::create_directories(out_dir);
    Run run{report, out_dir, Rng(cfg.seed)};
    try {
        switch (cfg.kind) {
            case ExperimentKind::Lfd:
                switch (cfg.lfd.target) {
                    case LfdTarget::Potential: run_lfd_potential(cfg, run); break;
                    case LfdTarget::Classifier: run_lfd_classifier(cfg, run); break;
                    case LfdTarget::Hypothesis: run_lfd_hypothesis(cfg, run); break;
                }
                break;
            case ExperimentKind::MinMax: run_minmax(cfg, run); break;
            case ExperimentKind::WdroLp: run_wdro(cfg, run); break;
            case ExperimentKind::Privacy: run_privacy(cfg, run); break;
            case ExperimentKind::Verify: run_verify(cfg, run); break;
        }
    } catch (const ValidationError& e) {
        throw ValidationError(std::string(kind_name(cfg.kind)) + " experiment: " + e.what());
    } catch (const NumericalError& e) {
        throw NumericalError(std::string(kind_name(cfg.kind)) + " experiment: " + e.what());
    }

    if (!out_dir.empty()) {
        std::ofstream(out_dir / "config.json", std::ios::binary) << serialize_config(cfg) << '\n';
        report.artifacts.insert(report.artifacts.begin(), "config.json");
        write_metrics_csv(report, out_dir / "metrics.csv");
        report.artifacts.push_back("metrics.csv");
        for (const auto& t : report.tables) {
            write_table_csv(t, out_dir / (t.name + ".csv"));
            report.artifacts.push_back(t.name + ".csv");
        }
        for (const auto& p : emit_figure_data(report, out_dir)) report.artifacts.push_back(p.filename().string());
        report.artifacts.push_back("report.json");
        std::ofstream(out_dir / "report.json", std::ios::binary) << report_json(report) << '\n';
    }
    return report;
}

}  // namespace flowdro::app
