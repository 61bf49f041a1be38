#include "flowdro_app/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "flowdro/error.hpp"
#include "flowdro/wdro_lp.hpp"

namespace flowdro::app {

using nlohmann::json;
using nlohmann::ordered_json;

const char* kind_name(ExperimentKind k)
{
    switch (k) {
        case ExperimentKind::Lfd: return "lfd";
        case ExperimentKind::MinMax: return "minmax";
        case ExperimentKind::WdroLp: return "wdro-lp";
        case ExperimentKind::Privacy: return "privacy";
        case ExperimentKind::Verify: return "verify";
    }
    return "?";
}

ExperimentKind parse_kind(const std::string& s)
{
    for (auto k : {ExperimentKind::Lfd, ExperimentKind::MinMax, ExperimentKind::WdroLp, ExperimentKind::Privacy,
                   ExperimentKind::Verify})
        if (s == kind_name(k)) return k;
    throw ValidationError("unknown experiment '" + s + "' (expected lfd, minmax, wdro-lp, privacy or verify)");
}

namespace {

/// Typed access to one JSON object; every error carries the field path and
/// unknown keys are rejected by finish().
class Fields {
public:
    Fields(const json& j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j_.is_object()) fail(path_, "expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    template <class T>
    T get(const std::string& key, T fallback)
    {
        seen_.insert(key);
        if (!j_.contains(key)) return fallback;
        return convert<T>(j_.at(key), where(key));
    }

    template <class T>
    T require(const std::string& key)
    {
        seen_.insert(key);
        if (!j_.contains(key)) fail(where(key), "required field missing");
        return convert<T>(j_.at(key), where(key));
    }

    /// String field mapped through a parser; parser errors get the field path.
    template <class Parse>
    auto choice(const std::string& key, const std::string& fallback, Parse parse)
    {
        const auto text = get<std::string>(key, fallback);
        try {
            return parse(text);
        } catch (const ValidationError& e) {
            fail(where(key), e.what());
        }
    }

    Fields child(const std::string& key)
    {
        seen_.insert(key);
        return Fields(j_.at(key), where(key));
    }

    const json& raw(const std::string& key)
    {
        seen_.insert(key);
        return j_.at(key);
    }

    std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    const std::string& path() const { return path_; }

    void finish() const
    {
        for (const auto& item : j_.items())
            if (!seen_.count(item.key())) fail(where(item.key()), "unknown field");
    }

    [[noreturn]] static void fail(const std::string& path, const std::string& msg)
    {
        throw ValidationError("config: " + (path.empty() ? std::string("<root>") : path) + ": " + msg);
    }

private:
    template <class T>
    static T convert(const json& v, const std::string& path)
    {
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) fail(path, "expected a number");
            } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
                if (!v.is_number_integer()) fail(path, "expected an integer");
                if constexpr (std::is_unsigned_v<T>)
                    if (v.get<long long>() < 0 && !v.is_number_unsigned()) fail(path, "expected a nonnegative integer");
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) fail(path, "expected a boolean");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) fail(path, "expected a string");
            }
            return v.get<T>();
        } catch (const json::exception& e) {
            fail(path, std::string("wrong type (") + e.what() + ")");
        }
    }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void check(bool ok, const std::string& path, const std::string& msg)
{
    if (!ok) Fields::fail(path, msg);
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p)
{
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

DatasetConfig parse_dataset(Fields f, const std::filesystem::path& base)
{
    DatasetConfig d;
    const auto kind = f.require<std::string>("kind");
    d.n = f.get<std::size_t>("n", d.n);
    check(d.n >= 1, f.where("n"), "must be at least 1");
    if (kind == "gaussian") {
        data::GaussianSpec g;
        g.mean = f.get<std::vector<double>>("mean", {0.0, 0.0});
        g.variances = f.get<std::vector<double>>("variances", std::vector<double>(g.mean.size(), 1.0));
        d.spec = g;
    } else if (kind == "gaussian-mixture") {
        data::MixtureSpec m;
        m.means = f.require<std::vector<std::vector<double>>>("means");
        m.variances = f.require<std::vector<std::vector<double>>>("variances");
        m.weights = f.get<std::vector<double>>("weights", std::vector<double>(m.means.size(), 1.0 / std::max<std::size_t>(1, m.means.size())));
        m.stratified = f.get("stratified", m.stratified);
        d.spec = m;
    } else if (kind == "two-moons") {
        data::TwoMoonsSpec t;
        t.noise = f.get<double>("noise", t.noise);
        d.spec = t;
    } else if (kind == "csv") {
        const auto p = f.require<std::string>("path");
        const auto full = resolve(base, p);
        check(std::filesystem::exists(full), f.where("path"), "file '" + full.string() + "' does not exist");
        d.spec = data::CsvSpec{full.string()};
    } else {
        Fields::fail(f.where("kind"), "unknown dataset '" + kind + "' (expected gaussian, gaussian-mixture, two-moons or csv)");
    }
    f.finish();
    try {
        data::validate(d.spec);
    } catch (const ValidationError& e) {
        Fields::fail(f.path(), e.what());
    }
    return d;
}

ClassifierConfig parse_classifier(Fields f)
{
    ClassifierConfig c;
    c.hidden = f.get("hidden", c.hidden);
    c.activation = f.choice("activation", ad::activation_name(c.activation), ad::parse_activation);
    c.beta = f.get("beta", c.beta);
    c.epochs = f.get("epochs", c.epochs);
    c.lr = f.get("lr", c.lr);
    c.batch_size = f.get("batch_size", c.batch_size);
    f.finish();
    check(c.epochs >= 0, f.where("epochs"), "must be nonnegative");
    check(c.lr > 0, f.where("lr"), "must be positive");
    check(c.beta > 0, f.where("beta"), "must be positive");
    return c;
}

flow::IntegratorConfig parse_integrator(Fields f, flow::IntegratorConfig c)
{
    c.method = f.choice("method", flow::method_name(c.method), flow::parse_method);
    c.substeps = f.get("substeps", c.substeps);
    f.finish();
    check(c.substeps >= 1, f.where("substeps"), "must be at least 1");
    return c;
}

dro::LFDTrainConfig parse_train(Fields f, dro::LFDTrainConfig c)
{
    c.blocks = f.get("blocks", c.blocks);
    check(c.blocks >= 1, f.where("blocks"), "must be at least 1");
    if (f.has("gamma")) {
        const auto& g = f.raw("gamma");
        if (g.is_number()) {
            c.gamma = {};
            c.gamma.gamma = g.get<double>();
        } else {
            Fields gf(g, f.where("gamma"));
            c.gamma.kind = gf.choice("schedule", "even", dro::parse_schedule);
            c.gamma.gamma = gf.get("gamma", c.gamma.gamma);
            c.gamma.factor = gf.get("factor", c.gamma.factor);
            c.gamma.values = gf.get("values", c.gamma.values);
            gf.finish();
        }
    }
    c.epochs = f.get("epochs", c.epochs);
    c.batch_size = f.get("batch_size", c.batch_size);
    c.lr = f.get("lr", c.lr);
    c.optimizer = f.choice("optimizer", dro::optimizer_name(c.optimizer), dro::parse_optimizer);
    if (f.has("integrator")) c.integrator = parse_integrator(f.child("integrator"), c.integrator);
    c.hidden = f.get("hidden", c.hidden);
    c.activation = f.choice("activation", ad::activation_name(c.activation), ad::parse_activation);
    c.beta = f.get("beta", c.beta);
    if (f.has("time_conditioned")) c.time_conditioned = f.get<bool>("time_conditioned", false);
    if (f.has("stop_radius")) c.stop_radius = f.get<double>("stop_radius", 0.0);
    c.per_class = f.get("per_class", c.per_class);
    c.w2_sample = f.get("w2_sample", c.w2_sample);
    f.finish();
    check(c.epochs >= 0, f.where("epochs"), "must be nonnegative");
    check(c.lr > 0, f.where("lr"), "must be positive");
    check(c.w2_sample >= 2, f.where("w2_sample"), "must be at least 2");
    check(!c.stop_radius || *c.stop_radius >= 0, f.where("stop_radius"), "must be nonnegative");
    try {
        c.validate();
    } catch (const ValidationError& e) {
        Fields::fail(f.path(), e.what());
    }
    return c;
}

ordered_json train_json(const dro::LFDTrainConfig& c)
{
    ordered_json j;
    j["blocks"] = c.blocks;
    ordered_json g;
    g["schedule"] = dro::schedule_name(c.gamma.kind);
    g["gamma"] = c.gamma.gamma;
    g["factor"] = c.gamma.factor;
    g["values"] = c.gamma.values;
    j["gamma"] = g;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["lr"] = c.lr;
    j["optimizer"] = dro::optimizer_name(c.optimizer);
    j["integrator"] = {{"method", flow::method_name(c.integrator.method)}, {"substeps", c.integrator.substeps}};
    j["hidden"] = c.hidden;
    j["activation"] = ad::activation_name(c.activation);
    j["beta"] = c.beta;
    if (c.time_conditioned) j["time_conditioned"] = *c.time_conditioned;
    if (c.stop_radius) j["stop_radius"] = *c.stop_radius;
    j["per_class"] = c.per_class;
    j["w2_sample"] = c.w2_sample;
    return j;
}

ordered_json dataset_json(const DatasetConfig& d)
{
    ordered_json j;
    j["kind"] = data::dataset_kind(d.spec);
    j["n"] = d.n;
    if (const auto* g = std::get_if<data::GaussianSpec>(&d.spec)) {
        j["mean"] = g->mean;
        j["variances"] = g->variances;
    } else if (const auto* m = std::get_if<data::MixtureSpec>(&d.spec)) {
        j["means"] = m->means;
        j["variances"] = m->variances;
        j["weights"] = m->weights;
        j["stratified"] = m->stratified;
    } else if (const auto* t = std::get_if<data::TwoMoonsSpec>(&d.spec)) {
        j["noise"] = t->noise;
    } else {
        j["path"] = std::get<data::CsvSpec>(d.spec).path;
    }
    return j;
}

ordered_json classifier_json(const ClassifierConfig& c)
{
    return {{"hidden", c.hidden},   {"activation", ad::activation_name(c.activation)},
            {"beta", c.beta},       {"epochs", c.epochs},
            {"lr", c.lr},           {"batch_size", c.batch_size}};
}

const char* target_name(LfdTarget t)
{
    switch (t) {
        case LfdTarget::Potential: return "potential";
        case LfdTarget::Classifier: return "classifier";
        case LfdTarget::Hypothesis: return "hypothesis";
    }
    return "?";
}

LfdTarget parse_target(const std::string& s, const std::string& path)
{
    for (auto t : {LfdTarget::Potential, LfdTarget::Classifier, LfdTarget::Hypothesis})
        if (s == target_name(t)) return t;
    Fields::fail(path, "unknown target '" + s + "' (expected potential, classifier or hypothesis)");
}

bool uses_dataset(ExperimentKind k)
{
    return k == ExperimentKind::Lfd || k == ExperimentKind::MinMax || k == ExperimentKind::Privacy;
}

}  // namespace

ExperimentConfig default_config(ExperimentKind kind)
{
    ExperimentConfig c;
    c.kind = kind;
    c.output_dir = std::string("flowdro-") + kind_name(kind);
    switch (kind) {
        case ExperimentKind::Lfd:
            c.dataset.spec = data::GaussianSpec{{0.0, 0.0}, {1.0, 1.0}};
            c.dataset.n = 2048;
            c.lfd.train.gamma.gamma = 0.5;
            c.lfd.train.integrator = {flow::Method::Euler, 1};
            c.lfd.train.epochs = 300;
            c.lfd.train.hidden = {32, 32};
            break;
        case ExperimentKind::MinMax:
            c.dataset.spec = data::MixtureSpec{{{-2.0, -0.3}, {2.0, 0.3}}, {{1.0, 0.0025}, {1.0, 0.0025}}, {0.5, 0.5}};
            c.dataset.n = 1000;
            c.classifier.hidden = {16};
            c.classifier.epochs = 300;
            c.minmax.frm.iterations = 300;
            c.minmax.frm.hidden = {16};
            c.minmax.frm.integrator = {flow::Method::Euler, 1};
            break;
        case ExperimentKind::WdroLp: break;
        case ExperimentKind::Privacy:
            c.dataset.spec = data::MixtureSpec{{{-3.0, -3.0}, {3.0, -3.0}, {-3.0, 3.0}, {3.0, 3.0}},
                                               {{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}},
                                               {0.25, 0.25, 0.25, 0.25}};
            c.dataset.n = 2000;
            c.classifier.hidden = {16};
            c.classifier.epochs = 200;
            c.privacy.dpm.gamma.gamma = 2.0;
            c.privacy.dpm.integrator = {flow::Method::Euler, 1};
            c.privacy.dpm.epochs = 150;
            c.privacy.dpm.hidden = {16};
            break;
        case ExperimentKind::Verify: break;
    }
    return c;
}

ExperimentConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir)
{
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config: not valid JSON: ") + e.what());
    }
    Fields f(root, "");
    const auto kind = parse_kind(f.require<std::string>("experiment"));
    ExperimentConfig c = default_config(kind);
    c.seed = f.get("seed", c.seed);
    c.output_dir = f.get("output_dir", c.output_dir);

    auto section = [&](const char* key, bool allowed) {
        if (f.has(key) && !allowed)
            Fields::fail(key, std::string("not used by experiment '") + kind_name(kind) + "'");
        return f.has(key);
    };
    if (section("dataset", uses_dataset(kind))) c.dataset = parse_dataset(f.child("dataset"), base_dir);
    if (section("classifier", uses_dataset(kind))) c.classifier = parse_classifier(f.child("classifier"));
    if (section("lfd", kind == ExperimentKind::Lfd)) {
        auto s = f.child("lfd");
        auto& l = c.lfd;
        l.target = parse_target(s.get<std::string>("target", target_name(l.target)), s.where("target"));
        l.potential = s.get("potential", l.potential);
        check(l.potential == "quadratic" || l.potential == "linear", s.where("potential"),
              "expected quadratic or linear");
        l.center = s.get("center", l.center);
        l.scale = s.get("scale", l.scale);
        l.slope = s.get("slope", l.slope);
        if (s.has("train")) l.train = parse_train(s.child("train"), l.train);
        l.generating = s.choice("generating", risk::generating_name(l.generating), risk::parse_generating);
        l.target_radius = s.get("target_radius", l.target_radius);
        l.calibration_tol = s.get("calibration_tol", l.calibration_tol);
        l.gamma_lo = s.get("gamma_lo", l.gamma_lo);
        l.gamma_hi = s.get("gamma_hi", l.gamma_hi);
        l.histogram_bins = s.get("histogram_bins", l.histogram_bins);
        l.pgd_steps = s.get("pgd_steps", l.pgd_steps);
        s.finish();
        check(l.target_radius > 0, s.where("target_radius"), "must be positive");
        check(l.calibration_tol > 0, s.where("calibration_tol"), "must be positive");
        check(l.gamma_lo > 0 && l.gamma_hi > l.gamma_lo, s.where("gamma_hi"), "need 0 < gamma_lo < gamma_hi");
        check(l.histogram_bins >= 2, s.where("histogram_bins"), "must be at least 2");
        check(l.pgd_steps >= 1, s.where("pgd_steps"), "must be at least 1");
    }
    if (section("minmax", kind == ExperimentKind::MinMax)) {
        auto s = f.child("minmax");
        auto& m = c.minmax;
        m.frm.gamma = s.get("gamma", m.frm.gamma);
        m.frm.iterations = s.get("iterations", m.frm.iterations);
        m.frm.inner_loops = s.get("inner_loops", m.frm.inner_loops);
        m.frm.classifier_lr = s.get("classifier_lr", m.frm.classifier_lr);
        m.frm.flow_lr = s.get("flow_lr", m.frm.flow_lr);
        m.frm.batch_size = s.get("batch_size", m.frm.batch_size);
        if (s.has("integrator")) m.frm.integrator = parse_integrator(s.child("integrator"), m.frm.integrator);
        m.frm.hidden = s.get("hidden", m.frm.hidden);
        m.frm.warm_start = s.get("warm_start", m.frm.warm_start);
        m.attack_fractions = s.get("attack_fractions", m.attack_fractions);
        m.pgd_steps = s.get("pgd_steps", m.pgd_steps);
        m.test_n = s.get("test_n", m.test_n);
        s.finish();
        try {
            m.frm.validate();
        } catch (const ValidationError& e) {
            Fields::fail("minmax", e.what());
        }
        check(!m.attack_fractions.empty(), s.where("attack_fractions"), "must be nonempty");
        for (double a : m.attack_fractions) check(a >= 0, s.where("attack_fractions"), "fractions must be >= 0");
        check(m.pgd_steps >= 1, s.where("pgd_steps"), "must be at least 1");
        check(m.test_n >= 1, s.where("test_n"), "must be at least 1");
    }
    if (section("wdro", kind == ExperimentKind::WdroLp)) {
        auto s = f.child("wdro");
        auto& w = c.wdro;
        w.instance = s.get("instance", w.instance);
        if (!w.instance.empty()) {
            const auto full = resolve(base_dir, w.instance);
            check(std::filesystem::exists(full), s.where("instance"), "file '" + full.string() + "' does not exist");
            w.instance = full.string();
        }
        w.n_per_class = s.get("n_per_class", w.n_per_class);
        w.eps1 = s.get("eps1", w.eps1);
        w.eps2 = s.get("eps2", w.eps2);
        w.squared_cost = s.get("squared_cost", w.squared_cost);
        w.bandwidth = s.get("bandwidth", w.bandwidth);
        w.samples = s.get("samples", w.samples);
        s.finish();
        check(w.n_per_class >= 1 && 2 * w.n_per_class <= wdro::kMaxLpSamples, s.where("n_per_class"),
              "must be in [1, 30]");
        check(w.eps1 >= 0 && w.eps2 >= 0, s.where("eps1"), "radii must be nonnegative");
        check(w.bandwidth > 0, s.where("bandwidth"), "must be positive");
        check(w.samples >= 1, s.where("samples"), "must be at least 1");
    }
    if (section("privacy", kind == ExperimentKind::Privacy)) {
        auto s = f.child("privacy");
        auto& p = c.privacy;
        p.classes = s.get("classes", p.classes);
        if (s.has("dpm")) p.dpm = parse_train(s.child("dpm"), p.dpm);
        if (s.has("budget_fraction")) p.budget_fraction = s.get<double>("budget_fraction", 0.0);
        p.gamma_lo = s.get("gamma_lo", p.gamma_lo);
        p.gamma_hi = s.get("gamma_hi", p.gamma_hi);
        p.test_n = s.get("test_n", p.test_n);
        s.finish();
        if (p.budget_fraction) check(*p.budget_fraction > 0, s.where("budget_fraction"), "must be positive");
        check(p.gamma_lo > 0 && p.gamma_hi > p.gamma_lo, s.where("gamma_hi"), "need 0 < gamma_lo < gamma_hi");
        check(p.classes >= 2, s.where("classes"), "must be at least 2");
        check(p.test_n >= 1, s.where("test_n"), "must be at least 1");
    }
    f.finish();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ValidationError("config: cannot open '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

std::string serialize_config(const ExperimentConfig& c)
{
    ordered_json j;
    j["experiment"] = kind_name(c.kind);
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    if (uses_dataset(c.kind)) {
        j["dataset"] = dataset_json(c.dataset);
        j["classifier"] = classifier_json(c.classifier);
    }
    switch (c.kind) {
        case ExperimentKind::Lfd: {
            const auto& l = c.lfd;
            ordered_json s;
            s["target"] = target_name(l.target);
            s["potential"] = l.potential;
            s["center"] = l.center;
            s["scale"] = l.scale;
            s["slope"] = l.slope;
            s["train"] = train_json(l.train);
            s["generating"] = risk::generating_name(l.generating);
            s["target_radius"] = l.target_radius;
            s["calibration_tol"] = l.calibration_tol;
            s["gamma_lo"] = l.gamma_lo;
            s["gamma_hi"] = l.gamma_hi;
            s["histogram_bins"] = l.histogram_bins;
            s["pgd_steps"] = l.pgd_steps;
            j["lfd"] = s;
            break;
        }
        case ExperimentKind::MinMax: {
            const auto& m = c.minmax;
            ordered_json s;
            s["gamma"] = m.frm.gamma;
            s["iterations"] = m.frm.iterations;
            s["inner_loops"] = m.frm.inner_loops;
            s["classifier_lr"] = m.frm.classifier_lr;
            s["flow_lr"] = m.frm.flow_lr;
            s["batch_size"] = m.frm.batch_size;
            s["integrator"] = {{"method", flow::method_name(m.frm.integrator.method)},
                               {"substeps", m.frm.integrator.substeps}};
            s["hidden"] = m.frm.hidden;
            s["warm_start"] = m.frm.warm_start;
            s["attack_fractions"] = m.attack_fractions;
            s["pgd_steps"] = m.pgd_steps;
            s["test_n"] = m.test_n;
            j["minmax"] = s;
            break;
        }
        case ExperimentKind::WdroLp: {
            const auto& w = c.wdro;
            ordered_json s;
            s["instance"] = w.instance;
            s["n_per_class"] = w.n_per_class;
            s["eps1"] = w.eps1;
            s["eps2"] = w.eps2;
            s["squared_cost"] = w.squared_cost;
            s["bandwidth"] = w.bandwidth;
            s["samples"] = w.samples;
            j["wdro"] = s;
            break;
        }
        case ExperimentKind::Privacy: {
            const auto& p = c.privacy;
            ordered_json s;
            s["classes"] = p.classes;
            s["dpm"] = train_json(p.dpm);
            if (p.budget_fraction) s["budget_fraction"] = *p.budget_fraction;
            s["gamma_lo"] = p.gamma_lo;
            s["gamma_hi"] = p.gamma_hi;
            s["test_n"] = p.test_n;
            j["privacy"] = s;
            break;
        }
        case ExperimentKind::Verify: break;
    }
    return j.dump(2);
}

}  // namespace flowdro::app
