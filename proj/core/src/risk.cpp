#include "flowdro/risk.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flowdro/error.hpp"
#include "flowdro/log.hpp"
#include "flowdro/rng.hpp"

namespace flowdro::risk {

using ad::DenseArray;
using ad::Tape;
using ad::Var;

namespace {

std::vector<int> copy_labels(std::span<const int> labels) { return {labels.begin(), labels.end()}; }

void require_labels(std::span<const int> labels, std::size_t n, const char* who)
{
    if (labels.size() != n)
        throw ValidationError(std::string(who) + ": expected " + std::to_string(n) + " labels, got " +
                              std::to_string(labels.size()));
}

}  // namespace

// ---- Potential ----------------------------------------------------------------

std::vector<double> Potential::values(const DenseArray& x, std::span<const int> labels) const
{
    Tape tape;
    Var in = tape.constant(x);
    Var v = on_tape(tape, in, labels);
    const auto& out = tape.value(v);
    return {out.values().begin(), out.values().end()};
}

DenseArray Potential::gradients(const DenseArray& x, std::span<const int> labels) const
{
    Tape tape;
    Var in = tape.input(x);
    Var v = sum(on_tape(tape, in, labels));
    tape.backward(v);
    return tape.grad(in);
}

double Potential::value(std::span<const double> x, int label) const
{
    DenseArray a({1, x.size()}, std::vector<double>(x.begin(), x.end()));
    std::vector<int> l;
    if (label >= 0) l.push_back(label);
    return values(a, l).front();
}

std::vector<double> Potential::gradient(std::span<const double> x, int label) const
{
    DenseArray a({1, x.size()}, std::vector<double>(x.begin(), x.end()));
    std::vector<int> l;
    if (label >= 0) l.push_back(label);
    auto g = gradients(a, l);
    return {g.values().begin(), g.values().end()};
}

QuadraticPotential::QuadraticPotential(std::vector<double> center, double scale)
    : center_(std::move(center)), scale_(scale)
{
    FLOWDRO_REQUIRE(!center_.empty(), "QuadraticPotential: empty center");
    FLOWDRO_REQUIRE(std::isfinite(scale_), "QuadraticPotential: non-finite scale");
    set_smoothness(std::abs(scale_));
}

Var QuadraticPotential::on_tape(Tape& tape, Var x, std::span<const int>) const
{
    const auto& xv = tape.value(x);
    FLOWDRO_REQUIRE(xv.cols() == center_.size(), "QuadraticPotential: dimension mismatch");
    DenseArray shift({xv.rows(), xv.cols()}, 0.0);
    for (std::size_t i = 0; i < xv.rows(); ++i)
        for (std::size_t j = 0; j < xv.cols(); ++j) shift(i, j) = center_[j];
    Var diff = ad::sub(x, tape.constant(std::move(shift)));
    return ad::scale(ad::squared_norm_rows(diff), 0.5 * scale_);
}

std::vector<double> QuadraticPotential::values(const DenseArray& x, std::span<const int>) const
{
    FLOWDRO_REQUIRE(x.cols() == center_.size(), "QuadraticPotential: dimension mismatch");
    std::vector<double> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double s = 0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            const double d = x(i, j) - center_[j];
            s += d * d;
        }
        out[i] = 0.5 * scale_ * s;
    }
    return out;
}

DenseArray QuadraticPotential::gradients(const DenseArray& x, std::span<const int>) const
{
    FLOWDRO_REQUIRE(x.cols() == center_.size(), "QuadraticPotential: dimension mismatch");
    DenseArray g({x.rows(), x.cols()}, 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) g(i, j) = scale_ * (x(i, j) - center_[j]);
    return g;
}

LinearPotential::LinearPotential(std::vector<double> slope) : slope_(std::move(slope))
{
    FLOWDRO_REQUIRE(!slope_.empty(), "LinearPotential: empty slope");
    set_smoothness(0.0);
}

Var LinearPotential::on_tape(Tape& tape, Var x, std::span<const int>) const
{
    FLOWDRO_REQUIRE(tape.value(x).cols() == slope_.size(), "LinearPotential: dimension mismatch");
    return ad::affine(x, tape.constant(DenseArray({slope_.size(), 1}, slope_)));
}

std::vector<double> LinearPotential::values(const DenseArray& x, std::span<const int>) const
{
    FLOWDRO_REQUIRE(x.cols() == slope_.size(), "LinearPotential: dimension mismatch");
    std::vector<double> out(x.rows(), 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out[i] += slope_[j] * x(i, j);
    return out;
}

DenseArray LinearPotential::gradients(const DenseArray& x, std::span<const int>) const
{
    FLOWDRO_REQUIRE(x.cols() == slope_.size(), "LinearPotential: dimension mismatch");
    DenseArray g({x.rows(), x.cols()}, 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) g(i, j) = slope_[j];
    return g;
}

// ---- RiskModel ----------------------------------------------------------------

std::vector<double> RiskModel::losses(const DenseArray& x, std::span<const int> labels) const
{
    Tape tape;
    Var l = loss_on_tape(tape, tape.constant(x), labels);
    const auto& v = tape.value(l);
    return {v.values().begin(), v.values().end()};
}

DenseArray RiskModel::input_gradients(const DenseArray& x, std::span<const int> labels) const
{
    Tape tape;
    Var in = tape.input(x);
    Var l = ad::sum(loss_on_tape(tape, in, labels));
    tape.backward(l);
    return tape.grad(in);
}

NegatedLossPotential::NegatedLossPotential(const RiskModel& model) : model_(model.clone()) {}

Var NegatedLossPotential::on_tape(Tape& tape, Var x, std::span<const int> labels) const
{
    return ad::scale(model_->loss_on_tape(tape, x, labels), -1.0);
}

// ---- classifier ---------------------------------------------------------------

MLPClassifier::MLPClassifier(ad::Mlp net) : net_(std::move(net))
{
    FLOWDRO_REQUIRE(!net_.spec().time_input, "MLPClassifier: time input not supported");
    FLOWDRO_REQUIRE(net_.spec().output_dim() >= 2, "MLPClassifier: need at least two classes");
}

MLPClassifier MLPClassifier::initialize(std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t classes,
                                        Rng& rng, ad::Activation act, double beta)
{
    ad::MlpSpec spec;
    spec.widths.push_back(input_dim);
    spec.widths.insert(spec.widths.end(), hidden.begin(), hidden.end());
    spec.widths.push_back(classes);
    spec.activation = act;
    spec.beta = beta;
    return MLPClassifier(ad::Mlp::initialize(std::move(spec), rng));
}

DenseArray MLPClassifier::probabilities(const DenseArray& x) const
{
    DenseArray z = logits(x);
    const std::size_t c = z.cols();
    for (std::size_t i = 0; i < z.rows(); ++i) {
        auto r = z.row(i);
        const double mx = *std::max_element(r.begin(), r.end());
        double s = 0;
        for (auto& v : r) {
            v = std::exp(v - mx);
            s += v;
        }
        for (std::size_t j = 0; j < c; ++j) r[j] /= s;
    }
    return z;
}

std::vector<int> MLPClassifier::predict(const DenseArray& x) const
{
    DenseArray z = logits(x);
    std::vector<int> out(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) {
        auto r = z.row(i);
        out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
    }
    return out;
}

Var ClassifierRisk::loss_on_tape(Tape& tape, Var x, std::span<const int> labels) const
{
    require_labels(labels, tape.value(x).rows(), "ClassifierRisk");
    const auto& net = classifier_.net();
    return ad::softmax_cross_entropy(net.apply(net.bind_frozen(tape), x), copy_labels(labels));
}

Var ClassifierRisk::loss_on_tape_trainable(Tape& tape, Var x, std::span<const int> labels)
{
    require_labels(labels, tape.value(x).rows(), "ClassifierRisk");
    auto& net = classifier_.net();
    auto leaves = net.bind_trainable(tape);
    return ad::softmax_cross_entropy(net.apply(leaves, x), copy_labels(labels));
}

// ---- hypothesis testing -----------------------------------------------------------

double generating_value(GeneratingFunction f, double t)
{
    switch (f) {
        case GeneratingFunction::Exp: return std::exp(t);
        case GeneratingFunction::Logistic: return ad::kernel::softplus(t, 1.0);
        case GeneratingFunction::QuadHinge: {
            const double h = std::max(t + 1.0, 0.0);
            return h * h;
        }
    }
    return 0.0;
}

Var generating_on_tape(GeneratingFunction f, Var t)
{
    switch (f) {
        case GeneratingFunction::Exp: return ad::exp(t);
        case GeneratingFunction::Logistic: return ad::softplus(t, 1.0);
        case GeneratingFunction::QuadHinge: {
            Var h = ad::relu(ad::scale(t, 1.0, 1.0));
            return ad::mul(h, h);
        }
    }
    return t;
}

const char* generating_name(GeneratingFunction f)
{
    switch (f) {
        case GeneratingFunction::Exp: return "exp";
        case GeneratingFunction::Logistic: return "logistic";
        case GeneratingFunction::QuadHinge: return "quad_hinge";
    }
    return "?";
}

GeneratingFunction parse_generating(const std::string& s)
{
    if (s == "exp") return GeneratingFunction::Exp;
    if (s == "logistic") return GeneratingFunction::Logistic;
    if (s == "quad_hinge") return GeneratingFunction::QuadHinge;
    throw ValidationError("unknown generating function '" + s + "' (expected exp, logistic or quad_hinge)");
}

ScalarDetector::ScalarDetector(ad::Mlp net) : net_(std::move(net))
{
    FLOWDRO_REQUIRE(net_.spec().output_dim() == 1, "ScalarDetector: output width must be 1");
}

ScalarDetector ScalarDetector::initialize(std::size_t input_dim, std::vector<std::size_t> hidden, Rng& rng,
                                          ad::Activation act, double beta)
{
    ad::MlpSpec spec;
    spec.widths.push_back(input_dim);
    spec.widths.insert(spec.widths.end(), hidden.begin(), hidden.end());
    spec.widths.push_back(1);
    spec.activation = act;
    spec.beta = beta;
    return ScalarDetector(ad::Mlp::initialize(std::move(spec), rng));
}

std::vector<double> ScalarDetector::evaluate(const DenseArray& x) const
{
    auto y = net_.forward(x);
    return {y.values().begin(), y.values().end()};
}

Var HypothesisRisk::build(Tape& tape, Var x, std::span<const int> labels, const std::vector<Var>& leaves) const
{
    const std::size_t n = tape.value(x).rows();
    require_labels(labels, n, "HypothesisRisk");
    // sign_i = -1 for H0 rows, +1 for H1 rows; r = f(sign * phi).
    DenseArray sign({n, 1}, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        FLOWDRO_REQUIRE(labels[i] == 0 || labels[i] == 1, "HypothesisRisk: labels must be 0 or 1");
        sign[i] = labels[i] == 0 ? -1.0 : 1.0;
    }
    Var phi = detector_.net().apply(leaves, x);
    return generating_on_tape(f_, ad::mul(phi, tape.constant(std::move(sign))));
}

Var HypothesisRisk::loss_on_tape(Tape& tape, Var x, std::span<const int> labels) const
{
    return build(tape, x, labels, detector_.net().bind_frozen(tape));
}

Var HypothesisRisk::loss_on_tape_trainable(Tape& tape, Var x, std::span<const int> labels)
{
    auto leaves = detector_.net().bind_trainable(tape);
    return build(tape, x, labels, leaves);
}

Var PotentialRisk::loss_on_tape(Tape& tape, Var x, std::span<const int> labels) const
{
    return ad::scale(v_->on_tape(tape, x, labels), -1.0);
}

// ---- operations ------------------------------------------------------------------

double risk_eval(const RiskModel& model, const EmpiricalMeasure& q)
{
    if (model.needs_labels() && !q.has_labels()) throw ValidationError("risk_eval: model requires labels");
    const auto l = model.losses(q.points(), q.labels());
    double s = 0;
    for (std::size_t i = 0; i < l.size(); ++i) s += q.weight(i) * l[i];
    return s;
}

double accuracy_eval(const MLPClassifier& model, const EmpiricalMeasure& q)
{
    if (!q.has_labels()) throw ValidationError("accuracy_eval: measure has no labels");
    const auto pred = model.predict(q.points());
    double hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == q.label(i)) hit += q.weight(i);
    return 100.0 * hit;
}

double hypothesis_risk(const ScalarDetector& detector, const EmpiricalMeasure& q0, const EmpiricalMeasure& q1,
                       GeneratingFunction f)
{
    FLOWDRO_REQUIRE(q0.dim() == q1.dim(), "hypothesis_risk: Q0 and Q1 differ in dimension");
    const auto phi0 = detector.evaluate(q0.points());
    const auto phi1 = detector.evaluate(q1.points());
    double r = 0;
    for (std::size_t i = 0; i < phi0.size(); ++i) r += q0.weight(i) * generating_value(f, -phi0[i]);
    for (std::size_t i = 0; i < phi1.size(); ++i) r += q1.weight(i) * generating_value(f, phi1[i]);
    return r;
}

namespace {

// Projects every row of `x` onto the ball of radius eps around the same row of `x0`.
void project_rows(DenseArray& x, const DenseArray& x0, double eps, Norm norm)
{
    const std::size_t d = x.cols();
    for (std::size_t i = 0; i < x.rows(); ++i) {
        if (norm == Norm::Linf) {
            for (std::size_t j = 0; j < d; ++j) {
                const double lo = x0(i, j) - eps;
                const double hi = x0(i, j) + eps;
                x(i, j) = std::clamp(x(i, j), lo, hi);
            }
        } else {
            double s = 0;
            for (std::size_t j = 0; j < d; ++j) s += (x(i, j) - x0(i, j)) * (x(i, j) - x0(i, j));
            const double nrm = std::sqrt(s);
            if (nrm > eps) {
                const double f = eps / nrm;
                for (std::size_t j = 0; j < d; ++j) x(i, j) = x0(i, j) + f * (x(i, j) - x0(i, j));
            }
        }
    }
}

DenseArray pgd_rows(const RiskModel& model, const DenseArray& x0, std::span<const int> labels, const PgdConfig& cfg)
{
    FLOWDRO_REQUIRE(cfg.epsilon >= 0, "pgd_attack: epsilon must be nonnegative");
    FLOWDRO_REQUIRE(cfg.steps >= 0, "pgd_attack: steps must be nonnegative");
    if (cfg.epsilon == 0 || cfg.steps == 0) return x0;
    const double step = cfg.step_size > 0 ? cfg.step_size : 2.5 * cfg.epsilon / cfg.steps;
    const std::size_t n = x0.rows();
    const std::size_t d = x0.cols();
    DenseArray x = x0;
    DenseArray best = x0;
    auto best_loss = model.losses(x0, labels);
    for (int s = 0; s < cfg.steps; ++s) {
        const DenseArray g = model.input_gradients(x, labels);
        for (std::size_t i = 0; i < n; ++i) {
            if (cfg.norm == Norm::Linf) {
                for (std::size_t j = 0; j < d; ++j) x(i, j) += step * ((g(i, j) > 0) - (g(i, j) < 0));
            } else {
                double s2 = 0;
                for (std::size_t j = 0; j < d; ++j) s2 += g(i, j) * g(i, j);
                const double nrm = std::sqrt(s2);
                if (nrm > 0)
                    for (std::size_t j = 0; j < d; ++j) x(i, j) += step * g(i, j) / nrm;
            }
        }
        project_rows(x, x0, cfg.epsilon, cfg.norm);
        const auto loss = model.losses(x, labels);
        for (std::size_t i = 0; i < n; ++i) {
            if (loss[i] > best_loss[i]) {
                best_loss[i] = loss[i];
                for (std::size_t j = 0; j < d; ++j) best(i, j) = x(i, j);
            }
        }
    }
    return best;
}

}  // namespace

std::vector<double> pgd_attack(const RiskModel& model, std::span<const double> x, int label, const PgdConfig& cfg)
{
    DenseArray x0({1, x.size()}, std::vector<double>(x.begin(), x.end()));
    std::vector<int> l;
    if (label >= 0) l.push_back(label);
    auto out = pgd_rows(model, x0, l, cfg);
    return {out.values().begin(), out.values().end()};
}

EmpiricalMeasure pgd_attack_measure(const RiskModel& model, const EmpiricalMeasure& q, const PgdConfig& cfg)
{
    if (model.needs_labels() && !q.has_labels()) throw ValidationError("pgd_attack: model requires labels");
    return q.with_points(pgd_rows(model, q.points(), q.labels(), cfg));
}

namespace {

template <class LossFn>
std::vector<double> run_epochs(ad::ParamStore& params, std::size_t n, const TrainClassifierConfig& cfg, LossFn&& loss)
{
    FLOWDRO_REQUIRE(cfg.epochs >= 0, "training: epochs must be nonnegative");
    FLOWDRO_REQUIRE(cfg.lr > 0, "training: learning rate must be positive");
    Rng rng(cfg.seed);
    ad::AdamConfig adam;
    adam.lr = cfg.lr;
    const std::size_t batch = cfg.batch_size == 0 ? n : std::min(cfg.batch_size, n);
    std::vector<double> curve;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int e = 0; e < cfg.epochs; ++e) {
        if (batch < n) rng.shuffle(order);
        double total = 0;
        std::size_t count = 0;
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t end = std::min(start + batch, n);
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
            params.zero_grad();
            total += loss(idx) * static_cast<double>(idx.size());
            count += idx.size();
            ad::adam_step(params, adam);
        }
        curve.push_back(total / static_cast<double>(count));
    }
    return curve;
}

}  // namespace

TrainClassifierResult train_classifier(MLPClassifier& model, const EmpiricalMeasure& data,
                                       const TrainClassifierConfig& cfg)
{
    if (!data.has_labels()) throw ValidationError("train_classifier: data has no labels");
    FLOWDRO_REQUIRE(data.dim() == model.input_dim(), "train_classifier: dimension mismatch");
    if (data.distinct_labels().size() < 2) log::warn("train_classifier: training data contains a single class");
    for (int l : data.labels())
        FLOWDRO_REQUIRE(l >= 0 && static_cast<std::size_t>(l) < model.classes(), "train_classifier: label out of range");
    TrainClassifierResult result;
    result.epoch_loss = run_epochs(model.net().params(), data.size(), cfg, [&](const std::vector<std::size_t>& idx) {
        auto sub = data.subset(idx);
        Tape tape;
        auto leaves = model.net().bind_trainable(tape);
        Var x = tape.constant(sub.points());
        Var ce = ad::softmax_cross_entropy(model.net().apply(leaves, x), sub.labels());
        Var w = tape.constant(DenseArray({sub.size(), 1}, sub.weights()));
        Var loss = ad::sum(ad::mul(ce, w));
        tape.backward(loss);
        return tape.value(loss).item();
    });
    return result;
}

std::vector<double> train_detector(ScalarDetector& detector, const EmpiricalMeasure& p0, const EmpiricalMeasure& p1,
                                   GeneratingFunction f, const TrainClassifierConfig& cfg)
{
    auto both = concatenate({p0.with_labels(std::vector<int>(p0.size(), 0)),
                             p1.with_labels(std::vector<int>(p1.size(), 1))});
    HypothesisRisk model(detector, f);
    auto curve = run_epochs(model.params(), both.size(), cfg, [&](const std::vector<std::size_t>& idx) {
        auto sub = both.subset(idx);
        Tape tape;
        Var x = tape.constant(sub.points());
        Var r = model.loss_on_tape_trainable(tape, x, sub.labels());
        // Each class contributes its own expectation: weight 1/n_k per point.
        std::size_t n0 = 0;
        for (int l : sub.labels()) n0 += l == 0;
        const std::size_t n1 = sub.size() - n0;
        DenseArray w({sub.size(), 1}, 0.0);
        for (std::size_t i = 0; i < sub.size(); ++i)
            w[i] = sub.label(i) == 0 ? 1.0 / static_cast<double>(std::max<std::size_t>(n0, 1))
                                     : 1.0 / static_cast<double>(std::max<std::size_t>(n1, 1));
        Var loss = ad::sum(ad::mul(r, tape.constant(std::move(w))));
        tape.backward(loss);
        return tape.value(loss).item();
    });
    detector = model.detector();
    return curve;
}

double estimate_smoothness(const Potential& v, const EmpiricalMeasure& reference, std::size_t pairs, double radius,
                           std::uint64_t seed)
{
    FLOWDRO_REQUIRE(pairs > 0 && radius > 0, "estimate_smoothness: pairs and radius must be positive");
    Rng rng(seed);
    const std::size_t d = reference.dim();
    DenseArray a({pairs, d}, 0.0), b({pairs, d}, 0.0);
    std::vector<int> labels;
    for (std::size_t k = 0; k < pairs; ++k) {
        const std::size_t i = rng.uniform_index(reference.size());
        auto base = reference.point(i);
        for (std::size_t j = 0; j < d; ++j) {
            a(k, j) = base[j] + radius * (2.0 * rng.uniform() - 1.0);
            b(k, j) = a(k, j) + 0.1 * radius * (2.0 * rng.uniform() - 1.0);
        }
        if (reference.has_labels()) labels.push_back(reference.label(i));
    }
    const auto ga = v.gradients(a, labels);
    const auto gb = v.gradients(b, labels);
    double best = 0;
    for (std::size_t k = 0; k < pairs; ++k) {
        double num = 0, den = 0;
        for (std::size_t j = 0; j < d; ++j) {
            num += (ga(k, j) - gb(k, j)) * (ga(k, j) - gb(k, j));
            den += (a(k, j) - b(k, j)) * (a(k, j) - b(k, j));
        }
        if (den > 0) best = std::max(best, std::sqrt(num / den));
    }
    return best;
}

}  // namespace flowdro::risk
