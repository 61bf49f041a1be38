#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "flowdro/measure.hpp"
#include "flowdro/mlp.hpp"

namespace flowdro::risk {

// ---- potentials -------------------------------------------------------------

/// Scalar field V on R^d, evaluated row-wise. V = -r(.; phi) for a risk model,
/// or an analytic test potential.
class Potential {
public:
    virtual ~Potential() = default;

    /// V at every row of x (n x d) as an n x 1 node. `labels` is empty for
    /// unlabeled potentials.
    virtual ad::Var on_tape(ad::Tape& tape, ad::Var x, std::span<const int> labels) const = 0;
    virtual bool needs_labels() const { return false; }

    virtual std::vector<double> values(const ad::DenseArray& x, std::span<const int> labels = {}) const;
    /// Row-wise gradients, n x d.
    virtual ad::DenseArray gradients(const ad::DenseArray& x, std::span<const int> labels = {}) const;

    double value(std::span<const double> x, int label = -1) const;
    std::vector<double> gradient(std::span<const double> x, int label = -1) const;

    /// Smoothness constant L of grad V, when known or estimated.
    std::optional<double> smoothness() const { return smoothness_; }
    void set_smoothness(std::optional<double> l) { smoothness_ = l; }

private:
    std::optional<double> smoothness_;
};

/// V(x) = (a/2) ||x - c||^2.
class QuadraticPotential final : public Potential {
public:
    QuadraticPotential(std::vector<double> center, double scale = 1.0);
    static QuadraticPotential origin(std::size_t dim, double scale = 1.0)
    {
        return QuadraticPotential(std::vector<double>(dim, 0.0), scale);
    }

    ad::Var on_tape(ad::Tape& tape, ad::Var x, std::span<const int> labels) const override;
    std::vector<double> values(const ad::DenseArray& x, std::span<const int> labels = {}) const override;
    ad::DenseArray gradients(const ad::DenseArray& x, std::span<const int> labels = {}) const override;

    const std::vector<double>& center() const { return center_; }
    double scale() const { return scale_; }

private:
    std::vector<double> center_;
    double scale_;
};

/// V(x) = a . x.
class LinearPotential final : public Potential {
public:
    explicit LinearPotential(std::vector<double> slope);

    ad::Var on_tape(ad::Tape& tape, ad::Var x, std::span<const int> labels) const override;
    std::vector<double> values(const ad::DenseArray& x, std::span<const int> labels = {}) const override;
    ad::DenseArray gradients(const ad::DenseArray& x, std::span<const int> labels = {}) const override;

    const std::vector<double>& slope() const { return slope_; }

private:
    std::vector<double> slope_;
};

// ---- risk models --------------------------------------------------------------

/// Decision function phi together with a pointwise loss r(x; phi).
class RiskModel {
public:
    virtual ~RiskModel() = default;

    virtual bool needs_labels() const = 0;
    /// r at each row of x as an n x 1 node, parameters frozen.
    virtual ad::Var loss_on_tape(ad::Tape& tape, ad::Var x, std::span<const int> labels) const = 0;
    /// Same, with parameters as trainable leaves (gradients flow to params()).
    virtual ad::Var loss_on_tape_trainable(ad::Tape& tape, ad::Var x, std::span<const int> labels) = 0;
    virtual ad::ParamStore& params() = 0;
    virtual const ad::ParamStore& params() const = 0;
    virtual std::unique_ptr<RiskModel> clone() const = 0;

    /// Pointwise losses r(x_i; phi).
    std::vector<double> losses(const ad::DenseArray& x, std::span<const int> labels = {}) const;
    /// Row-wise input gradients of r.
    ad::DenseArray input_gradients(const ad::DenseArray& x, std::span<const int> labels = {}) const;
};

/// V(x) = -r(x; phi) for a fixed model. Holds a snapshot (clone) of the model.
class NegatedLossPotential final : public Potential {
public:
    explicit NegatedLossPotential(const RiskModel& model);

    ad::Var on_tape(ad::Tape& tape, ad::Var x, std::span<const int> labels) const override;
    bool needs_labels() const override { return model_->needs_labels(); }
    const RiskModel& model() const { return *model_; }

private:
    std::shared_ptr<const RiskModel> model_;
};

/// C-class MLP classifier with softmax outputs.
class MLPClassifier {
public:
    MLPClassifier() = default;
    explicit MLPClassifier(ad::Mlp net);
    static MLPClassifier initialize(std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t classes,
                                    Rng& rng, ad::Activation act = ad::Activation::Softplus, double beta = 20.0);

    std::size_t classes() const { return net_.spec().output_dim(); }
    std::size_t input_dim() const { return net_.spec().input_dim(); }
    ad::Mlp& net() { return net_; }
    const ad::Mlp& net() const { return net_; }

    ad::DenseArray logits(const ad::DenseArray& x) const { return net_.forward(x); }
    ad::DenseArray probabilities(const ad::DenseArray& x) const;
    std::vector<int> predict(const ad::DenseArray& x) const;

private:
    ad::Mlp net_;
};

/// Cross-entropy risk of an MLPClassifier.
class ClassifierRisk final : public RiskModel {
public:
    explicit ClassifierRisk(MLPClassifier classifier) : classifier_(std::move(classifier)) {}

    bool needs_labels() const override { return true; }
    ad::Var loss_on_tape(ad::Tape& tape, ad::Var x, std::span<const int> labels) const override;
    ad::Var loss_on_tape_trainable(ad::Tape& tape, ad::Var x, std::span<const int> labels) override;
    ad::ParamStore& params() override { return classifier_.net().params(); }
    const ad::ParamStore& params() const override { return classifier_.net().params(); }
    std::unique_ptr<RiskModel> clone() const override { return std::make_unique<ClassifierRisk>(*this); }

    MLPClassifier& classifier() { return classifier_; }
    const MLPClassifier& classifier() const { return classifier_; }

private:
    MLPClassifier classifier_;
};

/// Nonnegative, non-decreasing, convex surrogate f for hypothesis testing.
enum class GeneratingFunction { Exp, Logistic, QuadHinge };

double generating_value(GeneratingFunction f, double t);
ad::Var generating_on_tape(GeneratingFunction f, ad::Var t);
const char* generating_name(GeneratingFunction f);
GeneratingFunction parse_generating(const std::string& s);

/// Scalar detector phi: R^d -> R; decides H1 when phi(x) >= 0.
class ScalarDetector {
public:
    ScalarDetector() = default;
    explicit ScalarDetector(ad::Mlp net);
    static ScalarDetector initialize(std::size_t input_dim, std::vector<std::size_t> hidden, Rng& rng,
                                     ad::Activation act = ad::Activation::Softplus, double beta = 20.0);

    ad::Mlp& net() { return net_; }
    const ad::Mlp& net() const { return net_; }
    std::vector<double> evaluate(const ad::DenseArray& x) const;

private:
    ad::Mlp net_;
};

/// Hypothesis-testing risk: r(x, 0) = f(-phi(x)), r(x, 1) = f(phi(x)).
/// Label 0 is H0 (Q0), label 1 is H1 (Q1).
class HypothesisRisk final : public RiskModel {
public:
    HypothesisRisk(ScalarDetector detector, GeneratingFunction f) : detector_(std::move(detector)), f_(f) {}

    bool needs_labels() const override { return true; }
    ad::Var loss_on_tape(ad::Tape& tape, ad::Var x, std::span<const int> labels) const override;
    ad::Var loss_on_tape_trainable(ad::Tape& tape, ad::Var x, std::span<const int> labels) override;
    ad::ParamStore& params() override { return detector_.net().params(); }
    const ad::ParamStore& params() const override { return detector_.net().params(); }
    std::unique_ptr<RiskModel> clone() const override { return std::make_unique<HypothesisRisk>(*this); }

    ScalarDetector& detector() { return detector_; }
    const ScalarDetector& detector() const { return detector_; }
    GeneratingFunction generating() const { return f_; }

private:
    ad::Var build(ad::Tape& tape, ad::Var x, std::span<const int> labels, const std::vector<ad::Var>& leaves) const;

    ScalarDetector detector_;
    GeneratingFunction f_;
};

/// r(x) = -V(x) for a potential; unlabeled. No trainable parameters.
class PotentialRisk final : public RiskModel {
public:
    explicit PotentialRisk(std::shared_ptr<const Potential> v) : v_(std::move(v)) {}

    bool needs_labels() const override { return v_->needs_labels(); }
    ad::Var loss_on_tape(ad::Tape& tape, ad::Var x, std::span<const int> labels) const override;
    ad::Var loss_on_tape_trainable(ad::Tape& tape, ad::Var x, std::span<const int> labels) override
    {
        return loss_on_tape(tape, x, labels);
    }
    ad::ParamStore& params() override { return empty_; }
    const ad::ParamStore& params() const override { return empty_; }
    std::unique_ptr<RiskModel> clone() const override { return std::make_unique<PotentialRisk>(*this); }

private:
    std::shared_ptr<const Potential> v_;
    ad::ParamStore empty_;
};

// ---- operations ------------------------------------------------------------------

/// Weighted mean of r over Q.
double risk_eval(const RiskModel& model, const EmpiricalMeasure& q);

/// Percentage of points whose argmax prediction equals the label.
double accuracy_eval(const MLPClassifier& model, const EmpiricalMeasure& q);

/// E_{Q0}[f(-phi)] + E_{Q1}[f(phi)].
double hypothesis_risk(const ScalarDetector& detector, const EmpiricalMeasure& q0, const EmpiricalMeasure& q1,
                       GeneratingFunction f);

enum class Norm { L2, Linf };

struct PgdConfig {
    double epsilon = 0.0;
    Norm norm = Norm::L2;
    int steps = 40;
    /// Non-positive means the default 2.5 * epsilon / steps.
    double step_size = 0.0;
};

/// Projected gradient ascent on r inside the epsilon-ball around x. Returns
/// the best iterate found (never worse than x itself).
std::vector<double> pgd_attack(const RiskModel& model, std::span<const double> x, int label, const PgdConfig& cfg);

/// Batched PGD over every point of Q; labels ride along.
EmpiricalMeasure pgd_attack_measure(const RiskModel& model, const EmpiricalMeasure& q, const PgdConfig& cfg);

struct TrainClassifierConfig {
    int epochs = 50;
    double lr = 1e-2;
    std::size_t batch_size = 0;  // 0 = full batch
    std::uint64_t seed = 0;
};

struct TrainClassifierResult {
    std::vector<double> epoch_loss;  // mean minibatch loss per epoch
};

/// ERM under cross-entropy with Adam and seeded shuffling.
TrainClassifierResult train_classifier(MLPClassifier& model, const EmpiricalMeasure& data,
                                       const TrainClassifierConfig& cfg);

/// Fits a detector by minimizing the hypothesis risk on (P0, P1).
std::vector<double> train_detector(ScalarDetector& detector, const EmpiricalMeasure& p0, const EmpiricalMeasure& p1,
                                   GeneratingFunction f, const TrainClassifierConfig& cfg);

/// Max ||grad V(x) - grad V(y)|| / ||x - y|| over random pairs from a box
/// around the points of `reference` (spread = `radius`).
double estimate_smoothness(const Potential& v, const EmpiricalMeasure& reference, std::size_t pairs,
                           double radius, std::uint64_t seed);

}  // namespace flowdro::risk
