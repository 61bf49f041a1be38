#include "flowdro/dro.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "flowdro/error.hpp"
#include "flowdro/format.hpp"
#include "flowdro/log.hpp"
#include "flowdro/ot.hpp"
#include "flowdro/rng.hpp"

namespace flowdro::dro {

using ad::DenseArray;

std::vector<double> GammaSchedule::resolve(int blocks) const
{
    FLOWDRO_REQUIRE(blocks >= 1, "gamma schedule: block count must be at least 1");
    std::vector<double> out;
    switch (kind) {
        case ScheduleKind::Even: out.assign(blocks, gamma); break;
        case ScheduleKind::Geometric:
            FLOWDRO_REQUIRE(factor > 0, "gamma schedule: geometric factor must be positive");
            out.push_back(gamma);
            for (int k = 1; k < blocks; ++k) out.push_back(out.back() * factor);
            break;
        case ScheduleKind::Explicit:
            FLOWDRO_REQUIRE(static_cast<int>(values.size()) == blocks,
                            "gamma schedule: explicit list has " + std::to_string(values.size()) + " entries for " +
                                std::to_string(blocks) + " blocks");
            out = values;
            break;
    }
    for (double g : out) FLOWDRO_REQUIRE(g > 0 && std::isfinite(g), "gamma schedule: every gamma must be positive");
    return out;
}

const char* schedule_name(ScheduleKind k)
{
    switch (k) {
        case ScheduleKind::Even: return "even";
        case ScheduleKind::Geometric: return "geometric";
        case ScheduleKind::Explicit: return "explicit";
    }
    return "?";
}

ScheduleKind parse_schedule(const std::string& s)
{
    if (s == "even") return ScheduleKind::Even;
    if (s == "geometric") return ScheduleKind::Geometric;
    if (s == "explicit") return ScheduleKind::Explicit;
    throw ValidationError("unknown gamma schedule '" + s + "' (expected even, geometric or explicit)");
}

const char* optimizer_name(Optimizer o) { return o == Optimizer::Adam ? "adam" : "sgd"; }

Optimizer parse_optimizer(const std::string& s)
{
    if (s == "adam") return Optimizer::Adam;
    if (s == "sgd") return Optimizer::Sgd;
    throw ValidationError("unknown optimizer '" + s + "' (expected adam or sgd)");
}

bool LFDTrainConfig::resolved_time_conditioning() const
{
    if (time_conditioned) return *time_conditioned;
    return !(integrator.method == flow::Method::Euler && integrator.substeps == 1);
}

void LFDTrainConfig::validate() const
{
    FLOWDRO_REQUIRE(blocks >= 1, "LFDTrainConfig: blocks must be at least 1");
    FLOWDRO_REQUIRE(epochs >= 0, "LFDTrainConfig: epochs must be nonnegative");
    FLOWDRO_REQUIRE(lr > 0, "LFDTrainConfig: lr must be positive");
    FLOWDRO_REQUIRE(integrator.substeps >= 1, "LFDTrainConfig: substeps must be at least 1");
    FLOWDRO_REQUIRE(w2_sample >= 2, "LFDTrainConfig: w2_sample must be at least 2");
    FLOWDRO_REQUIRE(!stop_radius || *stop_radius >= 0, "LFDTrainConfig: stop_radius must be nonnegative");
    gamma.resolve(blocks);
}

const flow::FlowChain& LabeledTransport::chain_for(int label) const
{
    if (!per_class) return chains.at(0);
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == label) return chains[i];
    throw ValidationError("LabeledTransport: no chain for label " + std::to_string(label));
}

EmpiricalMeasure LabeledTransport::apply(const EmpiricalMeasure& p, flow::EvalCounter* counter) const
{
    if (!per_class) return flow::push_forward(chains.at(0), p, counter);
    FLOWDRO_REQUIRE(p.has_labels(), "LabeledTransport: per-class transport needs labeled input");
    DenseArray out = p.points();
    for (std::size_t c = 0; c < labels.size(); ++c) {
        const auto idx = p.indices_with_label(labels[c]);
        if (idx.empty() || chains[c].empty()) continue;
        DenseArray block({idx.size(), p.dim()});
        for (std::size_t i = 0; i < idx.size(); ++i)
            std::copy_n(p.point(idx[i]).begin(), p.dim(), &block(i, 0));
        const DenseArray mapped = flow::push_points(chains[c], block, counter);
        for (std::size_t i = 0; i < idx.size(); ++i)
            std::copy_n(mapped.row(i).begin(), p.dim(), &out(idx[i], 0));
    }
    for (int l : p.distinct_labels()) chain_for(l);
    return p.with_points(std::move(out));
}

namespace {

/// W2 between P and a pointwise image of P: 1D exact by sorting, otherwise the
/// assignment on up to `limit` rows (chosen by `rows`).
double w2_between(const EmpiricalMeasure& p, const DenseArray& mapped, const std::vector<std::size_t>& rows)
{
    const EmpiricalMeasure q = p.with_points(mapped);
    if (p.dim() == 1) return w2_1d(p, q);
    if (!p.is_uniform()) {
        log::warn("W2 estimate: weighted measure in d > 1; reporting the Monge bound");
        return std::sqrt(displacement_cost(p, mapped));
    }
    if (rows.size() == p.size()) return w2_assignment(p, q).w2;
    const auto ps = p.subset(rows);
    const auto qs = q.subset(rows);
    return w2_assignment(EmpiricalMeasure(ps.points()), EmpiricalMeasure(qs.points())).w2;
}

std::vector<std::size_t> sample_rows(std::size_t n, std::size_t limit, Rng rng)
{
    if (n <= limit) {
        std::vector<std::size_t> all(n);
        for (std::size_t i = 0; i < n; ++i) all[i] = i;
        return all;
    }
    auto perm = rng.permutation(n);
    perm.resize(limit);
    std::sort(perm.begin(), perm.end());
    return perm;
}

double weighted_potential(const risk::Potential& v, const EmpiricalMeasure& q)
{
    const auto vals = v.values(q.points(), q.labels());
    double s = 0;
    for (std::size_t i = 0; i < q.size(); ++i) s += q.weight(i) * vals[i];
    return s;
}

void optimizer_step(ad::ParamStore& store, Optimizer opt, double lr)
{
    if (opt == Optimizer::Adam) {
        ad::AdamConfig c;
        c.lr = lr;
        ad::adam_step(store, c);
    } else {
        ad::sgd_step(store, lr);
    }
}

}  // namespace

ChainResult train_chain(const risk::Potential& v, const EmpiricalMeasure& p, const LFDTrainConfig& cfg,
                        double risk_sign)
{
    cfg.validate();
    FLOWDRO_REQUIRE(p.size() >= 1, "train_lfd: empty measure");
    if (v.needs_labels() && !p.has_labels()) throw ValidationError("train_lfd: potential requires labeled data");
    const auto gammas = cfg.gamma.resolve(cfg.blocks);
    const Rng root(cfg.seed);
    const auto w2_rows = sample_rows(p.size(), cfg.w2_sample, root.split(0xA11));
    const std::size_t n = p.size();
    const std::size_t batch = cfg.batch_size == 0 ? n : std::min(cfg.batch_size, n);

    ChainResult res;
    res.summary.points = n;
    EmpiricalMeasure current = p;
    for (int k = 0; k < cfg.blocks; ++k) {
        Rng init_rng = root.split(2 * static_cast<std::uint64_t>(k) + 1);
        Rng shuffle_rng = root.split(2 * static_cast<std::uint64_t>(k) + 2);
        flow::FlowBlock block;
        block.field = flow::VelocityField::initialize(p.dim(), cfg.hidden, cfg.resolved_time_conditioning(), init_rng,
                                                      cfg.activation, cfg.beta);
        block.integrator = cfg.integrator;
        block.gamma = gammas[k];

        std::optional<double> initial;
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        for (int e = 0; e < cfg.epochs; ++e) {
            if (batch < n) shuffle_rng.shuffle(order);
            double obj = 0, cost = 0, pot = 0, mass = 0;
            for (std::size_t start = 0; start < n; start += batch) {
                const std::size_t stop = std::min(n, start + batch);
                std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                             order.begin() + static_cast<std::ptrdiff_t>(stop));
                if (batch < n) std::sort(idx.begin(), idx.end());
                const EmpiricalMeasure mb = batch < n ? current.subset(idx) : current;
                flow::ObjectiveTerms terms;
                try {
                    terms = flow::block_objective_grad(block, v, mb);
                } catch (const NumericalError& err) {
                    throw NumericalError("train_lfd: divergence at block " + std::to_string(k) + ", epoch " +
                                         std::to_string(e) + ": " + err.what());
                }
                if (!initial) initial = terms.objective;
                if (terms.objective > 1e3 * std::max(std::abs(*initial), 1.0))
                    throw NumericalError("train_lfd: divergence at block " + std::to_string(k) + ", epoch " +
                                         std::to_string(e) + ": objective " + format_double(terms.objective) +
                                         " exceeds 1e3 times its initial value");
                optimizer_step(block.field.params(), cfg.optimizer, cfg.lr);
                const double w = static_cast<double>(stop - start);
                obj += w * terms.objective;
                cost += w * terms.transport_cost;
                pot += w * terms.potential;
                mass += w;
            }
            EpochRecord rec;
            rec.block = k;
            rec.epoch = e;
            rec.objective = obj / mass;
            rec.transport_cost = cost / mass;
            rec.risk = risk_sign * pot / mass;
            // W2 from P to the current chain image, blocks 1..k (k in progress).
            const auto sub = p.dim() == 1 ? p : p.subset(w2_rows);
            DenseArray mapped = flow::push_points(res.chain, sub.points());
            mapped = flow::integrate_batch(block, mapped);
            rec.w2_estimate = p.dim() == 1 ? w2_1d(p, p.with_points(mapped))
                                           : w2_between(EmpiricalMeasure(sub.points()), mapped,
                                                        sample_rows(sub.size(), sub.size(), Rng(0)));
            res.epochs.push_back(rec);
        }
        const DenseArray next = flow::integrate_batch(block, current.points());
        res.summary.block_costs.push_back(displacement_cost(current, next));
        res.summary.gammas.push_back(block.gamma);
        current = current.with_points(next);
        res.chain.blocks.push_back(std::move(block));
        ++res.summary.blocks_trained;

        if (cfg.stop_radius) {
            const double w2 = w2_between(p, current.points(), w2_rows);
            if (w2 >= *cfg.stop_radius) break;
        }
    }
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    const bool full = n <= kMaxAssignmentSize;
    if (!full) log::warn("train_lfd: W2 estimated on a subsample of " + std::to_string(kMaxAssignmentSize) + " points");
    res.summary.w2 = w2_between(p, current.points(), full ? all : sample_rows(n, kMaxAssignmentSize, root.split(0xB22)));
    res.summary.chain_cost = displacement_cost(p, current.points());
    res.summary.risk = risk_sign * weighted_potential(v, current);
    res.pushforward = std::move(current);
    return res;
}

namespace {

LfdResult train_lfd_impl(const risk::Potential& v, const EmpiricalMeasure& p, const LFDTrainConfig& cfg,
                         double risk_sign)
{
    cfg.validate();
    LfdResult out;
    std::vector<ChainResult> parts;
    std::vector<double> weights;
    if (cfg.per_class && p.has_labels()) {
        out.transport.per_class = true;
        for (int label : p.distinct_labels()) {
            const auto idx = p.indices_with_label(label);
            double w = 0;
            for (auto i : idx) w += p.weight(i);
            LFDTrainConfig sub = cfg;
            sub.seed = Rng(cfg.seed).split(0xC1A55 + static_cast<std::uint64_t>(label)).next_u64();
            auto part = train_chain(v, p.subset(idx), sub, risk_sign);
            part.summary.label = label;
            part.summary.weight = w;
            out.transport.labels.push_back(label);
            out.transport.chains.push_back(part.chain);
            weights.push_back(w);
            parts.push_back(std::move(part));
        }
    } else {
        auto part = train_chain(v, p, cfg, risk_sign);
        out.transport.chains.push_back(part.chain);
        weights.push_back(1.0);
        parts.push_back(std::move(part));
    }

    auto& rep = out.report;
    rep.points = p.size();
    // Epoch rows aggregated over classes by class mass; classes that stopped
    // early contribute to the rows they trained.
    std::size_t rows = 0;
    for (const auto& part : parts) rows = std::max(rows, part.epochs.size());
    for (std::size_t r = 0; r < rows; ++r) {
        EpochRecord agg;
        double mass = 0, w2sq = 0;
        bool first = true;
        for (std::size_t c = 0; c < parts.size(); ++c) {
            if (r >= parts[c].epochs.size()) continue;
            const auto& e = parts[c].epochs[r];
            if (first) {
                agg.block = e.block;
                agg.epoch = e.epoch;
                first = false;
            }
            agg.objective += weights[c] * e.objective;
            agg.transport_cost += weights[c] * e.transport_cost;
            agg.risk += weights[c] * e.risk;
            w2sq += weights[c] * e.w2_estimate * e.w2_estimate;
            mass += weights[c];
        }
        agg.objective /= mass;
        agg.transport_cost /= mass;
        agg.risk /= mass;
        agg.w2_estimate = std::sqrt(w2sq / mass);
        rep.epochs.push_back(agg);
    }
    double w2sq = 0;
    const auto per_point = cfg.integrator.evaluations_per_point();
    for (std::size_t c = 0; c < parts.size(); ++c) {
        const auto& s = parts[c].summary;
        w2sq += weights[c] * s.w2 * s.w2;
        rep.chain_cost += weights[c] * s.chain_cost;
        rep.risk += weights[c] * s.risk;
        rep.pass_evaluations_formula += per_point * static_cast<std::uint64_t>(s.blocks_trained) * s.points;
        rep.classes.push_back(s);
    }
    rep.w2_estimate = std::sqrt(w2sq);

    flow::EvalCounter counter;
    out.pushforward = out.transport.apply(p, &counter);
    rep.pass_evaluations = counter.evaluations;
    return out;
}

}  // namespace

LfdResult train_lfd(const risk::Potential& v, const EmpiricalMeasure& p, const LFDTrainConfig& cfg)
{
    return train_lfd_impl(v, p, cfg, 1.0);
}

LfdResult train_lfd(const risk::RiskModel& model, const EmpiricalMeasure& p, const LFDTrainConfig& cfg)
{
    risk::NegatedLossPotential v(model);
    return train_lfd_impl(v, p, cfg, -1.0);
}

void write_report_csv(const TrainReport& r, std::ostream& out)
{
    out << "block,epoch,objective,transport_cost,w2_estimate,risk\n";
    for (const auto& e : r.epochs)
        out << e.block << ',' << e.epoch << ',' << format_double(e.objective) << ','
            << format_double(e.transport_cost) << ',' << format_double(e.w2_estimate) << ','
            << format_double(e.risk) << '\n';
}

std::string report_json(const TrainReport& r)
{
    nlohmann::ordered_json j;
    j["points"] = r.points;
    j["w2_estimate"] = r.w2_estimate;
    j["chain_cost"] = r.chain_cost;
    j["monge_bound"] = std::sqrt(r.chain_cost);
    j["risk"] = r.risk;
    j["pass_evaluations"] = r.pass_evaluations;
    j["pass_evaluations_formula"] = r.pass_evaluations_formula;
    auto classes = nlohmann::ordered_json::array();
    for (const auto& c : r.classes) {
        nlohmann::ordered_json jc;
        jc["label"] = c.label;
        jc["weight"] = c.weight;
        jc["points"] = c.points;
        jc["blocks_trained"] = c.blocks_trained;
        jc["gammas"] = c.gammas;
        jc["block_costs"] = c.block_costs;
        jc["chain_cost"] = c.chain_cost;
        jc["w2"] = c.w2;
        jc["risk"] = c.risk;
        classes.push_back(jc);
    }
    j["classes"] = classes;
    auto epochs = nlohmann::ordered_json::array();
    for (const auto& e : r.epochs)
        epochs.push_back({{"block", e.block},
                          {"epoch", e.epoch},
                          {"objective", e.objective},
                          {"transport_cost", e.transport_cost},
                          {"w2_estimate", e.w2_estimate},
                          {"risk", e.risk}});
    j["epochs"] = epochs;
    return j.dump(2);
}

// ---- min-max ----------------------------------------------------------------

void MinMaxConfig::validate() const
{
    FLOWDRO_REQUIRE(gamma > 0, "MinMaxConfig: gamma must be positive");
    FLOWDRO_REQUIRE(iterations >= 1, "MinMaxConfig: iterations must be at least 1");
    FLOWDRO_REQUIRE(inner_loops >= 0, "MinMaxConfig: inner_loops must be nonnegative");
    FLOWDRO_REQUIRE(classifier_lr > 0 && flow_lr > 0, "MinMaxConfig: learning rates must be positive");
    FLOWDRO_REQUIRE(integrator.substeps >= 1, "MinMaxConfig: substeps must be at least 1");
}

MinMaxResult solve_minmax(risk::ClassifierRisk& model, const EmpiricalMeasure& p, const MinMaxConfig& cfg)
{
    cfg.validate();
    FLOWDRO_REQUIRE(p.has_labels(), "solve_minmax: labeled data required");
    FLOWDRO_REQUIRE(p.dim() == model.classifier().input_dim(), "solve_minmax: data and classifier differ in dimension");
    const Rng root(cfg.seed);
    const bool timed = !(cfg.integrator.method == flow::Method::Euler && cfg.integrator.substeps == 1);
    auto fresh_flow = [&](std::uint64_t stream) {
        Rng r = root.split(stream);
        flow::FlowBlock b;
        b.field = flow::VelocityField::initialize(p.dim(), cfg.hidden, timed, r);
        b.integrator = cfg.integrator;
        b.gamma = cfg.gamma;
        return b;
    };
    MinMaxResult res;
    res.flow = fresh_flow(1);
    Rng shuffle_rng = root.split(2);
    const std::size_t n = p.size();
    const std::size_t batch = cfg.batch_size == 0 ? n : std::min(cfg.batch_size, n);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::size_t cursor = n;
    auto next_batch = [&]() {
        if (batch == n) return p;
        if (cursor + batch > n) {
            shuffle_rng.shuffle(order);
            cursor = 0;
        }
        std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                     order.begin() + static_cast<std::ptrdiff_t>(cursor + batch));
        cursor += batch;
        std::sort(idx.begin(), idx.end());
        return p.subset(idx);
    };
    std::optional<double> initial;
    ad::AdamConfig flow_adam;
    flow_adam.lr = cfg.flow_lr;
    ad::AdamConfig clf_adam;
    clf_adam.lr = cfg.classifier_lr;
    for (int it = 0; it < cfg.iterations; ++it) {
        if (!cfg.warm_start && it > 0) res.flow = fresh_flow(1000 + static_cast<std::uint64_t>(it));
        const EmpiricalMeasure mb = next_batch();
        MinMaxRecord rec;
        rec.iteration = it;
        if (cfg.inner_loops > 0) {
            const risk::NegatedLossPotential v(model);
            for (int j = 0; j < cfg.inner_loops; ++j) {
                flow::ObjectiveTerms terms;
                try {
                    terms = flow::block_objective_grad(res.flow, v, mb);
                } catch (const NumericalError& err) {
                    throw NumericalError("solve_minmax: divergence at iteration " + std::to_string(it) + ": " +
                                         err.what());
                }
                if (!initial) initial = terms.objective;
                if (terms.objective > 1e3 * std::max(std::abs(*initial), 1.0))
                    throw NumericalError("solve_minmax: divergence at iteration " + std::to_string(it));
                ad::adam_step(res.flow.field.params(), flow_adam);
                rec.flow_objective = terms.objective;
                rec.transport_cost = terms.transport_cost;
            }
        }
        const DenseArray q = cfg.inner_loops > 0 ? flow::integrate_batch(res.flow, mb.points()) : mb.points();
        ad::Tape tape;
        const auto x = tape.constant(q);
        const auto w = tape.constant(DenseArray({mb.size(), 1}, mb.weights()));
        const auto loss = ad::sum(ad::mul(model.loss_on_tape_trainable(tape, x, mb.labels()), w));
        rec.classifier_loss = tape.value(loss).item();
        if (!std::isfinite(rec.classifier_loss))
            throw NumericalError("solve_minmax: non-finite classifier loss at iteration " + std::to_string(it));
        tape.backward(loss);
        ad::adam_step(model.params(), clf_adam);
        res.history.push_back(rec);
    }
    return res;
}

// ---- evaluation ---------------------------------------------------------------------

LfdEvaluation evaluate_lfd(const risk::RiskModel& model, const EmpiricalMeasure& p, const EmpiricalMeasure& q,
                           std::uint64_t seed)
{
    FLOWDRO_REQUIRE(p.dim() == q.dim(), "evaluate_lfd: dimension mismatch");
    LfdEvaluation ev;
    ev.risk_p = risk::risk_eval(model, p);
    ev.risk_q = risk::risk_eval(model, q);
    if (const auto* c = dynamic_cast<const risk::ClassifierRisk*>(&model)) {
        ev.accuracy_p = risk::accuracy_eval(c->classifier(), p);
        ev.accuracy_q = risk::accuracy_eval(c->classifier(), q);
    }
    ev.w2 = p.dim() == 1 ? w2_1d(p, q) : w2_assignment(p, q, seed).w2;
    return ev;
}

Sampler gaussian_sampler(const DiagGaussian& g)
{
    return {g.dim(), [g](std::size_t count, Rng& rng) { return g.sample(count, rng); }};
}

Sampler compose_sampler(const Sampler& base, const flow::FlowChain& chain)
{
    chain.validate();
    if (!chain.empty())
        FLOWDRO_REQUIRE(chain.blocks.front().field.dim() == base.dim,
                        "compose_sampler: base dimension " + std::to_string(base.dim) +
                            " does not match chain dimension " + std::to_string(chain.blocks.front().field.dim()));
    return {base.dim, [base, chain](std::size_t count, Rng& rng) {
                return flow::push_forward(chain, base(count, rng));
            }};
}

}  // namespace flowdro::dro
