#include "glotdr/train.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>

namespace glotdr::train {

std::string to_string(Scenario s)
{
    switch (s) {
    case Scenario::da: return "da";
    case Scenario::ssl: return "ssl";
    case Scenario::dg: return "dg";
    case Scenario::aml: return "aml";
    }
    return "?";
}

std::string to_string(Preset p)
{
    switch (p) {
    case Preset::erm: return "erm";
    case Preset::pgd_at: return "pgd_at";
    case Preset::trades: return "trades";
    case Preset::lot: return "lot";
    case Preset::got: return "got";
    case Preset::glot: return "glot";
    }
    return "?";
}

Scenario parse_scenario(const std::string& s)
{
    for (auto v : {Scenario::da, Scenario::ssl, Scenario::dg, Scenario::aml})
        if (to_string(v) == s)
            return v;
    throw ConfigError("unknown scenario '" + s + "'");
}

Preset parse_preset(const std::string& s)
{
    for (auto v : {Preset::erm, Preset::pgd_at, Preset::trades, Preset::lot, Preset::got, Preset::glot})
        if (to_string(v) == s)
            return v;
    throw ConfigError("unknown preset '" + s + "'");
}

void validate(const AttackConfig& atk)
{
    if (atk.epsilon < 0.0 || atk.steps < 0 || atk.step < 0.0)
        throw ConfigError("attack radius, steps and step size must be non-negative");
    if (atk.lower && atk.upper && *atk.lower > *atk.upper)
        throw ConfigError("attack input range is empty");
}

TrainConfig with_preset(TrainConfig cfg, Preset p)
{
    cfg.preset = p;
    switch (p) {
    case Preset::erm:
    case Preset::pgd_at:
    case Preset::trades:
        cfg.weights.alpha = 0.0;
        cfg.weights.beta = 0.0;
        cfg.sampler.n_source = 0;
        cfg.sampler.n_target = 0;
        break;
    case Preset::lot:
        cfg.weights.beta = 0.0;
        break;
    case Preset::got:
        cfg.weights.alpha = 0.0;
        cfg.sampler.n_source = 0;
        cfg.sampler.n_target = 0;
        break;
    case Preset::glot:
        break;
    }
    return cfg;
}

void validate(const TrainConfig& cfg)
{
    if (cfg.epochs < 1)
        throw ConfigError("epochs must be at least 1");
    if (cfg.batch_source < 1 || cfg.batch_target < 0)
        throw ConfigError("batch sizes must be positive (target may be 0)");
    if (cfg.scenario == Scenario::dg && cfg.batch_target != 0)
        throw ConfigError("domain generalization has no target batch (batch_target must be 0)");
    if ((cfg.scenario == Scenario::da || cfg.scenario == Scenario::ssl) && cfg.batch_target < 1)
        throw ConfigError("adaptation scenarios need a target batch");
    if (cfg.layout.classes < 2 || cfg.layout.input_dim < 1)
        throw ConfigError("network needs at least two classes and one input");
    if (cfg.potential_hidden < 1)
        throw ConfigError("potential network needs a hidden layer");
    if (cfg.trades_beta < 0.0)
        throw ConfigError("TRADES trade-off must be non-negative");
    try {
        glot::validate(cfg.weights);
        glot::validate(cfg.sampler);
        ot::validate(cfg.sinkhorn);
        svgd::validate(cfg.sampler.svgd);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    validate(cfg.attack);
    if (cfg.eval_attack)
        validate(*cfg.eval_attack);
    for (int e : cfg.augment_epochs)
        if (e < 1 || e > cfg.epochs)
            throw ConfigError("augment epoch " + std::to_string(e) + " is outside 1.." + std::to_string(cfg.epochs));
    if (!cfg.augment_epochs.empty() && cfg.sampler.space != glot::SampleSpace::input)
        throw ConfigError("augmenting the source set needs input-space particles");
}

void validate(const TaskData& d, const TrainConfig& cfg)
{
    auto check_labeled = [&](const data::DomainDataset& ds, const char* what) {
        if (ds.size() == 0 || !ds.labeled())
            throw ConfigError(std::string(what) + " must be a nonempty labeled dataset");
        data::validate(ds);
        if (ds.inputs.cols() != cfg.layout.input_dim)
            throw ConfigError(std::string(what) + " width does not match the network input");
        for (int y : ds.labels)
            if (y < 0 || y >= cfg.layout.classes)
                throw ConfigError(std::string(what) + " has a label outside the class range");
    };
    if (d.sources.empty())
        throw ConfigError("no source data");
    for (const auto& s : d.sources)
        check_labeled(s, "source data");
    check_labeled(d.test, "test data");
    switch (cfg.scenario) {
    case Scenario::da:
    case Scenario::ssl:
        if (d.sources.size() != 1 || d.target.size() == 0)
            throw ConfigError("adaptation scenarios need one labeled source and unlabeled target data");
        if (d.target.inputs.cols() != cfg.layout.input_dim)
            throw ConfigError("target width does not match the network input");
        break;
    case Scenario::dg:
        if (d.sources.size() < 2 || d.target.size() != 0)
            throw ConfigError("domain generalization needs at least two source domains and no target data");
        break;
    case Scenario::aml:
        if (d.sources.size() != 1)
            throw ConfigError("adversarial learning uses a single labeled domain");
        break;
    }
}

void MetricsTrace::add(int epoch, std::string metric, double value)
{
    records.push_back({epoch, std::move(metric), value});
}

double MetricsTrace::last(const std::string& metric) const
{
    for (auto it = records.rbegin(); it != records.rend(); ++it)
        if (it->metric == metric)
            return it->value;
    throw std::out_of_range("metric '" + metric + "' was never logged");
}

std::vector<double> MetricsTrace::series(const std::string& metric) const
{
    std::vector<double> out;
    for (const auto& r : records)
        if (r.metric == metric)
            out.push_back(r.value);
    return out;
}

namespace {

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint32_t id)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), id};
    return std::mt19937_64(seq);
}

constexpr std::uint32_t kInitStream = 0;
constexpr std::uint32_t kTargetStream = 1;
constexpr std::uint32_t kPotentialStream = 2;
constexpr std::uint32_t kSourceStream = 16; // + domain index
constexpr std::uint32_t kStreamsPerGeneration = 1024;
constexpr std::uint64_t kAugmentStep = std::uint64_t{1} << 48; // + epoch

int argmax_row(const Matrix& probs, Eigen::Index r)
{
    Eigen::Index best = 0;
    probs.row(r).maxCoeff(&best);
    return static_cast<int>(best);
}

// Endless shuffled pass over one dataset; the tail that does not fill a
// batch is dropped before reshuffling.
class Cursor {
public:
    Cursor(Eigen::Index n, std::mt19937_64 rng) : order_(static_cast<std::size_t>(n)), rng_(std::move(rng))
    {
        for (std::size_t i = 0; i < order_.size(); ++i)
            order_[i] = static_cast<Eigen::Index>(i);
        reshuffle();
    }

    std::vector<Eigen::Index> take(std::size_t count)
    {
        count = std::min(count, order_.size());
        if (pos_ + count > order_.size())
            reshuffle();
        std::vector<Eigen::Index> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                      order_.begin() + static_cast<std::ptrdiff_t>(pos_ + count));
        pos_ += count;
        return out;
    }

private:
    void reshuffle()
    {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
    }

    std::vector<Eigen::Index> order_;
    std::mt19937_64 rng_;
    std::size_t pos_ = 0;
};

class Batcher {
public:
    Batcher(const TaskData& d, const TrainConfig& cfg, std::uint32_t generation = 0) : data_(d), cfg_(cfg)
    {
        const std::uint32_t base = generation * kStreamsPerGeneration;
        for (std::size_t k = 0; k < d.sources.size(); ++k) {
            sources_.emplace_back(d.sources[k].size(),
                                  stream_rng(cfg.seed, base + kSourceStream + static_cast<std::uint32_t>(k)));
            const auto b = std::min<Eigen::Index>(cfg.batch_source, d.sources[k].size());
            steps_ = std::max(steps_, static_cast<int>(d.sources[k].size() / b));
        }
        if (d.target.size() > 0 && cfg.batch_target > 0)
            target_.emplace(d.target.size(), stream_rng(cfg.seed, base + kTargetStream));
    }

    int steps_per_epoch() const { return steps_; }

    glot::AnchorBatch next()
    {
        glot::AnchorBatch b;
        std::vector<data::DomainDataset> parts;
        for (std::size_t k = 0; k < sources_.size(); ++k) {
            auto idx = sources_[k].take(static_cast<std::size_t>(cfg_.batch_source));
            parts.push_back(data::subset(data_.sources[k], idx));
            b.source_domain.insert(b.source_domain.end(), idx.size(), static_cast<int>(k));
        }
        auto merged = data::concatenate(parts);
        b.source_x = std::move(merged.inputs);
        b.source_y = std::move(merged.labels);
        if (target_)
            b.target_x = data::subset(data_.target, target_->take(static_cast<std::size_t>(cfg_.batch_target))).inputs;
        else
            b.target_x.resize(0, b.source_x.cols());
        return b;
    }

private:
    const TaskData& data_;
    const TrainConfig& cfg_;
    std::vector<Cursor> sources_;
    std::optional<Cursor> target_;
    int steps_ = 1;
};

struct StepOutput {
    glot::RiskComponents parts;
    Network<double> grad;
};

using AugmentFn = std::function<std::vector<data::DomainDataset>(const Network<double>&, const TaskData&, int)>;

template <typename StepFn>
TrainResult training_loop(const TrainConfig& cfg, const TaskData& data, StepFn&& step, const AugmentFn& augment = {})
{
    validate(cfg);
    validate(data, cfg);
    auto init = stream_rng(cfg.seed, kInitStream);
    TrainResult result{make_network(cfg.layout, init), {}};
    Network<double>& net = result.net;
    Optimizer<double> opt(cfg.optimizer, net.parameter_count());
    TaskData work;
    const TaskData* current = &data;
    std::uint32_t generation = 0;
    auto batcher = std::make_unique<Batcher>(data, cfg);
    std::uint64_t global_step = 0;
    const auto train_all = data::concatenate(data.sources);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const int e = epoch + 1;
        if (augment && std::find(cfg.augment_epochs.begin(), cfg.augment_epochs.end(), e) != cfg.augment_epochs.end()) {
            auto extra = augment(net, *current, e);
            if (current == &data) {
                work = data;
                current = &work;
            }
            for (std::size_t k = 0; k < extra.size(); ++k)
                if (extra[k].size() > 0)
                    work.sources[k] = data::concatenate({work.sources[k], extra[k]});
            batcher = std::make_unique<Batcher>(work, cfg, ++generation);
        }
        const double lr = cfg.optimizer.lr * schedule_factor(cfg.lr_schedule, epoch);
        const double weight_factor = schedule_factor(cfg.weight_schedule, epoch);
        glot::RiskComponents sum;
        const int steps = batcher->steps_per_epoch();
        for (int s = 0; s < steps; ++s, ++global_step) {
            const auto batch = batcher->next();
            StepOutput out = step(net, batch, global_step, weight_factor);
            if (!std::isfinite(out.parts.total))
                throw NonFiniteError("non-finite training loss at epoch " + std::to_string(epoch + 1), epoch + 1);
            sum.ce += out.parts.ce;
            sum.local += out.parts.local;
            sum.global += out.parts.global;
            sum.total += out.parts.total;
            Vector params = flatten(net);
            opt.step(params, flatten(out.grad), lr);
            unflatten(params, net);
        }
        result.trace.add(e, "loss_ce", sum.ce / steps);
        result.trace.add(e, "loss_local", sum.local / steps);
        result.trace.add(e, "loss_global", sum.global / steps);
        result.trace.add(e, "loss_total", sum.total / steps);
        result.trace.add(e, "lr", lr);
        result.trace.add(e, "source_acc", evaluate(net, train_all));
        result.trace.add(e, "test_acc", evaluate(net, data.test));
        if (cfg.eval_attack)
            result.trace.add(e, "robust_acc", evaluate_robust(net, data.test, *cfg.eval_attack));
    }
    return result;
}

StepOutput erm_step(const Network<double>& net, const glot::AnchorBatch& batch)
{
    auto [ce, g] = grad(net, cross_entropy_loss(batch.source_y), batch.source_x);
    StepOutput out{{}, std::move(g)};
    out.parts.ce = ce;
    out.parts.total = ce;
    return out;
}

Matrix repeat_rows(const Matrix& m, int times)
{
    Matrix out(m.rows() * times, m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (int j = 0; j < times; ++j)
            out.row(i * times + j) = m.row(i);
    return out;
}

Network<double> as_network(const Mlp<double>& mlp)
{
    return {Mlp<double>{}, mlp};
}

// Global regularizer of one step: adds beta * d(global)/d(psi) into `g`.
class GlobalRegularizer {
public:
    GlobalRegularizer(const TrainConfig& cfg) : cfg_(cfg)
    {
        const bool wants_potential = cfg.estimator == glot::Estimator::potential && cfg.scenario != Scenario::dg &&
                                     cfg.weights.beta > 0.0;
        if (wants_potential) {
            auto rng = stream_rng(cfg.seed, kPotentialStream);
            const int latent = cfg.layout.feature_widths.empty() ? cfg.layout.input_dim : cfg.layout.feature_widths.back();
            potential_ = ot::make_potential_net(latent + cfg.layout.classes, cfg.potential_hidden, rng);
            potential_opt_.emplace(cfg.potential_optimizer, potential_->mlp.parameter_count());
        }
    }

    double apply(const Network<double>& net, const glot::AnchorBatch& batch, const glot::PerturbedBatch& z,
                 double beta, std::uint64_t step, Network<double>& g)
    {
        // pairwise squared distances stay below 4 * the total squared norm
        const auto check_scale = [step](const Matrix& f) {
            if (!std::isfinite(4.0 * f.squaredNorm()))
                throw NonFiniteError("features overflow the transport cost at step " + std::to_string(step),
                                     static_cast<int>(step));
        };
        glot::GlobalOtConfig ocfg;
        ocfg.sinkhorn = cfg_.sinkhorn;
        if (potential_) {
            ocfg.estimator = glot::Estimator::potential;
            ocfg.potential = &*potential_;
        }
        const auto anchors = forward(net, batch.source_x);
        check_scale(anchors.features);
        glot::GlobalTerm term;
        switch (cfg_.scenario) {
        case Scenario::da:
        case Scenario::ssl: {
            if (batch.target_x.rows() == 0)
                return 0.0;
            const auto target = forward(net, batch.target_x);
            check_scale(target.features);
            term = glot::global_da_ssl({anchors.features, anchors.probs, {}}, {target.features, target.probs, {}},
                                       cfg_.weights.gamma_pred, ocfg);
            backward(net, target, Matrix(beta * term.d_target_features),
                     softmax_backward(target.probs, Matrix(beta * term.d_target_probs)), &g);
            backward(net, anchors, Matrix(beta * term.d_source_features),
                     softmax_backward(anchors.probs, Matrix(beta * term.d_source_probs)), &g);
            break;
        }
        case Scenario::dg: {
            term = glot::global_dg(anchors.features, batch.source_y, batch.source_domain,
                                   static_cast<int>(*std::max_element(batch.source_domain.begin(),
                                                                      batch.source_domain.end())) + 1,
                                   cfg_.layout.classes, cfg_.sinkhorn);
            backward(net, anchors, Matrix(beta * term.d_source_features), Matrix(), &g);
            break;
        }
        case Scenario::aml: {
            if (z.n_source == 0 || z.source_particles.rows() == 0)
                return 0.0;
            const int n = z.n_source;
            NetworkPass<double> adv;
            if (z.space == glot::SampleSpace::input)
                adv = forward(net, z.source_particles);
            else
                adv = forward_head(net, Matrix(repeat_rows(anchors.features, n) +
                                               (z.source_particles - repeat_rows(z.source_base, n))));
            check_scale(adv.features);
            std::vector<int> adv_labels;
            for (int y : batch.source_y)
                adv_labels.insert(adv_labels.end(), static_cast<std::size_t>(n), y);
            term = glot::global_aml({anchors.features, anchors.probs, batch.source_y},
                                    {adv.features, adv.probs, adv_labels}, cfg_.weights.gamma_pred, ocfg);
            const Matrix adv_logits = softmax_backward(adv.probs, Matrix(beta * term.d_target_probs));
            Matrix anchor_features = beta * term.d_source_features;
            if (z.space == glot::SampleSpace::input) {
                backward(net, adv, Matrix(beta * term.d_target_features), adv_logits, &g);
            } else {
                const Matrix d_lat = backward_head(net, adv, adv_logits, &g) + beta * term.d_target_features;
                for (Eigen::Index r = 0; r < d_lat.rows(); ++r)
                    anchor_features.row(r / n) += d_lat.row(r);
            }
            backward(net, anchors, anchor_features, softmax_backward(anchors.probs, Matrix(beta * term.d_source_probs)),
                     &g);
            break;
        }
        }
        if (potential_ && term.d_potential.parameter_count() > 0) {
            Network<double> pot = as_network(potential_->mlp);
            Vector params = flatten(pot);
            potential_opt_->step(params, Vector(-flatten(as_network(term.d_potential))), cfg_.potential_optimizer.lr);
            unflatten(params, pot);
            potential_->mlp = pot.head;
        }
        return term.value;
    }

private:
    const TrainConfig& cfg_;
    std::optional<ot::PotentialNet> potential_;
    std::optional<Optimizer<double>> potential_opt_;
};

Vector kl_values(const Matrix& p, const Matrix& q)
{
    Vector out(p.rows());
    for (Eigen::Index r = 0; r < p.rows(); ++r)
        out(r) = kl_divergence(p.row(r), q.row(r));
    return out;
}

// d KL(p || q) / dp and / dq, row by row.
void kl_grads(const Matrix& p, const Matrix& q, Matrix& dp, Matrix& dq)
{
    const double f = kProbFloor;
    dp = ((p.array() + f).log() + p.array() / (p.array() + f) - (q.array() + f).log()).matrix();
    dq = (-p.array() / (q.array() + f)).matrix();
}

} // namespace

TrainResult train_erm(const TrainConfig& cfg, const TaskData& data)
{
    return training_loop(cfg, data, [&](const Network<double>& net, const glot::AnchorBatch& batch, std::uint64_t,
                                        double) { return erm_step(net, batch); });
}

namespace {

AugmentFn augment_sources(const TrainConfig& cfg)
{
    if (cfg.augment_epochs.empty() || cfg.sampler.n_source == 0)
        return {};
    return [&cfg](const Network<double>& net, const TaskData& d, int epoch) {
        const double factor = schedule_factor(cfg.weight_schedule, epoch - 1);
        glot::SamplerConfig sampler = cfg.sampler;
        sampler.alpha = cfg.weights.alpha * factor;
        sampler.n_target = 0;
        std::vector<data::DomainDataset> out;
        for (std::size_t k = 0; k < d.sources.size(); ++k) {
            glot::AnchorBatch all;
            all.source_x = d.sources[k].inputs;
            all.source_y = d.sources[k].labels;
            all.source_domain.assign(d.sources[k].labels.size(), static_cast<int>(k));
            all.target_x.resize(0, all.source_x.cols());
            const auto z = glot::sample_particles(all, sampler, net, cfg.seed,
                                                  kAugmentStep + static_cast<std::uint64_t>(epoch) * 64 + k);
            data::DomainDataset extra = d.sources[k];
            extra.inputs = z.source_particles;
            extra.labels.clear();
            for (int y : all.source_y)
                extra.labels.insert(extra.labels.end(), static_cast<std::size_t>(sampler.n_source), y);
            out.push_back(std::move(extra));
        }
        return out;
    };
}

} // namespace

TrainResult train_glot(const TrainConfig& cfg, const TaskData& data)
{
    GlobalRegularizer global(cfg);
    return training_loop(cfg, data, [&](const Network<double>& net, const glot::AnchorBatch& batch,
                                        std::uint64_t step, double factor) {
        glot::RiskWeights w = cfg.weights;
        w.alpha *= factor;
        w.beta *= factor;
        glot::SamplerConfig sampler = cfg.sampler;
        sampler.alpha = w.alpha;
        const auto z = glot::sample_particles(batch, sampler, net, cfg.seed, step);

        auto [ce, g] = grad(net, cross_entropy_loss(batch.source_y), batch.source_x);
        StepOutput out{{}, std::move(g)};
        out.parts.ce = ce;
        glot::particle_terms_gradient(net, z, w, out.parts, out.grad);
        if (w.beta > 0.0)
            out.parts.global = global.apply(net, batch, z, w.beta, step, out.grad);
        out.parts.total = out.parts.ce + w.alpha * out.parts.local + w.beta * out.parts.global;
        return out;
    }, augment_sources(cfg));
}

TrainResult train_pgd_at(const TrainConfig& cfg, const TaskData& data)
{
    return training_loop(cfg, data, [&](const Network<double>& net, const glot::AnchorBatch& batch, std::uint64_t,
                                        double) {
        glot::AnchorBatch adv = batch;
        adv.source_x = pgd_attack(net, batch.source_x, batch.source_y, cfg.attack);
        return erm_step(net, adv);
    });
}

TrainResult train_trades(const TrainConfig& cfg, const TaskData& data)
{
    return training_loop(cfg, data, [&](const Network<double>& net, const glot::AnchorBatch& batch,
                                        std::uint64_t step, double) {
        if (cfg.trades_beta == 0.0)
            return erm_step(net, batch);
        const Matrix x_adv = pgd_attack(net, batch.source_x, batch.source_y, cfg.attack, AttackObjective::kl_to_clean,
                                        glot::particle_seed(cfg.seed, step, 2, 0));
        const auto clean = forward(net, batch.source_x);
        const auto adv = forward(net, x_adv);
        Matrix d_clean;
        const double ce = cross_entropy_batch(clean.probs, batch.source_y, &d_clean);
        const double kl = kl_values(adv.probs, clean.probs).mean();
        Matrix dp, dq;
        kl_grads(adv.probs, clean.probs, dp, dq);
        const double c = cfg.trades_beta / static_cast<double>(clean.probs.rows());
        d_clean += c * dq;
        StepOutput out{{}, net.zeros_like()};
        backward(net, clean, Matrix(), softmax_backward(clean.probs, d_clean), &out.grad);
        backward(net, adv, Matrix(), softmax_backward(adv.probs, Matrix(c * dp)), &out.grad);
        out.parts.ce = ce;
        out.parts.local = kl;
        out.parts.total = ce + cfg.trades_beta * kl;
        return out;
    });
}

TrainResult run(const TrainConfig& cfg, const TaskData& data)
{
    switch (cfg.preset) {
    case Preset::erm: return train_erm(cfg, data);
    case Preset::pgd_at: return train_pgd_at(cfg, data);
    case Preset::trades: return train_trades(cfg, data);
    case Preset::lot:
    case Preset::got:
    case Preset::glot: return train_glot(cfg, data);
    }
    throw ConfigError("unknown preset");
}

Vector sample_losses(const Network<double>& net, const Matrix& x, const std::vector<int>& y)
{
    const auto pass = forward(net, x);
    Vector out(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r)
        out(r) = cross_entropy(pass.probs.row(r), y[static_cast<std::size_t>(r)]);
    return out;
}

Matrix pgd_attack(const Network<double>& net, const Matrix& x, const std::vector<int>& y, const AttackConfig& atk,
                  AttackObjective objective, std::uint64_t seed)
{
    validate(atk);
    if (static_cast<Eigen::Index>(y.size()) != x.rows())
        throw DimensionError("one label per attacked row is required");
    const bool ce = objective == AttackObjective::cross_entropy;
    const Matrix clean_probs = forward(net, x).probs;

    // score orders candidates: misclassified first (cross-entropy only), then by objective
    auto score = [&](const Matrix& pts, Vector& value, std::vector<char>& wrong) {
        const auto pass = forward(net, pts);
        value.resize(pts.rows());
        wrong.assign(static_cast<std::size_t>(pts.rows()), 0);
        for (Eigen::Index r = 0; r < pts.rows(); ++r) {
            const int yr = y[static_cast<std::size_t>(r)];
            if (ce) {
                value(r) = cross_entropy(pass.probs.row(r), yr);
                wrong[static_cast<std::size_t>(r)] = argmax_row(pass.probs, r) != yr;
            } else {
                value(r) = kl_divergence(pass.probs.row(r), clean_probs.row(r));
            }
        }
    };
    auto project = [&](Matrix& pts) {
        for (Eigen::Index r = 0; r < pts.rows(); ++r) {
            if (atk.lower)
                pts.row(r) = pts.row(r).cwiseMax(*atk.lower);
            if (atk.upper)
                pts.row(r) = pts.row(r).cwiseMin(*atk.upper);
            pts.row(r) = svgd::project_ball(pts.row(r), {x.row(r), atk.epsilon, svgd::NormOrder::linf});
        }
    };

    Matrix best = x;
    Vector best_value;
    std::vector<char> best_wrong;
    score(best, best_value, best_wrong);
    if (atk.epsilon == 0.0 || atk.steps == 0)
        return best;

    Matrix cur = x;
    if (!ce) {
        // the divergence has a stationary point at x itself
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> n01(0.0, 1e-3);
        cur = x.unaryExpr([&](double v) { return v + n01(rng); });
        project(cur);
    }
    Vector value;
    std::vector<char> wrong;
    for (int k = 0; k < atk.steps; ++k) {
        const auto pass = forward(net, cur);
        Matrix d_probs = Matrix::Zero(pass.probs.rows(), pass.probs.cols());
        if (ce) {
            for (Eigen::Index r = 0; r < cur.rows(); ++r) {
                const int yr = y[static_cast<std::size_t>(r)];
                d_probs(r, yr) = -1.0 / (pass.probs(r, yr) + kProbFloor);
            }
        } else {
            Matrix dq;
            kl_grads(pass.probs, clean_probs, d_probs, dq);
        }
        const Matrix d_x =
            backward(net, pass, Matrix(), softmax_backward(pass.probs, d_probs), static_cast<Network<double>*>(nullptr));
        cur += atk.step * d_x.unaryExpr([](double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); });
        project(cur);
        score(cur, value, wrong);
        for (Eigen::Index r = 0; r < cur.rows(); ++r) {
            const auto i = static_cast<std::size_t>(r);
            const bool better = wrong[i] != best_wrong[i] ? wrong[i] > best_wrong[i] : value(r) > best_value(r);
            if (better) {
                best.row(r) = cur.row(r);
                best_value(r) = value(r);
                best_wrong[i] = wrong[i];
            }
        }
    }
    return best;
}

double evaluate(const Network<double>& net, const data::DomainDataset& d)
{
    if (d.size() == 0 || !d.labeled())
        throw std::invalid_argument("evaluation needs a nonempty labeled dataset");
    const auto pass = forward(net, d.inputs);
    Eigen::Index correct = 0;
    for (Eigen::Index r = 0; r < d.size(); ++r)
        correct += argmax_row(pass.probs, r) == d.labels[static_cast<std::size_t>(r)];
    return static_cast<double>(correct) / static_cast<double>(d.size());
}

double evaluate_robust(const Network<double>& net, const data::DomainDataset& d, const AttackConfig& atk)
{
    if (d.size() == 0 || !d.labeled())
        throw std::invalid_argument("evaluation needs a nonempty labeled dataset");
    data::DomainDataset adv = d;
    adv.inputs = pgd_attack(net, d.inputs, d.labels, atk);
    return evaluate(net, adv);
}

namespace {

std::uint64_t derived_seed(std::uint64_t seed, std::uint32_t id)
{
    auto rng = stream_rng(seed, id);
    return rng();
}

} // namespace

TaskData moons_da_task(const MoonsTask& spec)
{
    auto [source, target] = data::two_moons_shift(spec.shift);
    target.labels.clear();
    data::MoonsShift test_spec = spec.shift;
    test_spec.n = spec.n_test;
    test_spec.seed = derived_seed(spec.shift.seed, 101);
    TaskData out;
    out.sources.push_back(std::move(source));
    out.target = std::move(target);
    out.test = data::two_moons_shift(test_spec).second;
    return out;
}

TaskData moons_ssl_task(const MoonsTask& spec, int n_labeled)
{
    data::MoonsShift s = spec.shift;
    s.angle_deg = 0.0;
    s.translation = RowVector::Zero(2);
    auto full = data::two_moons_shift(s).first;
    auto split = data::ssl_split(full, n_labeled, 2, derived_seed(s.seed, 102));
    data::MoonsShift test_spec = s;
    test_spec.n = spec.n_test;
    test_spec.seed = derived_seed(s.seed, 103);
    TaskData out;
    out.sources.push_back(std::move(split.labeled));
    out.target = std::move(split.unlabeled);
    out.test = data::two_moons_shift(test_spec).first;
    return out;
}

TaskData blob_dg_task(const data::BlobDomainsSpec& spec)
{
    auto blobs = data::gaussian_blob_domains(spec);
    TaskData out;
    out.test = std::move(blobs.datasets.back());
    blobs.datasets.pop_back();
    out.sources = std::move(blobs.datasets);
    out.target.inputs.resize(0, spec.dim);
    return out;
}

TaskData aml_task(const AmlTask& spec)
{
    TaskData out;
    out.sources.push_back(data::robust_weak_blobs(spec.n_train, spec.weak, spec.robust_mean, spec.robust_sd,
                                                  spec.weak_mean, spec.weak_sd, spec.seed));
    out.test = data::robust_weak_blobs(spec.n_test, spec.weak, spec.robust_mean, spec.robust_sd, spec.weak_mean,
                                       spec.weak_sd, derived_seed(spec.seed, 104));
    out.target.inputs.resize(0, spec.weak + 1);
    return out;
}

} // namespace glotdr::train
