#include "glotdr/glot.hpp"

#include "glotdr/core/grad.hpp"
#include "glotdr/core/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace glotdr::glot {

void validate(const RiskWeights& w)
{
    if (w.alpha < 0.0 || w.beta < 0.0 || w.gamma_pred < 0.0)
        throw std::invalid_argument("risk weights must be non-negative");
}

namespace {

Matrix repeat_rows(const Matrix& m, int times)
{
    Matrix out(m.rows() * times, m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (int j = 0; j < times; ++j)
            out.row(i * times + j) = m.row(i);
    return out;
}

std::vector<int> repeat_labels(const std::vector<int>& y, int times)
{
    std::vector<int> out;
    out.reserve(y.size() * static_cast<std::size_t>(times));
    for (int v : y)
        for (int j = 0; j < times; ++j)
            out.push_back(v);
    return out;
}

} // namespace

PerturbedBatch unperturbed(const AnchorBatch& batch, int n_source, int n_target)
{
    PerturbedBatch z;
    z.source_anchors = batch.source_x;
    z.source_labels = batch.source_y;
    z.source_particles = repeat_rows(batch.source_x, n_source);
    z.n_source = n_source;
    z.target_anchors = batch.target_x;
    z.target_particles = repeat_rows(batch.target_x, n_target);
    z.n_target = n_target;
    return z;
}

double rho_cost(const PerturbedBatch& z, const PerturbedBatch& z_tilde, svgd::NormOrder p, double q)
{
    if (!(q >= 1.0))
        throw std::invalid_argument("rho_cost needs q >= 1");
    if (z.source_particles.rows() != z_tilde.source_particles.rows() ||
        z.target_particles.rows() != z_tilde.target_particles.rows() ||
        z.source_anchors.rows() != z_tilde.source_anchors.rows() ||
        z.target_anchors.rows() != z_tilde.target_anchors.rows())
        throw DimensionError("Z and Z~ are not aligned");
    constexpr double inf = std::numeric_limits<double>::infinity();
    if (z.source_anchors != z_tilde.source_anchors || z.target_anchors != z_tilde.target_anchors)
        return inf;
    if (z.source_labels != z_tilde.source_labels)
        return inf;
    double total = 0.0;
    for (const auto* pair : {&z.source_particles, &z.target_particles}) {
        const Matrix& a = *pair;
        const Matrix& b = pair == &z.source_particles ? z_tilde.source_particles : z_tilde.target_particles;
        for (Eigen::Index r = 0; r < a.rows(); ++r)
            total += std::pow(svgd::distance(a.row(r), b.row(r), p), q);
    }
    return total;
}

double support_supremum(const Vector& weights, const std::vector<Vector>& distances)
{
    if (static_cast<std::size_t>(weights.size()) != distances.size())
        throw DimensionError("one distance vector per atom is required");
    double m = 0.0;
    for (std::size_t k = 0; k < distances.size(); ++k)
        if (weights(static_cast<Eigen::Index>(k)) > 0.0 && distances[k].size() > 0)
            m = std::max(m, distances[k].maxCoeff());
    return m;
}

double coupling_sup_cost(const Vector& weights, const std::vector<Vector>& distances, double q)
{
    if (!(q >= 1.0))
        throw std::invalid_argument("coupling_sup_cost needs q >= 1");
    if (weights.size() == 0 || weights.minCoeff() < 0.0)
        throw std::invalid_argument("coupling weights must be non-negative and nonempty");
    const double m = support_supremum(weights, distances);
    if (m == 0.0)
        return 0.0;
    double mean = 0.0;
    for (std::size_t k = 0; k < distances.size(); ++k)
        mean += weights(static_cast<Eigen::Index>(k)) * (distances[k].array() / m).pow(q).sum();
    return m * std::pow(mean, 1.0 / q);
}

LocalDensityBatch local_log_density_batch(const Network<double>& net, SampleSpace space, const Matrix& points,
                                          const Matrix& anchor_probs, const std::vector<int>& labels, double lambda,
                                          double alpha)
{
    if (!(lambda > 0.0))
        throw std::invalid_argument("lambda must be positive");
    if (anchor_probs.rows() != points.rows() || static_cast<Eigen::Index>(labels.size()) != points.rows())
        throw DimensionError("one anchor prediction and label per point is required");
    const auto pass = space == SampleSpace::input ? forward(net, points) : forward_head(net, points);
    LocalDensityBatch out;
    out.log_density.resize(points.rows());
    Matrix d_probs = Matrix::Zero(pass.probs.rows(), pass.probs.cols());
    for (Eigen::Index r = 0; r < points.rows(); ++r) {
        const auto p = pass.probs.row(r);
        const auto pa = anchor_probs.row(r);
        double value = 0.0;
        if (alpha != 0.0) {
            value += alpha * symmetric_kl(pa, p);
            d_probs.row(r) += alpha * symmetric_kl_grad_first(p, pa);
        }
        const int y = labels[static_cast<std::size_t>(r)];
        if (y >= 0) {
            value += cross_entropy(p, y);
            d_probs(r, y) -= 1.0 / (p(y) + kProbFloor);
        }
        out.log_density(r) = lambda * value;
    }
    d_probs *= lambda;
    const Matrix d_logits = softmax_backward(pass.probs, d_probs);
    if (space == SampleSpace::input)
        out.gradient = backward(net, pass, Matrix(), d_logits, static_cast<Network<double>*>(nullptr));
    else
        out.gradient = backward_head(net, pass, d_logits, static_cast<Network<double>*>(nullptr));
    return out;
}

LocalDensityValue local_log_density(const LocalDensitySpec& spec, const RowVector& x_tilde)
{
    if (!spec.net)
        throw std::invalid_argument("local density needs a network");
    const Matrix anchor = spec.anchor;
    const auto pass = spec.space == SampleSpace::input ? forward(*spec.net, anchor) : forward_head(*spec.net, anchor);
    const std::vector<int> labels{spec.label.value_or(-1)};
    const auto batch = local_log_density_batch(*spec.net, spec.space, Matrix(x_tilde), pass.probs, labels,
                                               spec.lambda, spec.alpha);
    return {batch.log_density(0), batch.gradient.row(0)};
}

Vector gibbs_conditional(const Vector& r_values, double lambda)
{
    if (!(lambda > 0.0))
        throw std::invalid_argument("lambda must be positive");
    const Vector z = lambda * r_values;
    const Vector e = (z.array() - z.maxCoeff()).exp();
    return e / e.sum();
}

void validate(const SamplerConfig& cfg)
{
    if (!(cfg.lambda > 0.0))
        throw std::invalid_argument("lambda must be positive");
    if (cfg.alpha < 0.0)
        throw std::invalid_argument("alpha must be non-negative");
    if (cfg.n_source < 0 || cfg.n_target < 0)
        throw std::invalid_argument("particle counts must be non-negative");
    if (cfg.radius < 0.0)
        throw std::invalid_argument("ball radius must be non-negative");
}

std::uint64_t particle_seed(std::uint64_t seed, std::uint64_t step, int stream, Eigen::Index index)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(static_cast<std::uint64_t>(index) >> 32)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

namespace {

void sample_side(const Matrix& x, const std::vector<int>* labels, int n, int stream, const SamplerConfig& cfg,
                 const Network<double>& net, std::uint64_t seed, std::uint64_t step, Matrix& base, Matrix& particles)
{
    if (n == 0 || x.rows() == 0) {
        particles.resize(0, x.cols());
        return;
    }
    const auto pass = forward(net, x);
    const Matrix& anchors = cfg.space == SampleSpace::input ? x : pass.features;
    if (cfg.space == SampleSpace::latent)
        base = pass.features;
    const Matrix rep_probs = repeat_rows(pass.probs, n);
    const std::vector<int> rep_labels =
        labels ? repeat_labels(*labels, n) : std::vector<int>(static_cast<std::size_t>(x.rows() * n), -1);
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        seeds[static_cast<std::size_t>(i)] = particle_seed(seed, step, stream, i);

    svgd::SvgdConfig scfg = cfg.svgd;
    scfg.particles = n;
    const svgd::ScoreFunction score = [&](const Matrix& pts) {
        return local_log_density_batch(net, cfg.space, pts, rep_probs, rep_labels, cfg.lambda, cfg.alpha).gradient;
    };
    const auto groups = svgd::projected_svgd_grouped(anchors, cfg.radius, cfg.norm, scfg, cfg.kernel, seeds, score);
    particles.resize(x.rows() * n, anchors.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        particles.middleRows(i * n, n) = groups[static_cast<std::size_t>(i)];
}

} // namespace

PerturbedBatch sample_particles(const AnchorBatch& batch, const SamplerConfig& cfg, const Network<double>& net,
                                std::uint64_t seed, std::uint64_t step)
{
    validate(cfg);
    if (static_cast<Eigen::Index>(batch.source_y.size()) != batch.source_x.rows())
        throw DimensionError("one label per source anchor is required");
    PerturbedBatch out;
    out.space = cfg.space;
    out.source_anchors = batch.source_x;
    out.source_labels = batch.source_y;
    out.n_source = cfg.n_source;
    out.target_anchors = batch.target_x;
    out.n_target = cfg.n_target;
    sample_side(batch.source_x, &batch.source_y, cfg.n_source, 0, cfg, net, seed, step, out.source_base,
                out.source_particles);
    sample_side(batch.target_x, nullptr, cfg.n_target, 1, cfg, net, seed, step, out.target_base,
                out.target_particles);
    return out;
}

namespace {

// Forward passes of one side (source or target) of a perturbed batch.
struct SidePasses {
    NetworkPass<double> anchors;
    NetworkPass<double> particles;
};

SidePasses forward_side(const Network<double>& net, SampleSpace space, const Matrix& anchors, const Matrix& base,
                        const Matrix& particles, int n)
{
    SidePasses s;
    s.anchors = forward(net, anchors);
    if (space == SampleSpace::input) {
        s.particles = forward(net, particles);
    } else {
        const Matrix latents = repeat_rows(s.anchors.features, n) + (particles - repeat_rows(base, n));
        s.particles = forward_head(net, latents);
    }
    return s;
}

// Adds d/dpsi of c * sum_r [alpha s(anchor, particle_r) + [source] l(particle_r)].
void side_backward(const Network<double>& net, SampleSpace space, const SidePasses& s, const std::vector<int>* labels,
                   int n, double alpha, double c, Network<double>& grad)
{
    const Eigen::Index rows = s.particles.probs.rows();
    Matrix dp_particles = Matrix::Zero(rows, s.particles.probs.cols());
    Matrix dp_anchors = Matrix::Zero(s.anchors.probs.rows(), s.anchors.probs.cols());
    for (Eigen::Index r = 0; r < rows; ++r) {
        const Eigen::Index i = r / n;
        const auto p = s.particles.probs.row(r);
        const auto pa = s.anchors.probs.row(i);
        if (alpha != 0.0) {
            dp_particles.row(r) += (c * alpha) * symmetric_kl_grad_first(p, pa);
            dp_anchors.row(i) += (c * alpha) * symmetric_kl_grad_first(pa, p);
        }
        if (labels) {
            const int y = (*labels)[static_cast<std::size_t>(i)];
            dp_particles(r, y) -= c / (p(y) + kProbFloor);
        }
    }
    const Matrix dl_particles = softmax_backward(s.particles.probs, dp_particles);
    Matrix d_features;
    if (space == SampleSpace::input) {
        backward(net, s.particles, Matrix(), dl_particles, &grad);
    } else {
        const Matrix d_latent = backward_head(net, s.particles, dl_particles, &grad);
        d_features = Matrix::Zero(s.anchors.features.rows(), s.anchors.features.cols());
        for (Eigen::Index r = 0; r < rows; ++r)
            d_features.row(r / n) += d_latent.row(r);
    }
    const bool anchor_logits = alpha != 0.0;
    if (!anchor_logits && d_features.size() == 0)
        return;
    backward(net, s.anchors, d_features, anchor_logits ? softmax_backward(s.anchors.probs, dp_anchors) : Matrix(),
             &grad);
}

void side_values(const SidePasses& s, const std::vector<int>* labels, int n, double& ce_sum, double& s_sum)
{
    for (Eigen::Index r = 0; r < s.particles.probs.rows(); ++r) {
        const Eigen::Index i = r / n;
        s_sum += symmetric_kl(s.anchors.probs.row(i), s.particles.probs.row(r));
        if (labels)
            ce_sum += cross_entropy(s.particles.probs.row(r), (*labels)[static_cast<std::size_t>(i)]);
    }
}

bool has_source_particles(const PerturbedBatch& b)
{
    return b.n_source > 0 && b.source_particles.rows() > 0;
}

bool has_target_particles(const PerturbedBatch& b)
{
    return b.n_target > 0 && b.target_particles.rows() > 0;
}

} // namespace

RiskComponents risk_value(const Network<double>& net, const PerturbedBatch& perturbed, const RiskWeights& w,
                          double global_term)
{
    validate(w);
    RiskComponents parts;
    const auto anchors = forward(net, perturbed.source_anchors);
    parts.ce = cross_entropy_batch(anchors.probs, perturbed.source_labels);
    if (has_source_particles(perturbed)) {
        const auto s = forward_side(net, perturbed.space, perturbed.source_anchors, perturbed.source_base,
                                    perturbed.source_particles, perturbed.n_source);
        double ce = 0.0, kl = 0.0;
        side_values(s, &perturbed.source_labels, perturbed.n_source, ce, kl);
        const double rows = static_cast<double>(perturbed.source_particles.rows());
        parts.ce += ce / rows;
        parts.local += kl / rows;
    }
    if (has_target_particles(perturbed)) {
        const auto s = forward_side(net, perturbed.space, perturbed.target_anchors, perturbed.target_base,
                                    perturbed.target_particles, perturbed.n_target);
        double ce = 0.0, kl = 0.0;
        side_values(s, nullptr, perturbed.n_target, ce, kl);
        parts.local += kl / static_cast<double>(perturbed.target_particles.rows());
    }
    parts.global = global_term;
    parts.total = parts.ce + w.alpha * parts.local + w.beta * parts.global;
    return parts;
}

bool particle_terms_gradient(const Network<double>& net, const PerturbedBatch& perturbed, const RiskWeights& w,
                             RiskComponents& parts, Network<double>& out)
{
    validate(w);
    const bool source = has_source_particles(perturbed);
    const bool target = has_target_particles(perturbed);
    if (!source && !target)
        return false;
    bool touched = false;
    if (source) {
        const auto s = forward_side(net, perturbed.space, perturbed.source_anchors, perturbed.source_base,
                                    perturbed.source_particles, perturbed.n_source);
        const double rows = static_cast<double>(perturbed.source_particles.rows());
        double ce = 0.0, kl = 0.0;
        side_values(s, &perturbed.source_labels, perturbed.n_source, ce, kl);
        parts.ce += ce / rows;
        parts.local += kl / rows;
        side_backward(net, perturbed.space, s, &perturbed.source_labels, perturbed.n_source, w.alpha, 1.0 / rows, out);
        touched = true;
    }
    if (target) {
        const auto s = forward_side(net, perturbed.space, perturbed.target_anchors, perturbed.target_base,
                                    perturbed.target_particles, perturbed.n_target);
        const double rows = static_cast<double>(perturbed.target_particles.rows());
        double ce = 0.0, kl = 0.0;
        side_values(s, nullptr, perturbed.n_target, ce, kl);
        parts.local += kl / rows;
        if (w.alpha != 0.0) {
            side_backward(net, perturbed.space, s, nullptr, perturbed.n_target, w.alpha, 1.0 / rows, out);
            touched = true;
        }
    }
    return touched;
}

ot::GroundCost composite_cost(Eigen::Index feature_dim, double gamma_pred, const std::vector<int>* left_labels,
                              const std::vector<int>* right_labels)
{
    if ((left_labels == nullptr) != (right_labels == nullptr))
        throw std::invalid_argument("label gating needs labels on both sides");
    auto gate = [left_labels, right_labels](Eigen::Index i, Eigen::Index j) {
        return !left_labels ||
               (*left_labels)[static_cast<std::size_t>(i)] == (*right_labels)[static_cast<std::size_t>(j)];
    };
    ot::GroundCost c;
    c.matrix = [=](const Matrix& p, const Matrix& q) {
        if (p.cols() != q.cols() || p.cols() < feature_dim)
            throw DimensionError("embedding widths do not match the cost layout");
        const Eigen::Index k = p.cols() - feature_dim;
        Matrix out = Matrix::Zero(p.rows(), q.rows());
        for (Eigen::Index i = 0; i < p.rows(); ++i)
            for (Eigen::Index j = 0; j < q.rows(); ++j) {
                if (!gate(i, j))
                    continue;
                out(i, j) = (p.row(i).head(feature_dim) - q.row(j).head(feature_dim)).squaredNorm() +
                            gamma_pred * (p.row(i).tail(k) - q.row(j).tail(k)).cwiseAbs().sum();
            }
        return out;
    };
    c.backward = [=](const Matrix& p, const Matrix& q, const Matrix& dc, Matrix& dp, Matrix& dq) {
        const Eigen::Index k = p.cols() - feature_dim;
        for (Eigen::Index i = 0; i < p.rows(); ++i)
            for (Eigen::Index j = 0; j < q.rows(); ++j) {
                const double g = dc(i, j);
                if (g == 0.0 || !gate(i, j))
                    continue;
                const RowVector df = 2.0 * g * (p.row(i).head(feature_dim) - q.row(j).head(feature_dim));
                dp.row(i).head(feature_dim) += df;
                dq.row(j).head(feature_dim) -= df;
                const RowVector dl = (gamma_pred * g) *
                                     (p.row(i).tail(k) - q.row(j).tail(k)).unaryExpr([](double v) {
                                         return static_cast<double>((v > 0.0) - (v < 0.0));
                                     });
                dp.row(i).tail(k) += dl;
                dq.row(j).tail(k) -= dl;
            }
    };
    return c;
}

Matrix stack_embedding(const Embedding& e)
{
    if (e.features.rows() != e.probs.rows())
        throw DimensionError("features and predictions differ in batch size");
    Matrix u(e.features.rows(), e.features.cols() + e.probs.cols());
    u << e.features, e.probs;
    return u;
}

namespace {

GlobalTerm wasserstein_term(const Embedding& left, const Embedding& right, const ot::GroundCost& cost,
                            const GlobalOtConfig& cfg)
{
    if (left.features.rows() == 0 || right.features.rows() == 0)
        throw std::invalid_argument("Wasserstein term needs nonempty batches");
    const Matrix u = stack_embedding(left);
    const Matrix v = stack_embedding(right);
    const Eigen::Index fd = left.features.cols();
    GlobalTerm out;
    Matrix du = Matrix::Zero(u.rows(), u.cols());
    Matrix dv = Matrix::Zero(v.rows(), v.cols());
    if (cfg.estimator == Estimator::potential) {
        if (!cfg.potential)
            throw std::invalid_argument("potential estimator needs a potential network");
        auto est = ot::dual_potential_estimate(*cfg.potential, u, v, cost, cfg.sinkhorn.epsilon);
        out.value = est.value;
        du = std::move(est.d_p);
        dv = std::move(est.d_q);
        out.d_potential = std::move(est.d_pot);
    } else {
        const Vector a = Vector::Constant(u.rows(), 1.0 / static_cast<double>(u.rows()));
        const Vector b = Vector::Constant(v.rows(), 1.0 / static_cast<double>(v.rows()));
        const Matrix c = cost.matrix(u, v);
        const auto res = ot::sinkhorn(a, b, c, cfg.sinkhorn);
        out.value = res.entropic_value;
        out.converged = res.converged;
        cost.backward(u, v, res.plan.matrix, du, dv);
    }
    out.d_source_features = du.leftCols(fd);
    out.d_source_probs = du.rightCols(u.cols() - fd);
    out.d_target_features = dv.leftCols(fd);
    out.d_target_probs = dv.rightCols(v.cols() - fd);
    return out;
}

} // namespace

GlobalTerm global_da_ssl(const Embedding& source, const Embedding& target, double gamma_pred, const GlobalOtConfig& cfg)
{
    return wasserstein_term(source, target, composite_cost(source.features.cols(), gamma_pred), cfg);
}

GlobalTerm global_aml(const Embedding& clean, const Embedding& adversarial, double gamma_pred,
                      const GlobalOtConfig& cfg)
{
    if (clean.labels.size() != static_cast<std::size_t>(clean.features.rows()) ||
        adversarial.labels.size() != static_cast<std::size_t>(adversarial.features.rows()))
        throw DimensionError("AML global term needs a label per embedding row");
    return wasserstein_term(clean, adversarial,
                            composite_cost(clean.features.cols(), gamma_pred, &clean.labels, &adversarial.labels), cfg);
}

GlobalTerm global_dg(const Matrix& latents, const std::vector<int>& labels, const std::vector<int>& domains,
                     int domain_count, int classes, const ot::SinkhornConfig& cfg)
{
    if (domain_count < 2)
        throw std::invalid_argument("domain generalization needs at least two domains");
    if (labels.size() != static_cast<std::size_t>(latents.rows()) || domains.size() != labels.size())
        throw DimensionError("one label and domain per latent row is required");
    GlobalTerm out;
    out.d_source_features = Matrix::Zero(latents.rows(), latents.cols());
    const auto sq = ot::squared_euclidean();
    for (int m = 0; m < classes; ++m) {
        std::vector<std::vector<Eigen::Index>> cells(static_cast<std::size_t>(domain_count));
        for (std::size_t r = 0; r < labels.size(); ++r)
            if (labels[r] == m) {
                if (domains[r] < 0 || domains[r] >= domain_count)
                    throw std::out_of_range("domain index out of range");
                cells[static_cast<std::size_t>(domains[r])].push_back(static_cast<Eigen::Index>(r));
            }
        int nonempty = 0;
        for (const auto& c : cells)
            nonempty += c.empty() ? 0 : 1;
        if (nonempty == 0)
            continue;
        std::vector<Eigen::Index> mix_idx;
        std::vector<double> mix_w;
        for (const auto& c : cells)
            for (Eigen::Index r : c) {
                mix_idx.push_back(r);
                mix_w.push_back(1.0 / (nonempty * static_cast<double>(c.size())));
            }
        Matrix mix(static_cast<Eigen::Index>(mix_idx.size()), latents.cols());
        for (std::size_t t = 0; t < mix_idx.size(); ++t)
            mix.row(static_cast<Eigen::Index>(t)) = latents.row(mix_idx[t]);
        const Vector b = Eigen::Map<const Vector>(mix_w.data(), static_cast<Eigen::Index>(mix_w.size()));
        const Vector bn = b / b.sum();

        for (const auto& c : cells) {
            if (c.empty())
                continue;
            Matrix cell(static_cast<Eigen::Index>(c.size()), latents.cols());
            for (std::size_t t = 0; t < c.size(); ++t)
                cell.row(static_cast<Eigen::Index>(t)) = latents.row(c[t]);
            const Vector a = Vector::Constant(cell.rows(), 1.0 / static_cast<double>(cell.rows()));
            const auto res = ot::sinkhorn(a, bn, sq.matrix(cell, mix), cfg);
            out.converged = out.converged && res.converged;
            out.value += res.entropic_value / domain_count;
            Matrix d_cell = Matrix::Zero(cell.rows(), cell.cols());
            Matrix d_mix = Matrix::Zero(mix.rows(), mix.cols());
            sq.backward(cell, mix, res.plan.matrix / domain_count, d_cell, d_mix);
            for (std::size_t t = 0; t < c.size(); ++t)
                out.d_source_features.row(c[t]) += d_cell.row(static_cast<Eigen::Index>(t));
            for (std::size_t t = 0; t < mix_idx.size(); ++t)
                out.d_source_features.row(mix_idx[t]) += d_mix.row(static_cast<Eigen::Index>(t));
        }
    }
    return out;
}

} // namespace glotdr::glot
