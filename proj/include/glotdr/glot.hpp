#ifndef GLOTDR_GLOT_HPP
#define GLOTDR_GLOT_HPP

#include "glotdr/core/network.hpp"
#include "glotdr/svgd.hpp"
#include "glotdr/transport.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace glotdr::glot {

enum class SampleSpace { input, latent };

struct RiskWeights {
    double alpha = 0.0;
    double beta = 0.0;
    double gamma_pred = 0.5;
};

void validate(const RiskWeights& w);

/// Anchors of one step. Source rows may come from several domains.
struct AnchorBatch {
    Matrix source_x;
    std::vector<int> source_y;
    std::vector<int> source_domain; // empty means a single domain
    Matrix target_x;                // zero rows allowed

    Eigen::Index source_size() const { return source_x.rows(); }
    Eigen::Index target_size() const { return target_x.rows(); }
};

/// Anchors plus their perturbed copies. Particles are stacked anchor-major
/// (rows [i * n, (i + 1) * n) belong to anchor i) and live in the sampling
/// space. In latent mode `*_base` holds the anchor latents the particles
/// were drawn around.
struct PerturbedBatch {
    SampleSpace space = SampleSpace::input;
    Matrix source_anchors;
    std::vector<int> source_labels;
    Matrix source_base;
    Matrix source_particles;
    int n_source = 0;

    Matrix target_anchors;
    Matrix target_base;
    Matrix target_particles;
    int n_target = 0;
};

/// Z: every anchor repeated n + 1 times (particles equal to anchors).
PerturbedBatch unperturbed(const AnchorBatch& batch, int n_source, int n_target);

/// Transport cost between Z and Z~: +inf when an anchor entry or label
/// differs, else sum over particles of ||Z_j - Z~_j||_p^q.
double rho_cost(const PerturbedBatch& z, const PerturbedBatch& z_tilde, svgd::NormOrder p, double q);

/// E_gamma[rho]^(1/q) for a discrete coupling whose atom k carries weight
/// w_k and per-sample distances distances[k].
double coupling_sup_cost(const Vector& weights, const std::vector<Vector>& distances, double q);
/// max over atoms with positive weight of the largest per-sample distance
double support_supremum(const Vector& weights, const std::vector<Vector>& distances);

struct LocalDensitySpec {
    RowVector anchor; // in the sampling space
    std::optional<int> label;
    double lambda = 0.1;
    double alpha = 0.0;
    svgd::BallSpec ball;
    const Network<double>* net = nullptr;
    SampleSpace space = SampleSpace::input;
};

struct LocalDensityValue {
    double log_density = 0.0;
    RowVector gradient;
};

/// lambda [alpha s(X, X~) + l(X~, Y)] (source) or lambda alpha s(X, X~)
/// (target), up to the normalizer, with its gradient in X~.
LocalDensityValue local_log_density(const LocalDensitySpec& spec, const RowVector& x_tilde);

struct LocalDensityBatch {
    Vector log_density;
    Matrix gradient;
};

/// Batched form: row r of `points` is scored against `anchor_probs` row r
/// and `labels[r]` (-1 for a target point).
LocalDensityBatch local_log_density_batch(const Network<double>& net, SampleSpace space, const Matrix& points,
                                          const Matrix& anchor_probs, const std::vector<int>& labels, double lambda,
                                          double alpha);

/// Closed-form optimal conditional over a finite candidate set: softmax(lambda r).
Vector gibbs_conditional(const Vector& r_values, double lambda);

struct SamplerConfig {
    double lambda = 0.1;
    double alpha = 0.0;
    int n_source = 2;
    int n_target = 2;
    svgd::SvgdConfig svgd;
    svgd::KernelSpec kernel;
    double radius = 0.1;
    svgd::NormOrder norm = svgd::NormOrder::linf;
    SampleSpace space = SampleSpace::input;
};

void validate(const SamplerConfig& cfg);

/// Seed for anchor `index` of stream `stream` at training step `step`.
std::uint64_t particle_seed(std::uint64_t seed, std::uint64_t step, int stream, Eigen::Index index);

PerturbedBatch sample_particles(const AnchorBatch& batch, const SamplerConfig& cfg, const Network<double>& net,
                                std::uint64_t seed, std::uint64_t step);

/// Source and target particles mapped to the latent space of `net`
/// (latent mode recomputes g(X) + offset so gradients reach the extractor).
struct RiskComponents {
    double ce = 0.0;     // mean over source anchors of l(anchor) + mean_j l(particle)
    double local = 0.0;  // alpha-free local term: source mean s plus target mean s
    double global = 0.0; // global regularizer value (before beta)
    double total = 0.0;
};

/// Value of the assembled risk for a fixed global term.
RiskComponents risk_value(const Network<double>& net, const PerturbedBatch& perturbed, const RiskWeights& w,
                          double global_term);

struct RiskGradient {
    RiskComponents parts;
    Network<double> grad;
};

/// Gradient of the particle terms alone (everything except the anchor CE
/// and the global term). Returns false and leaves `out` untouched when the
/// batch has no particles.
bool particle_terms_gradient(const Network<double>& net, const PerturbedBatch& perturbed, const RiskWeights& w,
                             RiskComponents& parts, Network<double>& out);

/// Inputs to a Wasserstein term: latent codes and predictions of a batch.
struct Embedding {
    Matrix features;
    Matrix probs;
    std::vector<int> labels;
};

struct GlobalTerm {
    double value = 0.0;
    Matrix d_source_features;
    Matrix d_source_probs;
    Matrix d_target_features;
    Matrix d_target_probs;
    Mlp<double> d_potential; // set by the potential estimator
    bool converged = true;
};

enum class Estimator { sinkhorn, potential };

struct GlobalOtConfig {
    ot::SinkhornConfig sinkhorn;
    Estimator estimator = Estimator::sinkhorn;
    const ot::PotentialNet* potential = nullptr;
};

/// d(U, V) = ||f_U - f_V||^2 + gamma ||p_U - p_V||_1, optionally zeroed
/// where labels differ.
ot::GroundCost composite_cost(Eigen::Index feature_dim, double gamma_pred, const std::vector<int>* left_labels = nullptr,
                              const std::vector<int>* right_labels = nullptr);

Matrix stack_embedding(const Embedding& e);

GlobalTerm global_da_ssl(const Embedding& source, const Embedding& target, double gamma_pred, const GlobalOtConfig& cfg);

/// sum_m sum_k (1/K) W(P_km, P_m) on latents. `latents` rows carry
/// `labels` and `domains`; empty (k, m) cells are skipped.
GlobalTerm global_dg(const Matrix& latents, const std::vector<int>& labels, const std::vector<int>& domains,
                     int domain_count, int classes, const ot::SinkhornConfig& cfg);

/// W between clean and adversarial embeddings, cost gated by label equality.
GlobalTerm global_aml(const Embedding& clean, const Embedding& adversarial, double gamma_pred,
                      const GlobalOtConfig& cfg);

} // namespace glotdr::glot

#endif // GLOTDR_GLOT_HPP
