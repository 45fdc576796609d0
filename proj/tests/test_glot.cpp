#include "doctest.h"

#include "glotdr/core/grad.hpp"
#include "glotdr/glot.hpp"
#include "glotdr/oracles.hpp"

#include <cmath>
#include <limits>
#include <random>

using namespace glotdr;
using namespace glotdr::glot;

namespace {

Network<double> small_net(std::uint64_t seed, int input = 2, int latent = 4)
{
    std::mt19937_64 rng(seed);
    return make_network(NetworkLayout{input, {5, latent}, {6}, 3, Activation::leaky_relu}, rng);
}

AnchorBatch toy_batch(std::uint64_t seed, int bs = 3, int bt = 2)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    AnchorBatch b;
    b.source_x = Matrix(bs, 2).unaryExpr([&](double) { return n01(rng); });
    b.target_x = Matrix(bt, 2).unaryExpr([&](double) { return n01(rng); });
    for (int i = 0; i < bs; ++i)
        b.source_y.push_back(i % 3);
    return b;
}

SamplerConfig toy_sampler(SampleSpace space = SampleSpace::input)
{
    SamplerConfig cfg;
    cfg.alpha = 1.0;
    cfg.lambda = 1.0;
    cfg.n_source = 2;
    cfg.n_target = 2;
    cfg.radius = 0.3;
    cfg.svgd.iterations = 5;
    cfg.svgd.step = 0.05;
    cfg.space = space;
    return cfg;
}

// Full risk gradient with the global term held at zero.
ValueAndGradient<double> risk_with_grad(const Network<double>& net, const PerturbedBatch& z, const RiskWeights& w)
{
    auto [ce, g] = grad(net, cross_entropy_loss(z.source_labels), z.source_anchors);
    RiskComponents parts;
    parts.ce = ce;
    particle_terms_gradient(net, z, w, parts, g);
    return {parts.ce + w.alpha * parts.local, flatten(g)};
}

Embedding random_embedding(std::mt19937_64& rng, int rows, int fd, int classes)
{
    std::normal_distribution<double> n01;
    Embedding e;
    e.features = Matrix(rows, fd).unaryExpr([&](double) { return n01(rng); });
    Matrix logits = Matrix(rows, classes).unaryExpr([&](double) { return n01(rng); });
    e.probs = softmax_rows(logits);
    for (int i = 0; i < rows; ++i)
        e.labels.push_back(i % classes);
    return e;
}

} // namespace

TEST_CASE("gibbs_conditional")
{
    const Vector flat = Vector::Constant(4, 0.3);
    CHECK((gibbs_conditional(flat, 2.0).array() - 0.25).abs().maxCoeff() <= 1e-15);

    Vector r(3);
    r << 0.5, 0.6, 0.4;
    CHECK(gibbs_conditional(r, 1e3)(1) >= 0.99);
    CHECK_THROWS(gibbs_conditional(r, 0.0));

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        Vector rv(5);
        for (auto& v : rv)
            v = u(rng);
        const auto oracle = oracles::entropy_regularized_argmax(rv, 10.0);
        CHECK(oracles::total_variation(gibbs_conditional(rv, 10.0), oracle.weights) <= 1e-6);
    }
}

TEST_CASE("rho_cost")
{
    const auto batch = toy_batch(1);
    const auto z = unperturbed(batch, 2, 1);
    CHECK(rho_cost(z, z, svgd::NormOrder::linf, 2.0) == 0.0);

    auto moved = z;
    moved.source_particles(3, 1) += 0.5;
    CHECK(rho_cost(z, moved, svgd::NormOrder::linf, 2.0) == doctest::Approx(0.25));
    CHECK(rho_cost(z, moved, svgd::NormOrder::l2, 1.0) == doctest::Approx(0.5));

    auto flipped = z;
    flipped.source_labels[0] = 2;
    CHECK(std::isinf(rho_cost(z, flipped, svgd::NormOrder::linf, 2.0)));

    auto shifted = z;
    shifted.target_anchors(0, 0) += 1e-3;
    CHECK(std::isinf(rho_cost(z, shifted, svgd::NormOrder::linf, 2.0)));

    CHECK_THROWS(rho_cost(z, z, svgd::NormOrder::linf, 0.5));
    auto wrong = z;
    wrong.source_particles.conservativeResize(1, Eigen::NoChange);
    CHECK_THROWS_AS(rho_cost(z, wrong, svgd::NormOrder::linf, 2.0), DimensionError);
}

TEST_CASE("coupling_sup_cost: single atom is exact for every q")
{
    Vector w(1);
    w << 1.0;
    const std::vector<Vector> d{Vector::Constant(1, 0.7)};
    for (double q : {1.0, 2.0, 8.0, 64.0, 256.0})
        CHECK(coupling_sup_cost(w, d, q) == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("coupling_sup_cost: two-atom example")
{
    Vector w(2);
    w << 0.5, 0.5;
    const std::vector<Vector> d{Vector::Constant(1, 1.0), Vector::Constant(1, 2.0)};
    const double v = coupling_sup_cost(w, d, 64.0);
    CHECK(v == doctest::Approx(2.0 * std::pow(0.5, 1.0 / 64.0) * std::pow(1.0 + std::pow(0.5, 64.0), 1.0 / 64.0)));
    CHECK(v == doctest::Approx(1.97846).epsilon(1e-5));
    CHECK(support_supremum(w, d) == 2.0);
    // (1/2)^(1/q) bounds the ratio to the supremum from below
    CHECK(v / 2.0 >= std::pow(0.5, 1.0 / 64.0));
}

TEST_CASE("coupling_sup_cost: q sweep on a three-atom coupling")
{
    Vector w(3);
    w << 0.2, 0.5, 0.3;
    const std::vector<Vector> d{Vector::Constant(1, 0.4), Vector::Constant(1, 1.5), Vector::Constant(1, 0.9)};
    double prev = 0.0;
    for (double q = 1.0; q <= 256.0; q *= 2.0) {
        const double v = coupling_sup_cost(w, d, q);
        double direct = 0.0;
        for (int k = 0; k < 3; ++k)
            direct += w(k) * std::pow(d[static_cast<std::size_t>(k)](0), q);
        CHECK(v == doctest::Approx(std::pow(direct, 1.0 / q)).epsilon(1e-10));
        CHECK(v >= prev);
        CHECK(v <= 1.5);
        prev = v;
    }
    CHECK(prev >= 1.5 * std::pow(0.5, 1.0 / 256.0));
    CHECK_THROWS(coupling_sup_cost(w, d, 0.5));
}

TEST_CASE("local density: target mode at the anchor")
{
    const auto net = small_net(2);
    LocalDensitySpec spec;
    spec.anchor = RowVector::Constant(2, 0.3);
    spec.alpha = 2.0;
    spec.lambda = 0.1;
    spec.net = &net;
    const auto v = local_log_density(spec, spec.anchor);
    CHECK(std::abs(v.log_density) <= 1e-12);
    CHECK(v.gradient.cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("local density: alpha 0 reduces to lambda times the loss")
{
    const auto net = small_net(4);
    LocalDensitySpec spec;
    spec.anchor = RowVector::Constant(2, -0.2);
    spec.label = 1;
    spec.lambda = 0.1;
    spec.net = &net;
    RowVector x(2);
    x << 0.1, -0.4;
    const auto v = local_log_density(spec, x);
    const auto pass = forward(net, Matrix(x));
    CHECK(v.log_density == doctest::Approx(0.1 * cross_entropy(pass.probs.row(0), 1)).epsilon(1e-14));
}

TEST_CASE("local density: gradient matches finite differences")
{
    for (auto space : {SampleSpace::input, SampleSpace::latent}) {
        const auto net = small_net(6);
        LocalDensitySpec spec;
        spec.lambda = 0.7;
        spec.alpha = 1.3;
        spec.net = &net;
        spec.space = space;
        const int dim = space == SampleSpace::input ? 2 : 4;
        spec.anchor = RowVector::LinSpaced(dim, -0.5, 0.5);
        for (std::optional<int> label : {std::optional<int>{}, std::optional<int>{2}}) {
            spec.label = label;
            RowVector x = spec.anchor;
            x(0) += 0.2;
            x(dim - 1) -= 0.15;
            LossFunction<double> fn = [&](const Vector& v) {
                const auto r = local_log_density(spec, v.transpose());
                return ValueAndGradient<double>{r.log_density, r.gradient.transpose()};
            };
            CHECK(finite_diff_check(fn, Vector(x.transpose())) <= 1e-5);
        }
    }
}

TEST_CASE("sample_particles: degenerate configurations")
{
    const auto net = small_net(8);
    const auto batch = toy_batch(9);
    auto cfg = toy_sampler();
    cfg.n_source = 0;
    cfg.n_target = 0;
    auto z = sample_particles(batch, cfg, net, 1, 0);
    CHECK(z.source_particles.rows() == 0);
    CHECK(z.target_particles.rows() == 0);
    CHECK(z.source_anchors == batch.source_x);
    CHECK(z.target_anchors == batch.target_x);

    cfg = toy_sampler();
    cfg.radius = 0.0;
    z = sample_particles(batch, cfg, net, 1, 0);
    const auto same = unperturbed(batch, 2, 2);
    CHECK(z.source_particles == same.source_particles);
    CHECK(z.target_particles == same.target_particles);
}

TEST_CASE("sample_particles: ball constraint and determinism")
{
    const auto net = small_net(10);
    const auto batch = toy_batch(11);
    for (auto space : {SampleSpace::input, SampleSpace::latent}) {
        const auto cfg = toy_sampler(space);
        const auto a = sample_particles(batch, cfg, net, 42, 7);
        const auto b = sample_particles(batch, cfg, net, 42, 7);
        CHECK(a.source_particles == b.source_particles);
        CHECK(a.target_particles == b.target_particles);
        const auto c = sample_particles(batch, cfg, net, 42, 8);
        CHECK(a.source_particles != c.source_particles);

        const Matrix centers = space == SampleSpace::input ? batch.source_x : a.source_base;
        for (Eigen::Index r = 0; r < a.source_particles.rows(); ++r) {
            const double d = svgd::distance(a.source_particles.row(r), centers.row(r / cfg.n_source), cfg.norm);
            CHECK(d <= cfg.radius);
        }
    }
}

TEST_CASE("particle_seed separates streams and steps")
{
    const auto s = particle_seed(1, 2, 0, 3);
    CHECK(s == particle_seed(1, 2, 0, 3));
    CHECK(s != particle_seed(1, 2, 1, 3));
    CHECK(s != particle_seed(1, 3, 0, 3));
    CHECK(s != particle_seed(1, 2, 0, 4));
    CHECK(s != particle_seed(2, 2, 0, 3));
}

TEST_CASE("risk_value: reductions")
{
    const auto net = small_net(12);
    const auto batch = toy_batch(13);
    auto z = unperturbed(batch, 2, 2);
    RiskWeights w;
    w.alpha = 3.0;
    auto parts = risk_value(net, z, w, 0.0);
    CHECK(std::abs(parts.local) <= 1e-12);

    const auto pass = forward(net, batch.source_x);
    const double ce = cross_entropy_batch(pass.probs, batch.source_y);
    CHECK(parts.ce == doctest::Approx(2.0 * ce).epsilon(1e-12));

    w.alpha = 0.0;
    z = sample_particles(batch, toy_sampler(), net, 5, 0);
    parts = risk_value(net, z, w, 0.0);
    const auto pp = forward(net, z.source_particles);
    double particle_ce = 0.0;
    for (Eigen::Index r = 0; r < pp.probs.rows(); ++r)
        particle_ce += cross_entropy(pp.probs.row(r), batch.source_y[static_cast<std::size_t>(r / 2)]);
    CHECK(parts.total == doctest::Approx(ce + particle_ce / 6.0).epsilon(1e-12));
}

TEST_CASE("risk_value: one anchor, one particle by hand")
{
    const auto net = small_net(14);
    PerturbedBatch z;
    z.source_anchors = Matrix::Constant(1, 2, 0.4);
    z.source_labels = {1};
    z.source_particles = Matrix::Constant(1, 2, 0.45);
    z.n_source = 1;
    z.target_anchors.resize(0, 2);
    z.target_particles.resize(0, 2);
    RiskWeights w{0.7, 2.0};
    const auto pa = forward(net, z.source_anchors).probs;
    const auto pp = forward(net, z.source_particles).probs;
    const double s = 0.5 * ((pa.array() * (pa.array() / pp.array()).log()).sum() +
                            (pp.array() * (pp.array() / pa.array()).log()).sum());
    const double expected = 0.7 * s - std::log(pa(0, 1)) - std::log(pp(0, 1)) + 2.0 * 0.25;
    CHECK(risk_value(net, z, w, 0.25).total == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("risk gradient matches finite differences")
{
    const auto net = small_net(16);
    const auto batch = toy_batch(17);
    for (auto space : {SampleSpace::input, SampleSpace::latent}) {
        const auto z = sample_particles(batch, toy_sampler(space), net, 3, 1);
        const RiskWeights w{0.8, 0.0};
        Network<double> probe = net;
        LossFunction<double> fn = [&](const Vector& flat) {
            unflatten(flat, probe);
            return risk_with_grad(probe, z, w);
        };
        CHECK(fn(flatten(net)).value == doctest::Approx(risk_value(net, z, w, 0.0).total).epsilon(1e-12));
        CHECK(finite_diff_check(fn, flatten(net)) <= 1e-4);
    }
}

TEST_CASE("particle_terms_gradient without particles")
{
    const auto net = small_net(18);
    const auto z = unperturbed(toy_batch(19), 0, 0);
    RiskComponents parts;
    auto g = net.zeros_like();
    CHECK_FALSE(particle_terms_gradient(net, z, RiskWeights{1.0, 0.0}, parts, g));
    CHECK(flatten(g).isZero());
}

TEST_CASE("global_da_ssl: identical batches and term dropout")
{
    std::mt19937_64 rng(20);
    const auto e = random_embedding(rng, 5, 3, 2);
    GlobalOtConfig cfg;
    cfg.sinkhorn.epsilon = 1e-2;
    const auto self = global_da_ssl(e, e, 0.5, cfg);
    CHECK(self.value <= cfg.sinkhorn.epsilon * std::log(5.0) + 1e-9);
    CHECK(self.value >= -1e-12);

    const auto f = random_embedding(rng, 4, 3, 2);
    const auto dropped = global_da_ssl(e, f, 0.0, cfg);
    const auto plain = ot::sinkhorn(Vector::Constant(5, 0.2), Vector::Constant(4, 0.25),
                                    ot::squared_euclidean().matrix(e.features, f.features), cfg.sinkhorn);
    CHECK(dropped.value == doctest::Approx(plain.entropic_value).epsilon(1e-12));
    CHECK_THROWS(global_da_ssl(Embedding{Matrix(0, 3), Matrix(0, 2), {}}, f, 0.5, cfg));
}

TEST_CASE("global_da_ssl: two-point batches against the exact oracle")
{
    std::mt19937_64 rng(21);
    GlobalOtConfig cfg;
    cfg.sinkhorn.epsilon = 1e-3;
    cfg.sinkhorn.max_iter = 200000;
    for (int trial = 0; trial < 10; ++trial) {
        const auto e = random_embedding(rng, 2, 2, 3);
        const auto f = random_embedding(rng, 2, 2, 3);
        const auto cost = composite_cost(2, 0.5).matrix(stack_embedding(e), stack_embedding(f));
        const auto exact = ot::exact_ot_small(Vector::Constant(2, 0.5), Vector::Constant(2, 0.5), cost);
        const auto g = global_da_ssl(e, f, 0.5, cfg);
        CHECK(g.value == doctest::Approx(exact.cost).epsilon(0.01));
    }
}

TEST_CASE("global_da_ssl: gradient through the plan")
{
    std::mt19937_64 rng(22);
    const auto e = random_embedding(rng, 4, 2, 3);
    const auto f = random_embedding(rng, 3, 2, 3);
    GlobalOtConfig cfg;
    cfg.sinkhorn.epsilon = 0.5;
    cfg.sinkhorn.tol = 1e-13;
    const auto g = global_da_ssl(e, f, 0.5, cfg);
    REQUIRE(g.converged);
    LossFunction<double> fn = [&](const Vector& v) {
        Embedding probe = e;
        probe.features = Eigen::Map<const Matrix>(v.data(), 4, 2);
        const auto r = global_da_ssl(probe, f, 0.5, cfg);
        return ValueAndGradient<double>{r.value, Eigen::Map<const Vector>(r.d_source_features.data(), 8)};
    };
    const Vector x0 = Eigen::Map<const Vector>(e.features.data(), 8);
    CHECK(finite_diff_check(fn, x0) <= 1e-5);
}

TEST_CASE("global_da_ssl: potential estimator")
{
    std::mt19937_64 rng(23);
    const auto e = random_embedding(rng, 4, 2, 2);
    const auto f = random_embedding(rng, 3, 2, 2);
    const auto pot = ot::make_potential_net(4, 8, rng);
    GlobalOtConfig cfg;
    cfg.estimator = Estimator::potential;
    cfg.sinkhorn.epsilon = 0.1;
    CHECK_THROWS(global_da_ssl(e, f, 0.5, cfg));
    cfg.potential = &pot;
    const auto g = global_da_ssl(e, f, 0.5, cfg);
    const auto direct = ot::dual_potential_estimate(pot, stack_embedding(e), stack_embedding(f),
                                                    composite_cost(2, 0.5), 0.1);
    CHECK(g.value == doctest::Approx(direct.value).epsilon(1e-14));
    CHECK(g.d_potential.parameter_count() == pot.mlp.parameter_count());
    CHECK(g.d_source_features.rows() == 4);
    CHECK(g.d_target_probs.cols() == 2);
}

TEST_CASE("global_dg: two domains with disjoint supports")
{
    Matrix z(2, 1);
    z << 0.0, 2.0;
    ot::SinkhornConfig cfg;
    cfg.epsilon = 1e-3;
    const auto g = global_dg(z, {0, 0}, {0, 1}, 2, 1, cfg);
    CHECK(g.value == doctest::Approx(2.0).epsilon(1e-9));
    // each cell is a point mass, so the plan equals the product coupling
    const auto exact = ot::exact_ot_small(Vector::Constant(1, 1.0), Vector::Constant(2, 0.5),
                                          ot::squared_euclidean().matrix(z.topRows(1), z));
    CHECK(exact.cost == doctest::Approx(2.0));
    CHECK_THROWS(global_dg(z, {0, 0}, {0, 0}, 1, 1, cfg));
}

TEST_CASE("global_dg: identical domains")
{
    std::mt19937_64 rng(24);
    std::normal_distribution<double> n01;
    const Matrix cell = Matrix(4, 2).unaryExpr([&](double) { return n01(rng); });
    Matrix z(12, 2);
    z << cell, cell, cell;
    std::vector<int> labels, domains;
    for (int k = 0; k < 3; ++k)
        for (int i = 0; i < 4; ++i) {
            labels.push_back(i % 2);
            domains.push_back(k);
        }
    ot::SinkhornConfig cfg;
    cfg.epsilon = 1e-3;
    const auto g = global_dg(z, labels, domains, 3, 2, cfg);
    CHECK(g.value >= -1e-12);
    CHECK(g.value <= 2 * cfg.epsilon * std::log(6.0));

    std::vector<int> missing = labels;
    for (auto& y : missing)
        y = 0;
    CHECK_NOTHROW(global_dg(z, missing, domains, 3, 3, cfg));
}

TEST_CASE("global_aml: label gating")
{
    std::mt19937_64 rng(25);
    auto clean = random_embedding(rng, 2, 2, 2);
    auto adv = random_embedding(rng, 2, 2, 2);
    clean.labels = {0, 0};
    adv.labels = {1, 1};
    GlobalOtConfig cfg;
    cfg.sinkhorn.epsilon = 1e-3;
    CHECK(std::abs(global_aml(clean, adv, 0.5, cfg).value) <= 1e-12);

    const auto self = global_aml(clean, clean, 0.5, cfg);
    CHECK(self.value <= cfg.sinkhorn.epsilon * std::log(2.0) + 1e-9);

    clean.labels = {0, 0};
    adv.labels = {0, 0};
    cfg.sinkhorn.max_iter = 200000;
    const auto gated = composite_cost(2, 0.5, &clean.labels, &adv.labels);
    const auto exact = ot::exact_ot_small(Vector::Constant(2, 0.5), Vector::Constant(2, 0.5),
                                          gated.matrix(stack_embedding(clean), stack_embedding(adv)));
    const auto v = global_aml(clean, adv, 0.5, cfg).value;
    CHECK(v == doctest::Approx(exact.cost).epsilon(0.01));
}
