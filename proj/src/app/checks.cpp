#include "glotdr/app/checks.hpp"

#include "glotdr/core/grad.hpp"
#include "glotdr/glot.hpp"
#include "glotdr/oracles.hpp"
#include "glotdr/svgd.hpp"
#include "glotdr/transport.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

namespace glotdr::app {

namespace {

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0)
{
    char buf[160];
    std::snprintf(buf, sizeof buf, pattern, a, b, c);
    return buf;
}

Vector random_weights(Eigen::Index n, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.05, 1.0);
    Vector w(n);
    for (auto& v : w)
        v = u(rng);
    return w / w.sum();
}

Matrix random_normal(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng)
{
    std::normal_distribution<double> n01;
    return Matrix(rows, cols).unaryExpr([&](double) { return n01(rng); });
}

Network<double> probe_net(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    return make_network(NetworkLayout{2, {6, 4}, {5}, 3, Activation::leaky_relu}, rng);
}

struct Couplings {
    Vector weights;
    std::vector<Vector> distances;
};

std::vector<Couplings> random_couplings(int instances, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> atoms(2, 6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Couplings> out;
    for (int t = 0; t < instances; ++t) {
        Couplings c;
        c.weights = random_weights(atoms(rng), rng);
        for (Eigen::Index k = 0; k < c.weights.size(); ++k)
            c.distances.push_back(Vector::Constant(1, u(rng)));
        out.push_back(std::move(c));
    }
    return out;
}

} // namespace

CheckResult timed_check(const std::string& name, const std::function<CheckResult()>& body)
{
    const auto t0 = std::chrono::steady_clock::now();
    CheckResult r;
    try {
        r = body();
    } catch (const std::exception& e) {
        r.pass = false;
        r.detail = std::string("exception: ") + e.what();
    }
    r.name = name;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

CheckResult check_gibbs_oracle(int instances, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> size(2, 20);
    std::uniform_real_distribution<double> u(-1.0, 1.0), log_lambda(std::log(0.1), std::log(100.0)),
        alpha(0.0, 5.0);
    const auto net = probe_net(seed);
    double worst = 0.0;
    for (int t = 0; t < instances; ++t) {
        glot::LocalDensitySpec spec;
        spec.net = &net;
        spec.lambda = 1.0; // r itself
        spec.alpha = alpha(rng);
        spec.anchor = RowVector(2);
        spec.anchor << u(rng), u(rng);
        if (t % 2 == 0)
            spec.label = t % 3;
        const int m = size(rng);
        Vector r(m);
        for (int i = 0; i < m; ++i) {
            RowVector x = spec.anchor;
            x(0) += 0.5 * u(rng);
            x(1) += 0.5 * u(rng);
            r(i) = glot::local_log_density(spec, x).log_density;
        }
        const double lambda = std::exp(log_lambda(rng));
        const auto oracle = oracles::entropy_regularized_argmax(r, lambda);
        worst = std::max(worst, oracles::total_variation(glot::gibbs_conditional(r, lambda), oracle.weights));
    }
    return {"", worst <= 1e-6, fmt("max TV %.3g over %g instances", worst, instances)};
}

CheckResult check_sinkhorn_exact(int instances, std::uint64_t seed, double epsilon)
{
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> size(1, 5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int t = 0; t < instances; ++t) {
        const int n = size(rng), m = size(rng);
        const Vector a = random_weights(n, rng), b = random_weights(m, rng);
        const Matrix c = Matrix(n, m).unaryExpr([&](double) { return u(rng); });
        const auto s = ot::sinkhorn(a, b, c, {epsilon, 1e-12, 500000});
        const auto exact = ot::exact_ot_small(a, b, c);
        const double rel = std::abs(s.transport_cost - exact.cost) / std::max(exact.cost, 1e-12);
        worst = std::max(worst, rel);
    }
    return {"", worst <= 0.01, fmt("max relative gap %.3g at eps %g", worst, epsilon)};
}

CheckResult check_semidual(int instances, std::uint64_t seed, double epsilon)
{
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> size(1, 5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int t = 0; t < instances; ++t) {
        const int n = size(rng), m = size(rng);
        const Vector a = random_weights(n, rng), b = random_weights(m, rng);
        const Matrix c = Matrix(n, m).unaryExpr([&](double) { return u(rng); });
        const auto s = ot::sinkhorn(a, b, c, {epsilon, 1e-13, 500000});
        const auto best = ot::maximize_semidual(a, b, c, epsilon);
        worst = std::max(worst, std::abs(best.value - s.entropic_value));
    }
    return {"", worst <= 1e-4, fmt("max |semi-dual - entropic| %.3g at eps %g", worst, epsilon)};
}

CheckResult check_svgd_moments()
{
    std::mt19937_64 rng(2024);
    svgd::SvgdConfig cfg;
    cfg.particles = 200;
    cfg.iterations = 500;
    cfg.step = 0.05;
    cfg.init_noise = 3.0;
    const svgd::BallSpec ball{RowVector::Zero(1), 1e3, svgd::NormOrder::linf};
    const svgd::ScoreFunction score = [](const Matrix& x) { return Matrix(-x); };
    const auto set = svgd::projected_svgd(score, ball, cfg, rng);
    const double mean = set.particles.mean();
    const double var = (set.particles.array() - mean).square().mean();
    return {"", std::abs(mean) <= 0.05 && std::abs(var - 1.0) <= 0.1, fmt("mean %.4f variance %.4f", mean, var)};
}

CheckResult check_svgd_ball()
{
    std::mt19937_64 rng(7);
    svgd::SvgdConfig cfg;
    cfg.particles = 200;
    cfg.iterations = 500;
    cfg.step = 0.05;
    cfg.init_noise = 0.5;
    const svgd::BallSpec ball{RowVector::Zero(1), 0.1, svgd::NormOrder::linf};
    const svgd::ScoreFunction score = [](const Matrix& x) { return Matrix(-x); };
    long checked = 0, outside = 0;
    const svgd::IterationObserver watch = [&](int, const Matrix& p) {
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            ++checked;
            outside += !svgd::in_ball(p.row(i), ball);
        }
    };
    svgd::projected_svgd(score, ball, cfg, rng, svgd::KernelSpec::median(), watch);
    return {"", checked > 0 && outside == 0,
            fmt("%g of %g particle states outside the ball", static_cast<double>(outside), static_cast<double>(checked))};
}

CheckResult check_gradients(double tolerance)
{
    std::mt19937_64 rng(5);
    double worst = 0.0;
    std::string worst_path = "none";
    const auto record = [&](const char* path, double err) {
        if (!(err <= worst)) {
            worst = err;
            worst_path = path;
        }
    };

    const auto net = probe_net(11);
    const Matrix x = random_normal(6, 2, rng);
    const std::vector<int> y{0, 1, 2, 0, 1, 2};
    record("cross-entropy", finite_diff_check(as_parameter_function(net, cross_entropy_loss(y), x), flatten(net)));

    RowVector q(3);
    q << 0.6, 0.15, 0.25;
    LossFunction<double> skl = [&](const Vector& p) {
        return ValueAndGradient<double>{symmetric_kl(p.transpose(), q), symmetric_kl_grad_first(p.transpose(), q).transpose()};
    };
    Vector p0(3);
    p0 << 0.2, 0.5, 0.3;
    record("symmetric KL", finite_diff_check(skl, p0));

    for (auto space : {glot::SampleSpace::input, glot::SampleSpace::latent}) {
        glot::LocalDensitySpec spec;
        spec.lambda = 0.7;
        spec.alpha = 1.3;
        spec.net = &net;
        spec.space = space;
        const int dim = space == glot::SampleSpace::input ? 2 : 4;
        spec.anchor = RowVector::LinSpaced(dim, -0.5, 0.5);
        for (std::optional<int> label : {std::optional<int>{}, std::optional<int>{2}}) {
            spec.label = label;
            RowVector xt = spec.anchor;
            xt(0) += 0.2;
            xt(dim - 1) -= 0.15;
            LossFunction<double> fn = [&](const Vector& v) {
                const auto r = glot::local_log_density(spec, v.transpose());
                return ValueAndGradient<double>{r.log_density, r.gradient.transpose()};
            };
            record("local log-density", finite_diff_check(fn, Vector(xt.transpose())));
        }
    }

    {
        const Vector a = random_weights(3, rng), b = random_weights(4, rng);
        const Matrix c = Matrix::Random(3, 4).cwiseAbs();
        LossFunction<double> fn = [&](const Vector& phi) {
            auto g = ot::semidual_gradient(phi, a, b, c, 0.1);
            return ValueAndGradient<double>{g.value, g.d_phi};
        };
        Vector phi(3);
        phi << 0.1, -0.3, 0.2;
        record("semi-dual", finite_diff_check(fn, phi));

        auto pot = ot::make_potential_net(2, 6, rng);
        const Matrix sp = random_normal(4, 2, rng), sq = random_normal(3, 2, rng);
        Network<double> wrap{Mlp<double>{}, pot.mlp};
        LossFunction<double> by_params = [&](const Vector& flat) {
            Network<double> w = wrap;
            unflatten(flat, w);
            auto est = ot::dual_potential_estimate(ot::PotentialNet{w.head}, sp, sq, ot::squared_euclidean(), 0.2);
            return ValueAndGradient<double>{est.value, flatten(Network<double>{Mlp<double>{}, est.d_pot})};
        };
        record("potential objective", finite_diff_check(by_params, flatten(wrap)));
    }

    {
        glot::AnchorBatch batch;
        batch.source_x = random_normal(3, 2, rng);
        batch.target_x = random_normal(2, 2, rng);
        batch.source_y = {0, 1, 2};
        glot::SamplerConfig sc;
        sc.alpha = 1.0;
        sc.lambda = 1.0;
        sc.radius = 0.3;
        sc.svgd.iterations = 5;
        sc.svgd.step = 0.05;
        const glot::RiskWeights w{0.8, 0.0};
        for (auto space : {glot::SampleSpace::input, glot::SampleSpace::latent}) {
            sc.space = space;
            const auto z = glot::sample_particles(batch, sc, net, 3, 1);
            Network<double> probe = net;
            LossFunction<double> fn = [&](const Vector& flat) {
                unflatten(flat, probe);
                auto [ce, g] = grad(probe, cross_entropy_loss(z.source_labels), z.source_anchors);
                glot::RiskComponents parts;
                parts.ce = ce;
                glot::particle_terms_gradient(probe, z, w, parts, g);
                return ValueAndGradient<double>{parts.ce + w.alpha * parts.local, flatten(g)};
            };
            record("composite risk", finite_diff_check(fn, flatten(net)));
        }

        glot::Embedding e{random_normal(4, 2, rng), softmax_rows(random_normal(4, 3, rng)), {0, 1, 2, 0}};
        const glot::Embedding f{random_normal(3, 2, rng), softmax_rows(random_normal(3, 3, rng)), {}};
        glot::GlobalOtConfig oc;
        oc.sinkhorn = {0.5, 1e-13, 100000};
        LossFunction<double> fn = [&](const Vector& v) {
            glot::Embedding probe = e;
            probe.features = Eigen::Map<const Matrix>(v.data(), 4, 2);
            const auto r = glot::global_da_ssl(probe, f, 0.5, oc);
            return ValueAndGradient<double>{r.value, Eigen::Map<const Vector>(r.d_source_features.data(), 8)};
        };
        record("global transport term", finite_diff_check(fn, Vector(Eigen::Map<const Vector>(e.features.data(), 8))));
    }

    return {"", worst <= tolerance, "max relative error " + fmt("%.3g", worst) + " (" + worst_path + ")"};
}

CheckResult check_sup_limit(int instances, std::uint64_t seed)
{
    int failures = 0;
    double worst_far = 1.0;
    for (const auto& c : random_couplings(instances, seed)) {
        const double sup = glot::support_supremum(c.weights, c.distances);
        double w_top = 0.0;
        for (std::size_t k = 0; k < c.distances.size(); ++k)
            if (c.distances[k](0) == sup)
                w_top += c.weights(static_cast<Eigen::Index>(k));
        double prev = 0.0;
        bool ok = true;
        for (double q = 1.0; q <= 64.0; q *= 2.0) {
            const double v = glot::coupling_sup_cost(c.weights, c.distances, q);
            ok = ok && v >= prev * (1.0 - 1e-12) && v <= sup * (1.0 + 1e-12) &&
                 v >= std::pow(w_top, 1.0 / q) * sup * (1.0 - 1e-12);
            prev = v;
        }
        const double far = glot::coupling_sup_cost(c.weights, c.distances, 4096.0) / sup;
        worst_far = std::min(worst_far, far);
        ok = ok && far >= 0.99;
        failures += !ok;
    }
    return {"", failures == 0,
            fmt("%g of %g couplings violate; worst ratio at q=4096 %.5f", failures, instances, worst_far)};
}

CheckResult check_sup_limit_at(double q, int instances, std::uint64_t seed)
{
    int within = 0, monotone = 0;
    double worst = 1.0;
    for (const auto& c : random_couplings(instances, seed)) {
        const double sup = glot::support_supremum(c.weights, c.distances);
        double prev = 0.0;
        bool mono = true;
        for (double k = 1.0; k <= q; k *= 2.0) {
            const double v = glot::coupling_sup_cost(c.weights, c.distances, k);
            mono = mono && v >= prev * (1.0 - 1e-12);
            prev = v;
        }
        const double ratio = prev / sup;
        worst = std::min(worst, ratio);
        within += ratio >= 0.99;
        monotone += mono;
    }
    CheckResult r;
    r.pass = within == instances && monotone == instances;
    r.detail = fmt("%g/%g within 1%% at the final q, ", within, instances) +
               fmt("%g/%g monotone, worst ratio %.4f", monotone, instances, worst);
    return r;
}

std::vector<CheckResult> selftest_suite()
{
    return {
        timed_check("gibbs oracle", [] { return check_gibbs_oracle(); }),
        timed_check("sinkhorn vs exact", [] { return check_sinkhorn_exact(); }),
        timed_check("semi-dual vs sinkhorn", [] { return check_semidual(); }),
        timed_check("svgd moments", [] { return check_svgd_moments(); }),
        timed_check("svgd ball", [] { return check_svgd_ball(); }),
        timed_check("gradients", [] { return check_gradients(); }),
        timed_check("sup-cost limit", [] { return check_sup_limit(); }),
    };
}

std::string format_table(const std::vector<CheckResult>& results)
{
    std::size_t width = 5;
    for (const auto& r : results)
        width = std::max(width, r.name.size());
    std::string out;
    char buf[64];
    for (const auto& r : results) {
        std::snprintf(buf, sizeof buf, "%8.2fs  ", r.seconds);
        out += r.name + std::string(width - r.name.size() + 2, ' ') + (r.pass ? "PASS  " : "FAIL  ") + buf +
               r.detail + "\n";
    }
    return out;
}

} // namespace glotdr::app
