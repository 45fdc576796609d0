#include "glotdr/svgd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace glotdr::svgd {

KernelValue rbf_kernel(const RowVector& x, const RowVector& y, double sigma)
{
    if (!(sigma > 0.0))
        throw std::invalid_argument("RBF bandwidth must be positive");
    if (x.size() != y.size())
        throw DimensionError("RBF kernel arguments differ in dimension");
    const RowVector diff = x - y;
    const double k = std::exp(-diff.squaredNorm() / (2.0 * sigma * sigma));
    return {k, (-k / (sigma * sigma)) * diff};
}

double median_bandwidth(const Matrix& particles)
{
    const Eigen::Index n = particles.rows();
    if (n < 2)
        throw std::invalid_argument("median bandwidth needs at least two particles");
    std::vector<double> d2;
    d2.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            d2.push_back((particles.row(i) - particles.row(j)).squaredNorm());
    std::sort(d2.begin(), d2.end());
    const std::size_t m = d2.size();
    const double med = m % 2 ? d2[m / 2] : 0.5 * (d2[m / 2 - 1] + d2[m / 2]);
    if (!(med > 0.0))
        return 1.0;
    return std::sqrt(med / (2.0 * std::log(static_cast<double>(n) + 1.0)));
}

double resolve_bandwidth(const KernelSpec& kernel, const Matrix& particles)
{
    if (kernel.bandwidth) {
        if (!(*kernel.bandwidth > 0.0))
            throw std::invalid_argument("explicit bandwidth must be positive");
        return *kernel.bandwidth;
    }
    return particles.rows() < 2 ? 1.0 : median_bandwidth(particles);
}

Matrix svgd_direction(const Matrix& particles, const Matrix& scores, double sigma)
{
    if (!(sigma > 0.0))
        throw std::invalid_argument("RBF bandwidth must be positive");
    if (particles.rows() != scores.rows() || particles.cols() != scores.cols())
        throw DimensionError("scores must match particle layout");
    for (Eigen::Index i = 0; i < scores.rows(); ++i)
        if (!scores.row(i).allFinite())
            throw NonFiniteError("non-finite score", static_cast<int>(i));

    const Eigen::Index n = particles.rows();
    const double inv_s2 = 1.0 / (sigma * sigma);
    // kernel[j, i] = k(x_j, x_i); symmetric
    Matrix kernel(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        kernel(i, i) = 1.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double k = std::exp(-0.5 * inv_s2 * (particles.row(i) - particles.row(j)).squaredNorm());
            kernel(i, j) = k;
            kernel(j, i) = k;
        }
    }
    // sum_j grad_{x_j} k(x_j, x_i) = (x_i * sum_j k_ji - sum_j k_ji x_j) / sigma^2
    const Vector mass = kernel.colwise().sum().transpose();
    Matrix repulsion = (particles.array().colwise() * mass.array()).matrix() - kernel * particles;
    Matrix phi = kernel * scores + inv_s2 * repulsion;
    return phi / static_cast<double>(n);
}

Matrix svgd_direction(const Matrix& particles, const ScoreFunction& score, const KernelSpec& kernel)
{
    return svgd_direction(particles, score(particles), resolve_bandwidth(kernel, particles));
}

double distance(const RowVector& x, const RowVector& center, NormOrder norm)
{
    if (x.size() != center.size())
        throw DimensionError("point and ball center differ in dimension");
    const RowVector d = x - center;
    return norm == NormOrder::linf ? (d.size() ? d.cwiseAbs().maxCoeff() : 0.0) : d.norm();
}

bool in_ball(const RowVector& x, const BallSpec& ball)
{
    return distance(x, ball.center, ball.norm) <= ball.radius;
}

namespace {

// Largest representable c + r with fl((c + r) - c) <= r, and its mirror.
double upper_edge(double c, double r)
{
    double hi = c + r;
    while (hi - c > r)
        hi = std::nextafter(hi, -std::numeric_limits<double>::infinity());
    return hi;
}

double lower_edge(double c, double r)
{
    double lo = c - r;
    while (c - lo > r)
        lo = std::nextafter(lo, std::numeric_limits<double>::infinity());
    return lo;
}

} // namespace

RowVector project_ball(const RowVector& x, const BallSpec& ball)
{
    if (x.size() != ball.center.size())
        throw DimensionError("point and ball center differ in dimension");
    if (ball.radius < 0.0)
        throw std::invalid_argument("ball radius must be non-negative");
    RowVector out = x;
    if (ball.norm == NormOrder::linf) {
        for (Eigen::Index k = 0; k < x.size(); ++k) {
            const double c = ball.center(k);
            const double d = x(k) - c;
            if (std::abs(d) <= ball.radius)
                continue;
            out(k) = d > 0 ? upper_edge(c, ball.radius) : lower_edge(c, ball.radius);
        }
        return out;
    }
    const RowVector d = x - ball.center;
    const double len = d.norm();
    if (len <= ball.radius)
        return out;
    const RowVector dir = d * (ball.radius / len);
    double shrink = 1.0;
    out = ball.center + shrink * dir;
    while ((out - ball.center).norm() > ball.radius) {
        shrink *= 1.0 - 4.0 * std::numeric_limits<double>::epsilon();
        out = ball.center + shrink * dir;
    }
    return out;
}

void validate(const SvgdConfig& cfg)
{
    if (cfg.particles < 1)
        throw std::invalid_argument("SVGD needs at least one particle");
    if (cfg.iterations < 0)
        throw std::invalid_argument("SVGD iteration count must be non-negative");
    if (!(cfg.step > 0.0))
        throw std::invalid_argument("SVGD step size must be positive");
    if (cfg.init_noise && *cfg.init_noise < 0.0)
        throw std::invalid_argument("SVGD init noise must be non-negative");
}

std::vector<Matrix> projected_svgd_grouped(const Matrix& anchors, double radius, NormOrder norm,
                                           const SvgdConfig& cfg, const KernelSpec& kernel,
                                           const std::vector<std::uint64_t>& seeds, const ScoreFunction& score,
                                           const IterationObserver& observer)
{
    validate(cfg);
    const Eigen::Index groups = anchors.rows();
    const Eigen::Index dim = anchors.cols();
    const Eigen::Index n = cfg.particles;
    if (static_cast<Eigen::Index>(seeds.size()) != groups)
        throw DimensionError("one seed per anchor is required");
    const double half_width = cfg.init_noise.value_or(0.5 * radius);

    Matrix points(groups * n, dim);
    std::vector<BallSpec> balls(static_cast<std::size_t>(groups));
    for (Eigen::Index a = 0; a < groups; ++a) {
        auto& ball = balls[static_cast<std::size_t>(a)];
        ball = {anchors.row(a), radius, norm};
        std::mt19937_64 rng(seeds[static_cast<std::size_t>(a)]);
        std::uniform_real_distribution<double> noise(-half_width, half_width);
        for (Eigen::Index j = 0; j < n; ++j) {
            RowVector p = ball.center;
            if (half_width > 0.0)
                for (Eigen::Index k = 0; k < dim; ++k)
                    p(k) += noise(rng);
            points.row(a * n + j) = project_ball(p, ball);
        }
    }
    if (observer)
        observer(0, points);

    for (int it = 0; it < cfg.iterations; ++it) {
        const Matrix scores = score(points);
        if (scores.rows() != points.rows() || scores.cols() != dim)
            throw DimensionError("score function returned the wrong shape");
        const double eta = cfg.step_at(it);
        for (Eigen::Index a = 0; a < groups; ++a) {
            const Matrix block = points.middleRows(a * n, n);
            Matrix phi;
            try {
                phi = svgd_direction(block, scores.middleRows(a * n, n), resolve_bandwidth(kernel, block));
            } catch (const NonFiniteError& e) {
                throw NonFiniteError("non-finite score", static_cast<int>(a * n + e.index()));
            }
            const auto& ball = balls[static_cast<std::size_t>(a)];
            for (Eigen::Index j = 0; j < n; ++j)
                points.row(a * n + j) = project_ball(block.row(j) + eta * phi.row(j), ball);
        }
        if (observer)
            observer(it + 1, points);
    }

    std::vector<Matrix> out;
    out.reserve(static_cast<std::size_t>(groups));
    for (Eigen::Index a = 0; a < groups; ++a)
        out.push_back(points.middleRows(a * n, n));
    return out;
}

ParticleSet projected_svgd(const ScoreFunction& score, const BallSpec& ball, const SvgdConfig& cfg,
                           std::mt19937_64& rng, const KernelSpec& kernel, const IterationObserver& observer)
{
    const std::vector<std::uint64_t> seeds{rng()};
    auto groups = projected_svgd_grouped(ball.center, ball.radius, ball.norm, cfg, kernel, seeds, score, observer);
    return {ball.center, std::move(groups.front())};
}

} // namespace glotdr::svgd
