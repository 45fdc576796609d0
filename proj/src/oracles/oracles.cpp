#include "glotdr/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace glotdr::oracles {

Matrix naive_svgd_direction(const Matrix& particles, const Matrix& scores, double sigma)
{
    const Eigen::Index n = particles.rows();
    const Eigen::Index d = particles.cols();
    Matrix out = Matrix::Zero(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            double sq = 0.0;
            for (Eigen::Index c = 0; c < d; ++c)
                sq += (particles(j, c) - particles(i, c)) * (particles(j, c) - particles(i, c));
            const double k = std::exp(-sq / (2.0 * sigma * sigma));
            for (Eigen::Index c = 0; c < d; ++c) {
                const double grad_xj = -(particles(j, c) - particles(i, c)) / (sigma * sigma) * k;
                out(i, c) += k * scores(j, c) + grad_xj;
            }
        }
        out.row(i) /= static_cast<double>(n);
    }
    return out;
}

namespace {

double objective(const Vector& w, const Vector& r, double lambda)
{
    double entropy = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i)
        if (w(i) > 0.0)
            entropy -= w(i) * std::log(w(i));
    return w.dot(r) + entropy / lambda;
}

} // namespace

SimplexMaximum entropy_regularized_argmax(const Vector& r, double lambda, int max_iter)
{
    if (!(lambda > 0.0))
        throw std::invalid_argument("lambda must be positive");
    const Eigen::Index m = r.size();
    SimplexMaximum out;
    out.weights = Vector::Constant(m, 1.0 / static_cast<double>(m));
    double value = objective(out.weights, r, lambda);
    for (int it = 0; it < max_iter; ++it) {
        const Vector& w = out.weights;
        const Vector g = r.array() - (w.array().log() + 1.0) / lambda;
        // Newton direction on the simplex tangent space: dw = lambda W (g - nu)
        const double nu = w.dot(g);
        const Vector dir = lambda * w.cwiseProduct((g.array() - nu).matrix());
        const double slope = g.dot(dir);
        if (!(slope > 0.0) || dir.cwiseAbs().maxCoeff() <= 1e-16)
            break;
        double t = 1.0;
        for (Eigen::Index i = 0; i < m; ++i)
            if (dir(i) < 0.0)
                t = std::min(t, 0.99 * w(i) / -dir(i));
        if (slope < 1e-9) {
            // objective differences are below rounding here; take the Newton step
            Vector trial = w + t * dir;
            out.weights = trial / trial.sum();
            value = objective(out.weights, r, lambda);
            out.iterations = it + 1;
            continue;
        }
        bool moved = false;
        for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
            Vector trial = w + t * dir;
            trial /= trial.sum();
            const double v = objective(trial, r, lambda);
            if (v >= value + 1e-4 * t * slope) {
                out.weights = trial;
                value = v;
                moved = true;
                break;
            }
        }
        out.iterations = it + 1;
        if (!moved)
            break;
    }
    out.objective = value;
    return out;
}

double total_variation(const Vector& p, const Vector& q)
{
    return 0.5 * (p - q).cwiseAbs().sum();
}

} // namespace glotdr::oracles
