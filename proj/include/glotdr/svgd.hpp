#ifndef GLOTDR_SVGD_HPP
#define GLOTDR_SVGD_HPP

#include "glotdr/core/tensor.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

namespace glotdr::svgd {

enum class NormOrder { l2, linf };

/// Closed ball {x : ||x - center||_p <= radius}. A zero radius pins points
/// to the center.
struct BallSpec {
    RowVector center;
    double radius = 0.0;
    NormOrder norm = NormOrder::linf;
};

/// RBF bandwidth: a fixed sigma, or the median heuristic when empty.
struct KernelSpec {
    std::optional<double> bandwidth;

    static KernelSpec median() { return {}; }
    static KernelSpec fixed(double sigma) { return {sigma}; }
};

struct SvgdConfig {
    int particles = 2;
    int iterations = 15;
    double step = 0.002;
    /// Half-width of the uniform initial noise; radius / 2 when unset.
    std::optional<double> init_noise;
    /// Per-iteration step override; constant `step` when empty.
    std::function<double(int)> step_schedule;

    double step_at(int iteration) const { return step_schedule ? step_schedule(iteration) : step; }
};

struct ParticleSet {
    RowVector anchor;
    Matrix particles; // one particle per row
};

struct KernelValue {
    double value = 0.0;
    RowVector grad_x;
};

/// Maps a batch of points (rows) to the gradient of the log target at each.
using ScoreFunction = std::function<Matrix(const Matrix&)>;
using IterationObserver = std::function<void(int iteration, const Matrix& particles)>;

/// k(x, y) = exp(-||x - y||^2 / (2 sigma^2)) and its gradient in x.
KernelValue rbf_kernel(const RowVector& x, const RowVector& y, double sigma);

/// sigma^2 = med / (2 ln(n + 1)), med the median pairwise squared distance.
/// Falls back to 1 when that median is zero.
double median_bandwidth(const Matrix& particles);

double resolve_bandwidth(const KernelSpec& kernel, const Matrix& particles);

/// Stein direction at every particle given precomputed scores.
Matrix svgd_direction(const Matrix& particles, const Matrix& scores, double sigma);
Matrix svgd_direction(const Matrix& particles, const ScoreFunction& score, const KernelSpec& kernel);

double distance(const RowVector& x, const RowVector& center, NormOrder norm);
bool in_ball(const RowVector& x, const BallSpec& ball);
RowVector project_ball(const RowVector& x, const BallSpec& ball);

void validate(const SvgdConfig& cfg);

/// Projected SVGD around a single anchor (the ball center).
ParticleSet projected_svgd(const ScoreFunction& score, const BallSpec& ball, const SvgdConfig& cfg,
                           std::mt19937_64& rng, const KernelSpec& kernel = KernelSpec::median(),
                           const IterationObserver& observer = {});

/// Runs independent projected SVGD chains for many anchors with one score
/// evaluation per iteration. Points are stacked anchor-major: rows
/// [a * n, (a + 1) * n) belong to anchor a. Each anchor draws its initial
/// noise from its own generator seeded by `seeds[a]`.
std::vector<Matrix> projected_svgd_grouped(const Matrix& anchors, double radius, NormOrder norm,
                                           const SvgdConfig& cfg, const KernelSpec& kernel,
                                           const std::vector<std::uint64_t>& seeds, const ScoreFunction& score,
                                           const IterationObserver& observer = {});

} // namespace glotdr::svgd

#endif // GLOTDR_SVGD_HPP
