#ifndef GLOTDR_CORE_GRADCHECK_HPP
#define GLOTDR_CORE_GRADCHECK_HPP

#include "glotdr/core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

namespace glotdr {

template <typename Scalar>
struct ValueAndGradient {
    Scalar value{};
    VectorX<Scalar> gradient;
};

template <typename Scalar>
using LossFunction = std::function<ValueAndGradient<Scalar>(const VectorX<Scalar>&)>;

/// Central differences, one coordinate at a time.
template <typename Scalar>
VectorX<Scalar> numerical_gradient(const LossFunction<Scalar>& loss, const VectorX<Scalar>& params, Scalar h)
{
    VectorX<Scalar> g(params.size());
    VectorX<Scalar> probe = params;
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        const Scalar saved = probe(i);
        probe(i) = saved + h;
        const Scalar up = loss(probe).value;
        probe(i) = saved - h;
        const Scalar down = loss(probe).value;
        probe(i) = saved;
        g(i) = (up - down) / (Scalar(2) * h);
    }
    return g;
}

/// max_i |g_analytic - g_fd| / (|g_fd| + 1e-6); the floor sits above the
/// central-difference roundoff on components whose true gradient is zero.
template <typename Scalar>
Scalar max_relative_error(const VectorX<Scalar>& analytic, const VectorX<Scalar>& numeric)
{
    if (analytic.size() != numeric.size())
        throw DimensionError("gradient size mismatch");
    Scalar worst(0);
    for (Eigen::Index i = 0; i < analytic.size(); ++i)
        worst = std::max(worst, std::abs(analytic(i) - numeric(i)) / (std::abs(numeric(i)) + Scalar(1e-6)));
    return worst;
}

template <typename Scalar>
Scalar finite_diff_check(const LossFunction<Scalar>& loss, const VectorX<Scalar>& params, Scalar h = Scalar(1e-5))
{
    if (!(h > Scalar(0) && h <= Scalar(1e-2)))
        throw std::invalid_argument("finite-difference step must lie in (0, 1e-2]");
    const auto analytic = loss(params).gradient;
    return max_relative_error(analytic, numerical_gradient(loss, params, h));
}

} // namespace glotdr

#endif // GLOTDR_CORE_GRADCHECK_HPP
