#ifndef GLOTDR_CORE_LOSSES_HPP
#define GLOTDR_CORE_LOSSES_HPP

#include "glotdr/core/tensor.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace glotdr {

/// Added to probabilities before every logarithm.
inline constexpr double kProbFloor = 1e-12;

template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& logits)
{
    using Scalar = typename Derived::Scalar;
    MatrixX<Scalar> p = logits;
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
        const Scalar m = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - m).exp();
        p.row(r) /= p.row(r).sum();
    }
    return p;
}

/// Pulls a gradient on softmax outputs back to the logits, row by row.
template <typename Derived, typename OtherDerived>
MatrixX<typename Derived::Scalar> softmax_backward(const Eigen::MatrixBase<Derived>& probs,
                                                   const Eigen::MatrixBase<OtherDerived>& d_probs)
{
    using Scalar = typename Derived::Scalar;
    VectorX<Scalar> inner = (d_probs.array() * probs.array()).rowwise().sum();
    MatrixX<Scalar> d = probs.array() * (d_probs.array().colwise() - inner.array());
    return d;
}

inline void check_label(int label, Eigen::Index classes)
{
    if (label < 0 || label >= classes)
        throw std::out_of_range("label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
}

template <typename Derived>
typename Derived::Scalar cross_entropy(const Eigen::MatrixBase<Derived>& probs, int label)
{
    check_label(label, probs.size());
    using std::log;
    return -log(probs(label) + typename Derived::Scalar(kProbFloor));
}

/// Mean cross-entropy over rows; writes d(loss)/d(probs) when requested.
template <typename Scalar>
Scalar cross_entropy_batch(const MatrixX<Scalar>& probs, const std::vector<int>& labels,
                           MatrixX<Scalar>* d_probs = nullptr, Scalar scale = Scalar(1))
{
    if (static_cast<Eigen::Index>(labels.size()) != probs.rows())
        throw DimensionError("label count does not match batch size");
    const auto n = static_cast<Scalar>(probs.rows());
    if (d_probs)
        d_probs->setZero(probs.rows(), probs.cols());
    Scalar total(0);
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        const int y = labels[static_cast<std::size_t>(r)];
        total += cross_entropy(probs.row(r), y);
        if (d_probs)
            (*d_probs)(r, y) = -scale / (n * (probs(r, y) + Scalar(kProbFloor)));
    }
    return scale * total / n;
}

template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar kl_divergence(const Eigen::MatrixBase<DerivedP>& p, const Eigen::MatrixBase<DerivedQ>& q)
{
    using Scalar = typename DerivedP::Scalar;
    const Scalar f(kProbFloor);
    return (p.array() * ((p.array() + f).log() - (q.array() + f).log())).sum();
}

/// 0.5 KL(p||q) + 0.5 KL(q||p) with floored logarithms.
template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar symmetric_kl(const Eigen::MatrixBase<DerivedP>& p, const Eigen::MatrixBase<DerivedQ>& q)
{
    using Scalar = typename DerivedP::Scalar;
    return Scalar(0.5) * kl_divergence(p, q) + Scalar(0.5) * kl_divergence(q, p);
}

/// Gradient of symmetric_kl(p, q) with respect to p (swap the arguments for q).
template <typename DerivedP, typename DerivedQ>
RowVectorX<typename DerivedP::Scalar> symmetric_kl_grad_first(const Eigen::MatrixBase<DerivedP>& p,
                                                              const Eigen::MatrixBase<DerivedQ>& q)
{
    using Scalar = typename DerivedP::Scalar;
    const Scalar f(kProbFloor);
    const auto pa = p.array();
    const auto qa = q.array();
    // d/dp [p log(p+f) - p log(q+f)] + d/dp [-q log(p+f)]
    RowVectorX<Scalar> g = ((pa + f).log() + pa / (pa + f) - (qa + f).log() - qa / (pa + f)).matrix();
    return Scalar(0.5) * g;
}

} // namespace glotdr

#endif // GLOTDR_CORE_LOSSES_HPP
