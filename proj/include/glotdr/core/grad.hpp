#ifndef GLOTDR_CORE_GRAD_HPP
#define GLOTDR_CORE_GRAD_HPP

#include "glotdr/core/gradcheck.hpp"
#include "glotdr/core/losses.hpp"
#include "glotdr/core/network.hpp"

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

namespace glotdr {

/// Upstream gradients a loss places on the outputs of a forward pass. Empty
/// members mean "no contribution".
template <typename Scalar>
struct OutputGradients {
    MatrixX<Scalar> d_features;
    MatrixX<Scalar> d_logits;
    MatrixX<Scalar> d_probs;
};

template <typename Scalar>
using OutputLoss = std::function<Scalar(const NetworkPass<Scalar>&, OutputGradients<Scalar>&)>;

template <typename Scalar>
MatrixX<Scalar> logits_gradient(const NetworkPass<Scalar>& pass, const OutputGradients<Scalar>& g)
{
    MatrixX<Scalar> d = g.d_logits;
    if (g.d_probs.size() > 0) {
        MatrixX<Scalar> via_probs = softmax_backward(pass.probs, g.d_probs);
        if (d.size() > 0)
            d += via_probs;
        else
            d = std::move(via_probs);
    }
    return d;
}

/// Exact reverse-mode gradient of `loss(forward(net, batch))` in the
/// parameter layout of `net`.
template <typename Scalar>
std::pair<Scalar, Network<Scalar>> grad(const Network<Scalar>& net, const OutputLoss<Scalar>& loss,
                                        const MatrixX<Scalar>& batch)
{
    const auto pass = forward(net, batch);
    OutputGradients<Scalar> g;
    const Scalar value = loss(pass, g);
    if (!std::isfinite(static_cast<double>(value)))
        throw NonFiniteError("non-finite loss value", static_cast<int>(net.extractor.layers.size() + net.head.layers.size()));
    Network<Scalar> out = net.zeros_like();
    backward(net, pass, g.d_features, logits_gradient(pass, g), &out);
    return {value, std::move(out)};
}

/// Mean cross-entropy of the batch predictions against `labels`.
template <typename Scalar = double>
OutputLoss<Scalar> cross_entropy_loss(std::vector<int> labels)
{
    return [labels = std::move(labels)](const NetworkPass<Scalar>& pass, OutputGradients<Scalar>& g) {
        return cross_entropy_batch(pass.probs, labels, &g.d_probs);
    };
}

/// Adapts an output loss to a function of the flat parameter vector.
template <typename Scalar>
LossFunction<Scalar> as_parameter_function(Network<Scalar> net, OutputLoss<Scalar> loss, MatrixX<Scalar> batch)
{
    return [net = std::move(net), loss = std::move(loss), batch = std::move(batch)](const VectorX<Scalar>& flat) mutable {
        unflatten(flat, net);
        auto [value, g] = grad(net, loss, batch);
        return ValueAndGradient<Scalar>{value, flatten(g)};
    };
}

} // namespace glotdr

#endif // GLOTDR_CORE_GRAD_HPP
