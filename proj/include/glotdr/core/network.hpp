#ifndef GLOTDR_CORE_NETWORK_HPP
#define GLOTDR_CORE_NETWORK_HPP

#include "glotdr/core/losses.hpp"
#include "glotdr/core/tensor.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace glotdr {

enum class Activation { relu, leaky_relu, identity };

inline constexpr double kLeakySlope = 0.1;

inline std::string to_string(Activation a)
{
    switch (a) {
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::identity: return "identity";
    }
    return "identity";
}

template <typename Scalar>
struct DenseLayer {
    MatrixX<Scalar> weight; // out x in
    VectorX<Scalar> bias;
    Activation activation = Activation::identity;

    Eigen::Index in_dim() const { return weight.cols(); }
    Eigen::Index out_dim() const { return weight.rows(); }
};

template <typename Scalar>
struct Mlp {
    std::vector<DenseLayer<Scalar>> layers;

    bool empty() const { return layers.empty(); }
    Eigen::Index in_dim() const { return layers.front().in_dim(); }
    Eigen::Index out_dim() const { return layers.back().out_dim(); }

    Eigen::Index parameter_count() const
    {
        Eigen::Index n = 0;
        for (const auto& l : layers)
            n += l.weight.size() + l.bias.size();
        return n;
    }

    Mlp zeros_like() const
    {
        Mlp z = *this;
        for (auto& l : z.layers) {
            l.weight.setZero();
            l.bias.setZero();
        }
        return z;
    }
};

// Per-layer inputs and pre-activations recorded by a forward pass.
template <typename Scalar>
struct MlpTape {
    std::vector<MatrixX<Scalar>> inputs;
    std::vector<MatrixX<Scalar>> pre;
};

template <typename Derived>
auto activate(const Eigen::MatrixBase<Derived>& z, Activation a)
{
    using Scalar = typename Derived::Scalar;
    MatrixX<Scalar> out = z;
    switch (a) {
    case Activation::relu: out = z.cwiseMax(Scalar(0)); break;
    case Activation::leaky_relu: out = z.unaryExpr([](Scalar v) { return v > Scalar(0) ? v : Scalar(kLeakySlope) * v; }); break;
    case Activation::identity: break;
    }
    return out;
}

template <typename Scalar>
MatrixX<Scalar> activation_backward(const MatrixX<Scalar>& pre, const MatrixX<Scalar>& d_out, Activation a)
{
    switch (a) {
    case Activation::relu:
        return d_out.binaryExpr(pre, [](Scalar g, Scalar z) { return z > Scalar(0) ? g : Scalar(0); });
    case Activation::leaky_relu:
        return d_out.binaryExpr(pre, [](Scalar g, Scalar z) { return z > Scalar(0) ? g : Scalar(kLeakySlope) * g; });
    case Activation::identity: break;
    }
    return d_out;
}

template <typename Scalar>
MatrixX<Scalar> forward(const Mlp<Scalar>& mlp, const MatrixX<Scalar>& x, MlpTape<Scalar>* tape = nullptr)
{
    if (tape) {
        tape->inputs.clear();
        tape->pre.clear();
    }
    MatrixX<Scalar> h = x;
    for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
        const auto& layer = mlp.layers[i];
        if (h.cols() != layer.in_dim())
            throw DimensionError("layer " + std::to_string(i) + " expects input dimension " +
                                 std::to_string(layer.in_dim()) + ", got " + std::to_string(h.cols()));
        MatrixX<Scalar> z = h * layer.weight.transpose();
        z.rowwise() += layer.bias.transpose();
        if (!z.allFinite())
            throw NonFiniteError("non-finite pre-activation in forward pass", static_cast<int>(i));
        if (tape) {
            tape->inputs.push_back(std::move(h));
            tape->pre.push_back(z);
        }
        h = activate(z, layer.activation);
    }
    return h;
}

/// Accumulates parameter gradients into `grad` (when non-null) and returns
/// the gradient with respect to the input batch.
template <typename Scalar>
MatrixX<Scalar> backward(const Mlp<Scalar>& mlp, const MlpTape<Scalar>& tape, const MatrixX<Scalar>& d_out,
                         Mlp<Scalar>* grad)
{
    MatrixX<Scalar> d = d_out;
    for (std::size_t k = mlp.layers.size(); k-- > 0;) {
        const auto& layer = mlp.layers[k];
        MatrixX<Scalar> dz = activation_backward(tape.pre[k], d, layer.activation);
        if (!dz.allFinite())
            throw NonFiniteError("non-finite gradient in backward pass", static_cast<int>(k));
        if (grad) {
            grad->layers[k].weight.noalias() += dz.transpose() * tape.inputs[k];
            grad->layers[k].bias += dz.colwise().sum().transpose();
        }
        d = dz * layer.weight;
    }
    return d;
}

/// f = h o g: a feature extractor followed by a classifier head ending in
/// logits. An empty extractor means features are the raw inputs.
template <typename Scalar>
struct Network {
    Mlp<Scalar> extractor;
    Mlp<Scalar> head;

    Eigen::Index input_dim() const { return extractor.empty() ? head.in_dim() : extractor.in_dim(); }
    Eigen::Index latent_dim() const { return head.in_dim(); }
    Eigen::Index classes() const { return head.out_dim(); }
    Eigen::Index parameter_count() const { return extractor.parameter_count() + head.parameter_count(); }

    Network zeros_like() const { return {extractor.zeros_like(), head.zeros_like()}; }
};

template <typename Scalar>
struct NetworkPass {
    MatrixX<Scalar> features;
    MatrixX<Scalar> logits;
    MatrixX<Scalar> probs;
    MlpTape<Scalar> extractor_tape;
    MlpTape<Scalar> head_tape;
};

template <typename Scalar>
NetworkPass<Scalar> forward(const Network<Scalar>& net, const MatrixX<Scalar>& x)
{
    NetworkPass<Scalar> pass;
    if (x.cols() != net.input_dim())
        throw DimensionError("network expects input dimension " + std::to_string(net.input_dim()) + ", got " +
                             std::to_string(x.cols()));
    pass.features = net.extractor.empty() ? x : forward(net.extractor, x, &pass.extractor_tape);
    pass.logits = forward(net.head, pass.features, &pass.head_tape);
    pass.probs = softmax_rows(pass.logits);
    return pass;
}

/// Runs only the classifier head on latent codes.
template <typename Scalar>
NetworkPass<Scalar> forward_head(const Network<Scalar>& net, const MatrixX<Scalar>& latents)
{
    NetworkPass<Scalar> pass;
    pass.features = latents;
    pass.logits = forward(net.head, latents, &pass.head_tape);
    pass.probs = softmax_rows(pass.logits);
    return pass;
}

/// Backpropagates upstream gradients on features and logits (either may be
/// empty) and returns the gradient with respect to the network input.
template <typename Scalar>
MatrixX<Scalar> backward(const Network<Scalar>& net, const NetworkPass<Scalar>& pass,
                         const MatrixX<Scalar>& d_features, const MatrixX<Scalar>& d_logits, Network<Scalar>* grad)
{
    MatrixX<Scalar> d_latent;
    if (d_logits.size() > 0)
        d_latent = backward(net.head, pass.head_tape, d_logits, grad ? &grad->head : nullptr);
    else
        d_latent = MatrixX<Scalar>::Zero(pass.features.rows(), pass.features.cols());
    if (d_features.size() > 0)
        d_latent += d_features;
    if (net.extractor.empty())
        return d_latent;
    return backward(net.extractor, pass.extractor_tape, d_latent, grad ? &grad->extractor : nullptr);
}

/// Gradient of the head alone (latent-space mode).
template <typename Scalar>
MatrixX<Scalar> backward_head(const Network<Scalar>& net, const NetworkPass<Scalar>& pass,
                              const MatrixX<Scalar>& d_logits, Network<Scalar>* grad)
{
    return backward(net.head, pass.head_tape, d_logits, grad ? &grad->head : nullptr);
}

// Flat parameter views, extractor first, each layer as weight (column-major) then bias.

template <typename Scalar>
VectorX<Scalar> flatten(const Network<Scalar>& net)
{
    VectorX<Scalar> flat(net.parameter_count());
    Eigen::Index pos = 0;
    for (const auto* mlp : {&net.extractor, &net.head})
        for (const auto& l : mlp->layers) {
            flat.segment(pos, l.weight.size()) = l.weight.reshaped();
            pos += l.weight.size();
            flat.segment(pos, l.bias.size()) = l.bias;
            pos += l.bias.size();
        }
    return flat;
}

template <typename Scalar>
void unflatten(const VectorX<Scalar>& flat, Network<Scalar>& net)
{
    if (flat.size() != net.parameter_count())
        throw DimensionError("flat parameter vector has wrong length");
    Eigen::Index pos = 0;
    for (auto* mlp : {&net.extractor, &net.head})
        for (auto& l : mlp->layers) {
            l.weight.reshaped() = flat.segment(pos, l.weight.size());
            pos += l.weight.size();
            l.bias = flat.segment(pos, l.bias.size());
            pos += l.bias.size();
        }
}

struct NetworkLayout {
    int input_dim = 2;
    std::vector<int> feature_widths{32, 32};
    std::vector<int> head_widths{};
    int classes = 2;
    Activation activation = Activation::relu;
};

/// Kaiming-uniform (fan-in) weights, biases uniform in +-1/sqrt(fan_in).
template <typename Scalar, typename Rng>
DenseLayer<Scalar> make_dense(int in, int out, Activation a, Rng& rng)
{
    DenseLayer<Scalar> layer;
    layer.activation = a;
    layer.weight.resize(out, in);
    layer.bias.resize(out);
    const double gain = a == Activation::identity ? 1.0
                        : a == Activation::relu ? std::sqrt(2.0)
                                                : std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope));
    const double w_bound = gain * std::sqrt(3.0 / in);
    const double b_bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> uw(-w_bound, w_bound), ub(-b_bound, b_bound);
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
            layer.weight(r, c) = static_cast<Scalar>(uw(rng));
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r)
        layer.bias(r) = static_cast<Scalar>(ub(rng));
    return layer;
}

template <typename Scalar = double, typename Rng>
Network<Scalar> make_network(const NetworkLayout& layout, Rng& rng)
{
    Network<Scalar> net;
    int width = layout.input_dim;
    for (int w : layout.feature_widths) {
        net.extractor.layers.push_back(make_dense<Scalar>(width, w, layout.activation, rng));
        width = w;
    }
    for (int w : layout.head_widths) {
        net.head.layers.push_back(make_dense<Scalar>(width, w, layout.activation, rng));
        width = w;
    }
    net.head.layers.push_back(make_dense<Scalar>(width, layout.classes, Activation::identity, rng));
    return net;
}

using NetworkParams = Network<double>;

} // namespace glotdr

#endif // GLOTDR_CORE_NETWORK_HPP
