#include "doctest.h"

#include "glotdr/core.hpp"

#include <cmath>
#include <random>

using namespace glotdr;

namespace {

Network<double> identity_net(int dim)
{
    Network<double> net;
    DenseLayer<double> l;
    l.weight = Matrix::Identity(dim, dim);
    l.bias = Vector::Zero(dim);
    net.head.layers.push_back(l);
    return net;
}

OutputLoss<double> ce_loss(std::vector<int> labels)
{
    return [labels = std::move(labels)](const NetworkPass<double>& pass, OutputGradients<double>& g) {
        return cross_entropy_batch(pass.probs, labels, &g.d_probs);
    };
}

} // namespace

TEST_CASE("forward: identity network")
{
    auto net = identity_net(2);
    auto pass = forward(net, Matrix(Matrix::Zero(1, 2)));
    CHECK(pass.logits(0, 0) == 0.0);
    CHECK(pass.probs(0, 0) == doctest::Approx(0.5));
    CHECK(pass.probs(0, 1) == doctest::Approx(0.5));

    Matrix x(1, 2);
    x << 1, 2;
    pass = forward(net, x);
    CHECK(pass.logits(0, 1) == 2.0);
    const double z = std::exp(1.0) + std::exp(2.0);
    CHECK(pass.probs(0, 0) == doctest::Approx(std::exp(1.0) / z).epsilon(1e-14));
}

TEST_CASE("forward: rows sum to one and shape errors")
{
    std::mt19937_64 rng(3);
    NetworkLayout layout{3, {8}, {}, 4, Activation::leaky_relu};
    auto net = make_network(layout, rng);
    Matrix x = Matrix::Random(10, 3) * 5.0;
    auto pass = forward(net, x);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        CHECK(std::abs(pass.probs.row(r).sum() - 1.0) <= 1e-9);
        CHECK(pass.probs.row(r).minCoeff() > 0.0);
    }
    CHECK_THROWS_AS(forward(net, Matrix(Matrix::Zero(2, 2))), DimensionError);
}

TEST_CASE("forward: non-finite input reports the layer")
{
    std::mt19937_64 rng(1);
    auto net = make_network(NetworkLayout{2, {4}, {}, 2}, rng);
    Matrix x(1, 2);
    x << std::numeric_limits<double>::quiet_NaN(), 0.0;
    try {
        forward(net, x);
        FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
        CHECK(e.index() == 0);
    }
}

TEST_CASE("cross_entropy")
{
    RowVector p(2);
    p << 1.0, 0.0;
    CHECK(cross_entropy(p, 0) == doctest::Approx(0.0).epsilon(1e-11));
    p << 0.5, 0.5;
    CHECK(cross_entropy(p, 1) == doctest::Approx(std::log(2.0)));
    p << 0.2, 0.8;
    CHECK(cross_entropy(p, 0) == doctest::Approx(1.60944).epsilon(1e-5));
    CHECK_THROWS_AS(cross_entropy(p, 2), std::out_of_range);
    CHECK_THROWS_AS(cross_entropy(p, -1), std::out_of_range);
}

TEST_CASE("symmetric_kl")
{
    RowVector p(2), q(2);
    p << 0.3, 0.7;
    CHECK(symmetric_kl(p, p) == 0.0);
    p << 0.5, 0.5;
    q << 0.25, 0.75;
    // direct sums: KL(p||q) = 0.143841, KL(q||p) = 0.130812
    const double forward_kl = 0.5 * std::log(0.5 / 0.25) + 0.5 * std::log(0.5 / 0.75);
    const double reverse_kl = 0.25 * std::log(0.25 / 0.5) + 0.75 * std::log(0.75 / 0.5);
    CHECK(kl_divergence(p, q) == doctest::Approx(0.14384).epsilon(1e-4));
    CHECK(symmetric_kl(p, q) == doctest::Approx(0.5 * forward_kl + 0.5 * reverse_kl).epsilon(1e-10));
    CHECK(symmetric_kl(p, q) == doctest::Approx(0.137327).epsilon(1e-5));
    CHECK(symmetric_kl(p, q) == symmetric_kl(q, p));

    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    for (int t = 0; t < 50; ++t) {
        RowVector a(4), b(4);
        for (int k = 0; k < 4; ++k) {
            a(k) = u(rng);
            b(k) = u(rng);
        }
        a /= a.sum();
        b /= b.sum();
        CHECK(symmetric_kl(a, b) >= 0.0);
        CHECK(symmetric_kl(a, b) == symmetric_kl(b, a));
    }
}

TEST_CASE("symmetric_kl gradient matches finite differences")
{
    RowVector p(3), q(3);
    p << 0.2, 0.5, 0.3;
    q << 0.6, 0.1, 0.3;
    const RowVector g = symmetric_kl_grad_first(p, q);
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
        RowVector up = p, dn = p;
        up(k) += h;
        dn(k) -= h;
        const double fd = (symmetric_kl(up, q) - symmetric_kl(dn, q)) / (2 * h);
        CHECK(g(k) == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("grad: quadratic in the weights")
{
    // loss = 0.5 ||W x||^2 with a single identity-activation layer
    Network<double> net;
    DenseLayer<double> l;
    l.weight.resize(2, 3);
    l.weight << 1, -2, 0.5, 0.3, 0.1, -1;
    l.bias = Vector::Zero(2);
    net.head.layers.push_back(l);
    Matrix x(1, 3);
    x << 0.4, -1.2, 2.0;
    OutputLoss<double> loss = [](const NetworkPass<double>& pass, OutputGradients<double>& g) {
        g.d_logits = pass.logits;
        return 0.5 * pass.logits.squaredNorm();
    };
    auto [value, g] = grad(net, loss, x);
    const Matrix expected = l.weight * x.transpose() * x;
    CHECK((g.head.layers[0].weight - expected).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(value == doctest::Approx(0.5 * (l.weight * x.transpose()).squaredNorm()));
}

TEST_CASE("grad: zero-weight net gives probs - onehot on the bias")
{
    std::mt19937_64 rng(5);
    auto net = make_network(NetworkLayout{2, {4}, {}, 3}, rng);
    for (auto& layer : net.head.layers) {
        layer.weight.setZero();
        layer.bias.setZero();
    }
    Matrix x(1, 2);
    x << 0.3, -0.7;
    auto [value, g] = grad(net, ce_loss({2}), x);
    CHECK(value == doctest::Approx(std::log(3.0)));
    const Vector& gb = g.head.layers.back().bias;
    CHECK(gb(0) == doctest::Approx(1.0 / 3));
    CHECK(gb(1) == doctest::Approx(1.0 / 3));
    CHECK(gb(2) == doctest::Approx(1.0 / 3 - 1.0));
}

TEST_CASE("grad: CE on a two-layer net passes the finite-difference check")
{
    for (auto act : {Activation::relu, Activation::leaky_relu, Activation::identity}) {
        std::mt19937_64 rng(11);
        auto net = make_network(NetworkLayout{3, {6, 5}, {4}, 3, act}, rng);
        Matrix x = Matrix::Random(7, 3);
        const std::vector<int> y{0, 1, 2, 2, 1, 0, 1};
        auto fn = as_parameter_function(net, ce_loss(y), x);
        CHECK(finite_diff_check(fn, flatten(net)) <= 1e-4);
    }
}

TEST_CASE("finite_diff_check: quadratic and constant losses")
{
    Matrix a(3, 3);
    a << 2, 0.5, 0, 0.5, 1, 0.1, 0, 0.1, 3;
    LossFunction<double> quad = [&](const Vector& v) {
        return ValueAndGradient<double>{0.5 * v.dot(a * v), a * v};
    };
    Vector v(3);
    v << 1, -2, 0.5;
    CHECK(finite_diff_check(quad, v) <= 1e-8);

    LossFunction<double> flat = [](const Vector& w) { return ValueAndGradient<double>{4.0, Vector::Zero(w.size())}; };
    CHECK(finite_diff_check(flat, v) == 0.0);
    CHECK_THROWS(finite_diff_check(flat, v, 0.0));
    CHECK_THROWS(finite_diff_check(flat, v, 0.1));
}

TEST_CASE("flatten and unflatten round-trip")
{
    std::mt19937_64 rng(2);
    auto net = make_network(NetworkLayout{2, {3}, {}, 2}, rng);
    Vector flat = flatten(net);
    CHECK(flat.size() == net.parameter_count());
    auto other = net.zeros_like();
    unflatten(flat, other);
    CHECK(flatten(other) == flat);
}

TEST_CASE("optimizer: lr = 0 leaves parameters bit-identical")
{
    for (auto kind : {OptimizerKind::sgd_momentum, OptimizerKind::adam}) {
        OptimizerSpec spec;
        spec.kind = kind;
        spec.weight_decay = 1e-3;
        Vector theta = Vector::Random(10);
        const Vector before = theta;
        Optimizer<double> opt(spec, theta.size());
        for (int s = 0; s < 3; ++s)
            opt.step(theta, Vector::Random(10), 0.0);
        CHECK(theta == before);
    }
}

TEST_CASE("optimizer: SGD momentum matches the recurrence")
{
    OptimizerSpec spec;
    spec.kind = OptimizerKind::sgd_momentum;
    spec.momentum = 0.9;
    Vector theta = Vector::Constant(1, 1.0);
    Optimizer<double> opt(spec, 1);
    opt.step(theta, Vector::Constant(1, 2.0), 0.1);
    CHECK(theta(0) == doctest::Approx(0.8));
    opt.step(theta, Vector::Constant(1, 2.0), 0.1);
    CHECK(theta(0) == doctest::Approx(0.8 - 0.1 * (0.9 * 2.0 + 2.0)));
}

TEST_CASE("optimizer: Adam first step moves by lr")
{
    OptimizerSpec spec;
    spec.kind = OptimizerKind::adam;
    Vector theta = Vector::Zero(2);
    Optimizer<double> opt(spec, 2);
    Vector g(2);
    g << 3.0, -0.5;
    opt.step(theta, g, 0.01);
    CHECK(theta(0) == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(theta(1) == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("schedule_factor")
{
    ScheduleSpec ramp;
    ramp.kind = ScheduleKind::exp_rampup;
    ramp.rampup_length = 30;
    CHECK(schedule_factor(ramp, 30) == 1.0);
    CHECK(schedule_factor(ramp, 45) == 1.0);
    CHECK(schedule_factor(ramp, 0) == doctest::Approx(0.006738).epsilon(1e-4));
    for (int e = 0; e < 30; ++e) {
        CHECK(schedule_factor(ramp, e) > 0.0);
        CHECK(schedule_factor(ramp, e) <= 1.0);
        CHECK(schedule_factor(ramp, e) < schedule_factor(ramp, e + 1));
    }

    ScheduleSpec cosine;
    cosine.kind = ScheduleKind::cosine_annealing;
    cosine.total_epochs = 10;
    CHECK(schedule_factor(cosine, 0) == 1.0);
    CHECK(schedule_factor(cosine, 5) == doctest::Approx(0.5));
    CHECK(schedule_factor(cosine, 10) == doctest::Approx(0.0));

    ScheduleSpec step;
    step.kind = ScheduleKind::step_decay;
    step.decay_epochs = {4, 8};
    step.decay_rate = 0.1;
    CHECK(schedule_factor(step, 3) == 1.0);
    CHECK(schedule_factor(step, 4) == doctest::Approx(0.1));
    CHECK(schedule_factor(step, 8) == doctest::Approx(0.01));

    CHECK(schedule_factor(ScheduleSpec{}, 7) == 1.0);
    CHECK_THROWS(schedule_factor(ramp, -1));
}
