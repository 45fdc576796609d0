#ifndef GLOTDR_TRANSPORT_HPP
#define GLOTDR_TRANSPORT_HPP

#include "glotdr/core/network.hpp"
#include "glotdr/core/tensor.hpp"

#include <functional>
#include <random>
#include <vector>

namespace glotdr::ot {

/// Weighted point cloud; `points` may be empty when only the weights matter.
struct DiscreteMeasure {
    Matrix points;
    Vector weights;

    static DiscreteMeasure uniform(Matrix pts);
    static DiscreteMeasure uniform_weights(Eigen::Index n);
    Eigen::Index size() const { return weights.size(); }
};

void validate(const DiscreteMeasure& m, const char* name);

struct TransportPlan {
    Matrix matrix;
    Vector a;
    Vector b;

    /// max over rows and columns of |marginal - target|
    double marginal_violation() const;
};

struct ExactResult {
    TransportPlan plan;
    double cost = 0.0;
};

/// Globally optimal coupling for n, m <= 8 by brute-force enumeration:
/// permutations for uniform square instances, transport-polytope vertices
/// otherwise.
ExactResult exact_ot_small(const Vector& a, const Vector& b, const Matrix& cost);
inline ExactResult exact_ot_small(const DiscreteMeasure& p, const DiscreteMeasure& q, const Matrix& cost)
{
    return exact_ot_small(p.weights, q.weights, cost);
}

struct SinkhornConfig {
    double epsilon = 0.01;
    double tol = 1e-9;
    int max_iter = 10000;
};

void validate(const SinkhornConfig& cfg);

struct SinkhornResult {
    TransportPlan plan;
    /// <plan, C> + epsilon KL(plan || a b^T)
    double entropic_value = 0.0;
    /// <plan, C>
    double transport_cost = 0.0;
    Vector f; // row potentials
    Vector g; // column potentials
    bool converged = false;
    int iterations = 0;
    double violation = 0.0;
    /// entropic objective of the plan after each iteration
    std::vector<double> value_trace;
    /// dual objective <a,f> + <b,g> - eps (sum plan - 1) after each iteration
    std::vector<double> dual_trace;
};

double entropic_objective(const Matrix& plan, const Vector& a, const Vector& b, const Matrix& cost, double epsilon);

SinkhornResult sinkhorn(const Vector& a, const Vector& b, const Matrix& cost, const SinkhornConfig& cfg);

/// sum_j b_j phi^c(j) + sum_i a_i phi_i with
/// phi^c(j) = -eps log sum_i a_i exp((phi_i - C_ij) / eps)
double semidual_value(const Vector& phi, const Vector& a, const Vector& b, const Matrix& cost, double epsilon);

struct SemidualGradient {
    double value = 0.0;
    Vector d_phi;  // a_i - sum_j b_j pi(i|j)
    Matrix d_cost; // b_j pi(i|j)
    Matrix conditional; // pi(i|j), columns sum to one
};

SemidualGradient semidual_gradient(const Vector& phi, const Vector& a, const Vector& b, const Matrix& cost,
                                   double epsilon);

struct SemidualMaximum {
    double value = 0.0;
    Vector phi;
    int iterations = 0;
    double gradient_norm = 0.0;
};

/// Damped Newton ascent on the concave semi-dual, phi_0 pinned to zero.
SemidualMaximum maximize_semidual(const Vector& a, const Vector& b, const Matrix& cost, double epsilon,
                                  int max_iter = 500, double tol = 1e-12);

/// Kantorovich potential: input -> hidden (ReLU) -> scalar.
struct PotentialNet {
    Mlp<double> mlp;

    Vector operator()(const Matrix& x) const;
};

template <typename Rng>
PotentialNet make_potential_net(int input_dim, int hidden, Rng& rng)
{
    PotentialNet pot;
    pot.mlp.layers.push_back(make_dense<double>(input_dim, hidden, Activation::relu, rng));
    pot.mlp.layers.push_back(make_dense<double>(hidden, 1, Activation::identity, rng));
    return pot;
}

/// Cost matrix between two batches plus its reverse pass.
struct GroundCost {
    std::function<Matrix(const Matrix& p, const Matrix& q)> matrix;
    /// Accumulates d(sum dC .* C) into dp and dq.
    std::function<void(const Matrix& p, const Matrix& q, const Matrix& dC, Matrix& dp, Matrix& dq)> backward;
};

GroundCost squared_euclidean();

struct PotentialEstimate {
    double value = 0.0;
    Mlp<double> d_pot;
    Matrix d_p;
    Matrix d_q;
    Matrix d_cost;
};

/// Batch estimate of the entropic dual with a learned potential on P:
/// mean_Q[phi^c] + mean_P[phi], with gradients for the potential and both
/// input batches.
PotentialEstimate dual_potential_estimate(const PotentialNet& pot, const Matrix& sample_p, const Matrix& sample_q,
                                          const GroundCost& cost, double epsilon);

} // namespace glotdr::ot

#endif // GLOTDR_TRANSPORT_HPP
