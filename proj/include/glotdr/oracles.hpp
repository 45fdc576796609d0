#ifndef GLOTDR_ORACLES_HPP
#define GLOTDR_ORACLES_HPP

// Brute-force reference implementations. They share no code with the
// library paths they check.

#include "glotdr/core/tensor.hpp"

namespace glotdr::oracles {

/// Stein direction by explicit double loop over particle pairs.
Matrix naive_svgd_direction(const Matrix& particles, const Matrix& scores, double sigma);

struct SimplexMaximum {
    Vector weights;
    double objective = 0.0;
    int iterations = 0;
};

/// argmax over the simplex of sum_i w_i r_i + (1/lambda) H(w), found by
/// scaled Newton ascent with a fraction-to-boundary rule.
SimplexMaximum entropy_regularized_argmax(const Vector& r, double lambda, int max_iter = 2000);

double total_variation(const Vector& p, const Vector& q);

} // namespace glotdr::oracles

#endif // GLOTDR_ORACLES_HPP
