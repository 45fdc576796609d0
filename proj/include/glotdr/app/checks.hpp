#ifndef GLOTDR_APP_CHECKS_HPP
#define GLOTDR_APP_CHECKS_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace glotdr::app {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

/// Runs `body`, timing it; an escaping exception is a failure.
CheckResult timed_check(const std::string& name, const std::function<CheckResult()>& body);

/// Closed-form Gibbs conditional against the simplex maximizer, on
/// candidates drawn in a ball and scored by a random network.
CheckResult check_gibbs_oracle(int instances = 100, std::uint64_t seed = 1);
/// Sinkhorn plan cost against exact enumeration.
CheckResult check_sinkhorn_exact(int instances = 50, std::uint64_t seed = 2, double epsilon = 1e-3);
/// Maximized semi-dual against the Sinkhorn entropic value.
CheckResult check_semidual(int instances = 50, std::uint64_t seed = 3, double epsilon = 1e-3);
CheckResult check_svgd_moments();
CheckResult check_svgd_ball();
/// Finite differences on every loss path; reports the worst relative error.
CheckResult check_gradients(double tolerance = 1e-4);
/// Power-mean behaviour of E[rho^q]^(1/q) on random couplings: monotone in
/// q, bracketed by w_max^(1/q) sup and sup, and within 1% of the supremum
/// by q = 4096.
CheckResult check_sup_limit(int instances = 100, std::uint64_t seed = 4);
/// The same couplings, demanding 1% agreement already at q = 64.
CheckResult check_sup_limit_at(double q, int instances = 100, std::uint64_t seed = 4);

std::vector<CheckResult> selftest_suite();

std::string format_table(const std::vector<CheckResult>& results);

} // namespace glotdr::app

#endif // GLOTDR_APP_CHECKS_HPP
