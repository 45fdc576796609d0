#include "glotdr/transport.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace glotdr::ot {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(const Vector& v)
{
    const double m = v.maxCoeff();
    if (m == kNegInf)
        return kNegInf;
    return m + std::log((v.array() - m).exp().sum());
}

Vector safe_log(const Vector& w)
{
    return w.unaryExpr([](double x) { return x > 0.0 ? std::log(x) : kNegInf; });
}

void validate_weights(const Vector& w, const char* name)
{
    if (w.size() == 0)
        throw std::invalid_argument(std::string(name) + ": measure needs at least one point");
    if (!w.allFinite() || w.minCoeff() < 0.0)
        throw std::invalid_argument(std::string(name) + ": weights must be finite and non-negative");
    if (std::abs(w.sum() - 1.0) > 1e-9)
        throw std::invalid_argument(std::string(name) + ": weights must sum to one");
}

void validate_problem(const Vector& a, const Vector& b, const Matrix& cost)
{
    validate_weights(a, "source");
    validate_weights(b, "target");
    if (cost.rows() != a.size() || cost.cols() != b.size())
        throw DimensionError("cost matrix shape does not match the measures");
    if (!cost.allFinite())
        throw std::invalid_argument("cost matrix must be finite");
}

bool is_uniform(const Vector& w)
{
    const double u = 1.0 / static_cast<double>(w.size());
    return (w.array() - u).abs().maxCoeff() <= 1e-12;
}

ExactResult solve_by_permutations(const Vector& a, const Vector& b, const Matrix& cost)
{
    const int n = static_cast<int>(a.size());
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best_perm = perm;
    double best = std::numeric_limits<double>::infinity();
    do {
        double total = 0.0;
        for (int i = 0; i < n; ++i)
            total += cost(i, perm[static_cast<std::size_t>(i)]);
        if (total < best) {
            best = total;
            best_perm = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));

    ExactResult out;
    out.plan.a = a;
    out.plan.b = b;
    out.plan.matrix = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i)
        out.plan.matrix(i, best_perm[static_cast<std::size_t>(i)]) = 1.0 / n;
    out.cost = best / n;
    return out;
}

// Spanning-tree bases of the transportation polytope. Nodes 0..n-1 are rows,
// n..n+m-1 columns; a basis is a bitmask over the n*m cells.
struct Polytope {
    int n;
    int m;

    int cell(int i, int j) const { return i * m + j; }

    std::vector<int> cells(std::uint64_t mask) const
    {
        std::vector<int> out;
        for (int c = 0; c < n * m; ++c)
            if (mask >> c & 1U)
                out.push_back(c);
        return out;
    }

    // Basic solution by leaf elimination.
    std::vector<double> solve(const std::vector<int>& basis, const Vector& a, const Vector& b) const
    {
        const int nodes = n + m;
        std::vector<double> rest(static_cast<std::size_t>(nodes));
        for (int i = 0; i < n; ++i)
            rest[static_cast<std::size_t>(i)] = a(i);
        for (int j = 0; j < m; ++j)
            rest[static_cast<std::size_t>(n + j)] = b(j);
        std::vector<int> degree(static_cast<std::size_t>(nodes), 0);
        for (int c : basis) {
            ++degree[static_cast<std::size_t>(c / m)];
            ++degree[static_cast<std::size_t>(n + c % m)];
        }
        std::vector<double> x(basis.size(), 0.0);
        std::vector<bool> done(basis.size(), false);
        for (std::size_t step = 0; step < basis.size(); ++step) {
            bool found = false;
            for (std::size_t e = 0; e < basis.size() && !found; ++e) {
                if (done[e])
                    continue;
                const int r = basis[e] / m;
                const int c = n + basis[e] % m;
                int leaf = -1;
                int other = -1;
                if (degree[static_cast<std::size_t>(r)] == 1) {
                    leaf = r;
                    other = c;
                } else if (degree[static_cast<std::size_t>(c)] == 1) {
                    leaf = c;
                    other = r;
                }
                if (leaf < 0)
                    continue;
                x[e] = rest[static_cast<std::size_t>(leaf)];
                rest[static_cast<std::size_t>(other)] -= x[e];
                rest[static_cast<std::size_t>(leaf)] = 0.0;
                --degree[static_cast<std::size_t>(r)];
                --degree[static_cast<std::size_t>(c)];
                done[e] = true;
                found = true;
            }
            if (!found)
                throw std::logic_error("transport basis is not a spanning tree");
        }
        return x;
    }

    // Tree path from row node r to column node n + j, as positions in `basis`.
    std::vector<std::size_t> path(const std::vector<int>& basis, int r, int j) const
    {
        const int nodes = n + m;
        std::vector<std::vector<std::pair<int, std::size_t>>> adj(static_cast<std::size_t>(nodes));
        for (std::size_t e = 0; e < basis.size(); ++e) {
            const int u = basis[e] / m;
            const int v = n + basis[e] % m;
            adj[static_cast<std::size_t>(u)].push_back({v, e});
            adj[static_cast<std::size_t>(v)].push_back({u, e});
        }
        std::vector<int> parent(static_cast<std::size_t>(nodes), -2);
        std::vector<std::size_t> via(static_cast<std::size_t>(nodes), 0);
        std::deque<int> queue{r};
        parent[static_cast<std::size_t>(r)] = -1;
        while (!queue.empty()) {
            const int u = queue.front();
            queue.pop_front();
            for (auto [v, e] : adj[static_cast<std::size_t>(u)]) {
                if (parent[static_cast<std::size_t>(v)] != -2)
                    continue;
                parent[static_cast<std::size_t>(v)] = u;
                via[static_cast<std::size_t>(v)] = e;
                queue.push_back(v);
            }
        }
        std::vector<std::size_t> out;
        for (int v = n + j; v != r; v = parent[static_cast<std::size_t>(v)])
            out.push_back(via[static_cast<std::size_t>(v)]);
        std::reverse(out.begin(), out.end());
        return out;
    }
};

ExactResult solve_by_vertices(const Vector& a, const Vector& b, const Matrix& cost)
{
    const int n = static_cast<int>(a.size());
    const int m = static_cast<int>(b.size());
    const Polytope poly{n, m};

    // Orden perturbation: every feasible basis becomes non-degenerate, so
    // basis adjacency equals vertex adjacency.
    const double delta = 1e-7;
    Vector ap = a.array() + delta;
    Vector bp = b;
    bp(m - 1) += n * delta;

    std::uint64_t start = 0;
    {
        Vector ra = ap;
        Vector rb = bp;
        int i = 0;
        int j = 0;
        while (i < n && j < m) {
            start |= std::uint64_t{1} << poly.cell(i, j);
            const double x = std::min(ra(i), rb(j));
            ra(i) -= x;
            rb(j) -= x;
            if (i == n - 1)
                ++j;
            else if (j == m - 1)
                ++i;
            else if (ra(i) <= rb(j))
                ++i;
            else
                ++j;
        }
    }

    constexpr std::size_t kMaxVertices = 2'000'000;
    std::unordered_set<std::uint64_t> seen{start};
    std::deque<std::uint64_t> queue{start};
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> best_basis;
    std::vector<double> best_x;

    while (!queue.empty()) {
        const std::uint64_t mask = queue.front();
        queue.pop_front();
        const auto basis = poly.cells(mask);

        const auto x = poly.solve(basis, a, b);
        if (*std::min_element(x.begin(), x.end()) >= -1e-12) {
            double total = 0.0;
            for (std::size_t e = 0; e < basis.size(); ++e)
                total += std::max(x[e], 0.0) * cost(basis[e] / m, basis[e] % m);
            if (total < best) {
                best = total;
                best_basis = basis;
                best_x = x;
            }
        }

        const auto xp = poly.solve(basis, ap, bp);
        for (int c = 0; c < n * m; ++c) {
            if (mask >> c & 1U)
                continue;
            const auto cycle = poly.path(basis, c / m, c % m);
            std::size_t leave = cycle.front();
            for (std::size_t k = 0; k < cycle.size(); k += 2)
                if (xp[cycle[k]] < xp[leave])
                    leave = cycle[k];
            const std::uint64_t next =
                (mask | std::uint64_t{1} << c) & ~(std::uint64_t{1} << basis[leave]);
            if (seen.insert(next).second) {
                if (seen.size() > kMaxVertices)
                    throw std::length_error("transport polytope has too many vertices to enumerate");
                queue.push_back(next);
            }
        }
    }

    ExactResult out;
    out.plan.a = a;
    out.plan.b = b;
    out.plan.matrix = Matrix::Zero(n, m);
    for (std::size_t e = 0; e < best_basis.size(); ++e)
        out.plan.matrix(best_basis[e] / m, best_basis[e] % m) = std::max(best_x[e], 0.0);
    out.cost = best;
    return out;
}

} // namespace

DiscreteMeasure DiscreteMeasure::uniform(Matrix pts)
{
    DiscreteMeasure m;
    m.weights = Vector::Constant(pts.rows(), 1.0 / static_cast<double>(pts.rows()));
    m.points = std::move(pts);
    return m;
}

DiscreteMeasure DiscreteMeasure::uniform_weights(Eigen::Index n)
{
    DiscreteMeasure m;
    m.weights = Vector::Constant(n, 1.0 / static_cast<double>(n));
    return m;
}

void validate(const DiscreteMeasure& m, const char* name)
{
    validate_weights(m.weights, name);
    if (m.points.size() > 0 && m.points.rows() != m.weights.size())
        throw DimensionError(std::string(name) + ": point count does not match weight count");
}

double TransportPlan::marginal_violation() const
{
    const double rows = (matrix.rowwise().sum() - a).cwiseAbs().maxCoeff();
    const double cols = (matrix.colwise().sum().transpose() - b).cwiseAbs().maxCoeff();
    return std::max(rows, cols);
}

ExactResult exact_ot_small(const Vector& a, const Vector& b, const Matrix& cost)
{
    if (a.size() > 8 || b.size() > 8)
        throw std::length_error("exact_ot_small supports at most 8 points per side");
    validate_problem(a, b, cost);
    if (a.size() == b.size() && is_uniform(a) && is_uniform(b))
        return solve_by_permutations(a, b, cost);
    return solve_by_vertices(a, b, cost);
}

void validate(const SinkhornConfig& cfg)
{
    if (!(cfg.epsilon > 0.0))
        throw std::invalid_argument("entropic regularization must be positive");
    if (!(cfg.tol > 0.0))
        throw std::invalid_argument("Sinkhorn tolerance must be positive");
    if (cfg.max_iter < 1)
        throw std::invalid_argument("Sinkhorn needs at least one iteration");
}

double entropic_objective(const Matrix& plan, const Vector& a, const Vector& b, const Matrix& cost, double epsilon)
{
    double kl = 0.0;
    for (Eigen::Index i = 0; i < plan.rows(); ++i)
        for (Eigen::Index j = 0; j < plan.cols(); ++j) {
            const double p = plan(i, j);
            const double ref = a(i) * b(j);
            if (p > 0.0)
                kl += p * std::log(p / ref) - p + ref;
            else
                kl += ref;
        }
    return (plan.array() * cost.array()).sum() + epsilon * kl;
}

SinkhornResult sinkhorn(const Vector& a, const Vector& b, const Matrix& cost, const SinkhornConfig& cfg)
{
    validate(cfg);
    validate_problem(a, b, cost);
    const Eigen::Index n = a.size();
    const Eigen::Index m = b.size();
    const double eps = cfg.epsilon;
    const Vector la = safe_log(a);
    const Vector lb = safe_log(b);

    SinkhornResult res;
    res.f = Vector::Zero(n);
    res.g = Vector::Zero(m);
    Vector buf_m(m);
    Vector buf_n(n);

    auto build_plan = [&] {
        Matrix plan(n, m);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < m; ++j)
                plan(i, j) = std::exp(la(i) + lb(j) + (res.f(i) + res.g(j) - cost(i, j)) / eps);
        return plan;
    };

    for (int it = 1; it <= cfg.max_iter; ++it) {
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < m; ++j)
                buf_m(j) = lb(j) + (res.g(j) - cost(i, j)) / eps;
            res.f(i) = -eps * log_sum_exp(buf_m);
        }
        for (Eigen::Index j = 0; j < m; ++j) {
            for (Eigen::Index i = 0; i < n; ++i)
                buf_n(i) = la(i) + (res.f(i) - cost(i, j)) / eps;
            res.g(j) = -eps * log_sum_exp(buf_n);
        }
        res.plan = {build_plan(), a, b};
        res.violation = res.plan.marginal_violation();
        res.iterations = it;
        res.value_trace.push_back(entropic_objective(res.plan.matrix, a, b, cost, eps));
        double dual = eps * (1.0 - res.plan.matrix.sum());
        for (Eigen::Index i = 0; i < n; ++i)
            if (a(i) > 0.0)
                dual += a(i) * res.f(i);
        for (Eigen::Index j = 0; j < m; ++j)
            if (b(j) > 0.0)
                dual += b(j) * res.g(j);
        res.dual_trace.push_back(dual);
        if (!std::isfinite(res.violation))
            break;
        if (res.violation <= cfg.tol) {
            res.converged = true;
            break;
        }
    }
    res.entropic_value = res.value_trace.back();
    res.transport_cost = (res.plan.matrix.array() * cost.array()).sum();
    return res;
}

SemidualGradient semidual_gradient(const Vector& phi, const Vector& a, const Vector& b, const Matrix& cost,
                                   double epsilon)
{
    if (!(epsilon > 0.0))
        throw std::invalid_argument("entropic regularization must be positive");
    if (phi.size() != a.size() || cost.rows() != a.size() || cost.cols() != b.size())
        throw DimensionError("semi-dual operands have inconsistent sizes");
    const Eigen::Index n = a.size();
    const Eigen::Index m = b.size();
    const Vector la = safe_log(a);

    SemidualGradient out;
    out.conditional.resize(n, m);
    Vector logits(n);
    double value = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
        for (Eigen::Index i = 0; i < n; ++i)
            logits(i) = la(i) + (phi(i) - cost(i, j)) / epsilon;
        const double lse = log_sum_exp(logits);
        value += b(j) * (-epsilon * lse);
        out.conditional.col(j) = (logits.array() - lse).exp().matrix();
    }
    for (Eigen::Index i = 0; i < n; ++i)
        if (a(i) > 0.0)
            value += a(i) * phi(i);
    out.value = value;
    out.d_cost = out.conditional * b.asDiagonal();
    out.d_phi = a - out.d_cost.rowwise().sum();
    return out;
}

double semidual_value(const Vector& phi, const Vector& a, const Vector& b, const Matrix& cost, double epsilon)
{
    return semidual_gradient(phi, a, b, cost, epsilon).value;
}

SemidualMaximum maximize_semidual(const Vector& a, const Vector& b, const Matrix& cost, double epsilon, int max_iter,
                                  double tol)
{
    validate_problem(a, b, cost);
    const Eigen::Index n = a.size();
    SemidualMaximum out;
    out.phi = Vector::Zero(n);
    auto state = semidual_gradient(out.phi, a, b, cost, epsilon);
    out.value = state.value;
    out.gradient_norm = state.d_phi.cwiseAbs().maxCoeff();
    if (n == 1)
        return out;

    const Eigen::Index k = n - 1;
    for (int it = 0; it < max_iter && out.gradient_norm > tol; ++it) {
        // Negative Hessian: (1/eps) sum_j b_j (diag(pi_j) - pi_j pi_j^T)
        Matrix neg_h = Matrix::Zero(n, n);
        for (Eigen::Index j = 0; j < b.size(); ++j) {
            const Vector p = state.conditional.col(j);
            neg_h.diagonal() += b(j) * p;
            neg_h.noalias() -= b(j) * p * p.transpose();
        }
        neg_h /= epsilon;
        Matrix reduced = neg_h.bottomRightCorner(k, k);
        const double ridge = 1e-12 * std::max(1.0, reduced.diagonal().maxCoeff());
        reduced.diagonal().array() += ridge;
        const Vector g = state.d_phi.tail(k);
        const Vector step = reduced.ldlt().solve(g);

        Vector dir = Vector::Zero(n);
        dir.tail(k) = step.allFinite() ? step : g;
        double slope = g.dot(dir.tail(k));
        if (!(slope > 0.0)) {
            dir.tail(k) = g;
            slope = g.squaredNorm();
        }
        double t = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 80; ++ls, t *= 0.5) {
            const Vector trial = out.phi + t * dir;
            auto next = semidual_gradient(trial, a, b, cost, epsilon);
            if (next.value >= state.value + 1e-4 * t * slope) {
                out.phi = trial;
                state = std::move(next);
                moved = true;
                break;
            }
        }
        out.iterations = it + 1;
        out.value = state.value;
        out.gradient_norm = state.d_phi.cwiseAbs().maxCoeff();
        if (!moved)
            break;
    }
    return out;
}

Vector PotentialNet::operator()(const Matrix& x) const
{
    return forward(mlp, x).col(0);
}

GroundCost squared_euclidean()
{
    GroundCost c;
    c.matrix = [](const Matrix& p, const Matrix& q) {
        if (p.cols() != q.cols())
            throw DimensionError("cost operands differ in dimension");
        Matrix out(p.rows(), q.rows());
        for (Eigen::Index i = 0; i < p.rows(); ++i)
            for (Eigen::Index j = 0; j < q.rows(); ++j)
                out(i, j) = (p.row(i) - q.row(j)).squaredNorm();
        return out;
    };
    c.backward = [](const Matrix& p, const Matrix& q, const Matrix& dc, Matrix& dp, Matrix& dq) {
        for (Eigen::Index i = 0; i < p.rows(); ++i)
            for (Eigen::Index j = 0; j < q.rows(); ++j) {
                const RowVector diff = 2.0 * dc(i, j) * (p.row(i) - q.row(j));
                dp.row(i) += diff;
                dq.row(j) -= diff;
            }
    };
    return c;
}

PotentialEstimate dual_potential_estimate(const PotentialNet& pot, const Matrix& sample_p, const Matrix& sample_q,
                                          const GroundCost& cost, double epsilon)
{
    if (sample_p.rows() == 0 || sample_q.rows() == 0)
        throw std::invalid_argument("dual potential estimate needs nonempty batches");
    const Vector a = Vector::Constant(sample_p.rows(), 1.0 / static_cast<double>(sample_p.rows()));
    const Vector b = Vector::Constant(sample_q.rows(), 1.0 / static_cast<double>(sample_q.rows()));

    MlpTape<double> tape;
    const Matrix phi_out = forward(pot.mlp, sample_p, &tape);
    const Matrix c = cost.matrix(sample_p, sample_q);
    const auto sd = semidual_gradient(phi_out.col(0), a, b, c, epsilon);

    PotentialEstimate out;
    out.value = sd.value;
    out.d_cost = sd.d_cost;
    out.d_pot = pot.mlp.zeros_like();
    out.d_p = backward(pot.mlp, tape, Matrix(sd.d_phi), &out.d_pot);
    out.d_q = Matrix::Zero(sample_q.rows(), sample_q.cols());
    cost.backward(sample_p, sample_q, sd.d_cost, out.d_p, out.d_q);
    return out;
}

} // namespace glotdr::ot
