#include "otda/ot_core.hpp"

#include "otda/error.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

namespace otda::ot {

namespace {

constexpr double kWeightSumTolerance = 1e-9;
constexpr double kDistanceGuard = 1e-12;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool is_uniform(const Vector& w) {
    const double u = 1.0 / static_cast<double>(w.size());
    return (w.array() - u).abs().maxCoeff() <= 1e-12;
}

void check_cost_shape(const CostMatrix& cost, const DiscreteDistribution& source,
                      const DiscreteDistribution& target) {
    if (cost.rows() != source.size() || cost.cols() != target.size()) {
        throw ContractViolation("cost matrix is " + std::to_string(cost.rows()) + "x" +
                                std::to_string(cost.cols()) + " but distributions have " +
                                std::to_string(source.size()) + " and " + std::to_string(target.size()) +
                                " points");
    }
}

Vector log_weights(const Vector& w) {
    Vector out(w.size());
    for (Eigen::Index i = 0; i < w.size(); ++i) out[i] = w[i] > 0.0 ? std::log(w[i]) : kNegInf;
    return out;
}

// Plan entries exp(a_i + b_j - C_ij / eps) with potentials in units of eps.
Matrix plan_from_potentials(const Matrix& scaled_cost, const Vector& a, const Vector& b) {
    Matrix gamma(scaled_cost.rows(), scaled_cost.cols());
    for (Eigen::Index i = 0; i < scaled_cost.rows(); ++i) {
        const double* c = scaled_cost.row(i).data();
        double* out = gamma.row(i).data();
        for (Eigen::Index j = 0; j < scaled_cost.cols(); ++j) {
            const double e = a[i] + b[j] - c[j];
            out[j] = e == kNegInf ? 0.0 : std::exp(e);
        }
    }
    return gamma;
}

// Row-wise log-sum-exp of (b_j - K_ij).
void row_lse(const Matrix& scaled_cost, const Vector& b, Vector& out) {
    const Eigen::Index m = scaled_cost.cols();
    for (Eigen::Index i = 0; i < scaled_cost.rows(); ++i) {
        const double* c = scaled_cost.row(i).data();
        double mx = kNegInf;
        for (Eigen::Index j = 0; j < m; ++j) mx = std::max(mx, b[j] - c[j]);
        if (mx == kNegInf) {
            out[i] = kNegInf;
            continue;
        }
        double s = 0.0;
        for (Eigen::Index j = 0; j < m; ++j) s += std::exp(b[j] - c[j] - mx);
        out[i] = mx + std::log(s);
    }
}

// Column-wise log-sum-exp of (a_i - K_ij), traversing rows for locality.
void col_lse(const Matrix& scaled_cost, const Vector& a, Vector& out, Vector& scratch) {
    const Eigen::Index n = scaled_cost.rows();
    const Eigen::Index m = scaled_cost.cols();
    out.setConstant(kNegInf);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (a[i] == kNegInf) continue;
        const double* c = scaled_cost.row(i).data();
        for (Eigen::Index j = 0; j < m; ++j) out[j] = std::max(out[j], a[i] - c[j]);
    }
    scratch.setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (a[i] == kNegInf) continue;
        const double* c = scaled_cost.row(i).data();
        for (Eigen::Index j = 0; j < m; ++j) scratch[j] += std::exp(a[i] - c[j] - out[j]);
    }
    for (Eigen::Index j = 0; j < m; ++j) {
        if (out[j] != kNegInf) out[j] += std::log(scratch[j]);
    }
}

// max_i |sum_j exp(a_i + b_j - K_ij) - p_i| given the row log-sum-exps of b.
double row_residual(const Vector& a, const Vector& lse_rows, const Vector& p) {
    double res = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double e = a[i] + lse_rows[i];
        const double s = e == kNegInf ? 0.0 : std::exp(e);
        res = std::max(res, std::abs(s - p[i]));
    }
    return res;
}

struct Potentials {
    Vector a;  // f / eps
    Vector b;  // g / eps
    int iterations = 0;
};

// Annealing starts once max(C) / eps exceeds this ratio.
constexpr double kScalingRatio = 16.0;
constexpr double kScalingFactor = 0.5;
constexpr int kStageIterations = 10;

// Plain alternating log-domain updates on potentials (in units of eps) until
// the row residual falls below `tolerance` or `budget` iterations are spent.
// Each iteration ends on a column update, so the column marginal is exact up
// to rounding. Returns the number of iterations used.
int log_domain_iterations(const Matrix& scaled_cost, const Vector& log_p, const Vector& log_q, const Vector& p,
                          double tolerance, int budget, Potentials& pot) {
    Vector lse_rows(p.size());
    Vector lse_cols(log_q.size());
    Vector scratch(log_q.size());
    int used = 0;
    for (int it = 0; it < budget; ++it) {
        row_lse(scaled_cost, pot.b, lse_rows);
        if (it > 0 && row_residual(pot.a, lse_rows, p) <= tolerance) break;
        pot.a = log_p - lse_rows;
        col_lse(scaled_cost, pot.a, lse_cols, scratch);
        pot.b = log_q - lse_cols;
        used = it + 1;
    }
    return used;
}

// Anderson acceleration of the map b -> col(row(b)). The last few iterate and
// residual differences give a least-squares extrapolation. When the row
// residual jumps above twice its recent low the history is dropped and the
// extrapolation starts over from there; twenty iterations without a new best
// trigger a run of plain steps, whose length doubles while extrapolation keeps
// failing to pay. Plain Sinkhorn can need thousands of iterations at small
// eps; this typically needs well under a hundred. Zero-weight coordinates stay
// at -inf and are left out of the extrapolation.
constexpr int kAndersonMemory = 5;
constexpr double kAndersonRestart = 2.0;
constexpr double kAndersonRidge = 1e-10;
constexpr int kAndersonStall = 20;   // iterations without a new best before a plain stretch
constexpr int kAndersonPlain = 10;
constexpr double kAndersonPayoff = 0.1;

int anderson_iterations(const Matrix& scaled_cost, const Vector& log_p, const Vector& log_q, const Vector& p,
                        double tolerance, int budget, Potentials& pot) {
    const Eigen::Index m = log_q.size();
    Vector lse_rows(p.size());
    Vector lse_cols(m);
    Vector scratch(m);
    std::vector<Eigen::Index> live;
    for (Eigen::Index j = 0; j < m; ++j) {
        if (log_q[j] != kNegInf) live.push_back(j);
    }
    const auto k = static_cast<Eigen::Index>(live.size());
    auto gather = [&](const Vector& v) {
        Vector out(k);
        for (Eigen::Index t = 0; t < k; ++t) out[t] = v[live[t]];
        return out;
    };

    std::deque<Vector> d_res, d_map;
    Vector prev_map, prev_res;
    bool have_prev = false;
    double best = std::numeric_limits<double>::infinity();  // drives stall detection
    double ref = best;                                        // drives rejection
    int stall = 0;
    int plain_left = 0;
    int stretch = kAndersonPlain;
    double phase_start = best;
    Vector b_in = pot.b;  // where the map is evaluated next
    Vector prev_good = pot.b;
    int used = 0;
    auto drop_history = [&] {
        d_res.clear();
        d_map.clear();
        have_prev = false;
    };
    for (int it = 0; it < budget; ++it) {
        // One plain Sinkhorn sweep from b_in.
        row_lse(scaled_cost, b_in, lse_rows);
        pot.a = log_p - lse_rows;
        col_lse(scaled_cost, pot.a, lse_cols, scratch);
        pot.b = log_q - lse_cols;
        used = it + 1;
        // (a + c, b - c) is the same plan; pinning the mean of b removes that
        // neutral direction from the extrapolation.
        double shift = 0.0;
        for (auto j : live) shift += pot.b[j];
        shift /= static_cast<double>(std::max<Eigen::Index>(k, 1));
        for (auto j : live) pot.b[j] -= shift;
        pot.a.array() += shift;

        // Row residual of the consistent pair (a, b).
        row_lse(scaled_cost, pot.b, lse_rows);
        const double res = row_residual(pot.a, lse_rows, p);
        if (res <= tolerance) break;

        const Vector mapped = gather(pot.b);
        const Vector r = mapped - gather(b_in);
        if (!r.allFinite()) {
            // Overflow from a wild extrapolation: plain steps from the last
            // finite point.
            drop_history();
            b_in = prev_good;
            continue;
        }
        prev_good = pot.b;
        if (res < best) {
            best = res;
            stall = 0;
        } else {
            ++stall;
        }
        if (plain_left > 0) {
            if (--plain_left == 0) best = ref = phase_start = res;
            b_in = pot.b;
            continue;
        }
        if (stall >= kAndersonStall) {
            // Extrapolation that earned little since the last plain stretch
            // buys a longer plain stretch next time.
            stretch = best < kAndersonPayoff * phase_start ? kAndersonPlain : 2 * stretch;
            drop_history();
            plain_left = stretch;
            stall = 0;
            b_in = pot.b;
            continue;
        }
        if (!(res <= kAndersonRestart * ref)) {
            // Residual jumped: drop the history and start over from here.
            drop_history();
            ref = res;
            b_in = pot.b;
            continue;
        }
        ref = std::min(ref, res);
        if (have_prev) {
            d_res.push_back(r - prev_res);
            d_map.push_back(mapped - prev_map);
            if (static_cast<int>(d_res.size()) > kAndersonMemory) {
                d_res.pop_front();
                d_map.pop_front();
            }
        }
        prev_map = mapped;
        prev_res = r;
        have_prev = true;
        b_in = pot.b;
        if (d_res.empty()) continue;

        const auto h = static_cast<Eigen::Index>(d_res.size());
        Matrix dr(k, h), dm(k, h);
        for (Eigen::Index c = 0; c < h; ++c) {
            dr.col(c) = d_res[static_cast<std::size_t>(c)];
            dm.col(c) = d_map[static_cast<std::size_t>(c)];
        }
        Matrix normal = dr.transpose() * dr;
        normal.diagonal().array() += kAndersonRidge * std::max(normal.trace(), 1e-300);
        const Vector coef = normal.ldlt().solve(dr.transpose() * r);
        const Vector next = mapped - dm * coef;
        if (!next.allFinite()) continue;
        for (Eigen::Index t = 0; t < k; ++t) b_in[live[t]] = next[t];
    }
    return used;
}

// Log-domain Sinkhorn with epsilon scaling: when the target epsilon is small
// relative to the cost range, solve a geometric sequence of coarser problems
// first and warm-start each from the previous potentials. The final stage is
// solved to tolerance at the requested epsilon, so the fixed point is unchanged.
Potentials solve_log_domain(const Matrix& cost, double eps, const Vector& p, const Vector& q,
                            const SinkhornConfig& config) {
    const Vector log_p = log_weights(p);
    const Vector log_q = log_weights(q);
    Potentials pot{Vector::Zero(p.size()), Vector::Zero(q.size()), 0};

    std::vector<double> stages;
    const double max_cost = cost.size() > 0 ? cost.maxCoeff() : 0.0;
    for (double e = max_cost; e > eps * kScalingRatio; e *= kScalingFactor) stages.push_back(e);

    double current = stages.empty() ? eps : stages.front();
    int budget = config.max_iterations;
    for (double stage_eps : stages) {
        pot.a *= current / stage_eps;
        pot.b *= current / stage_eps;
        current = stage_eps;
        const int used = log_domain_iterations(cost / stage_eps, log_p, log_q, p, config.marginal_tolerance,
                                               std::min(kStageIterations, budget), pot);
        pot.iterations += used;
        budget -= used;
        if (budget <= 0) break;
    }
    pot.a *= current / eps;
    pot.b *= current / eps;
    // The in-loop residual and the one recomputed from the final plan differ
    // by rounding, so stop slightly inside the tolerance.
    pot.iterations += anderson_iterations(cost / eps, log_p, log_q, p, 0.5 * config.marginal_tolerance,
                                          std::max(budget, 0), pot);
    return pot;
}

Potentials solve_kernel_domain(const Matrix& scaled_cost, const Vector& p, const Vector& q,
                               const SinkhornConfig& config) {
    // std::exp per entry: Eigen's vectorized exp flushes to a denormal rather than 0.
    const Matrix kernel = scaled_cost.unaryExpr([](double c) { return std::exp(-c); });
    Vector u = Vector::Ones(p.size());
    Vector v = Vector::Ones(q.size());
    auto overflow = [](const char* where) {
        return NumericOverflow(std::string("kernel-domain sinkhorn under/overflowed in ") + where +
                               "; retry with log_domain = true");
    };
    auto usable = [](double x) { return std::isfinite(x) && x >= std::numeric_limits<double>::min(); };
    int iterations = 0;
    for (int it = 0; it < config.max_iterations; ++it) {
        const Vector kv = kernel * v;
        if (it > 0) {
            const double row_res = (u.cwiseProduct(kv) - p).cwiseAbs().maxCoeff();
            if (row_res <= 0.5 * config.marginal_tolerance) break;
        }
        for (Eigen::Index i = 0; i < p.size(); ++i) {
            if (p[i] == 0.0) {
                u[i] = 0.0;
                continue;
            }
            if (!usable(kv[i])) throw overflow("the row update");
            u[i] = p[i] / kv[i];
            if (!usable(u[i])) throw overflow("the row update");
        }
        const Vector ktu = kernel.transpose() * u;
        for (Eigen::Index j = 0; j < q.size(); ++j) {
            if (q[j] == 0.0) {
                v[j] = 0.0;
                continue;
            }
            if (!usable(ktu[j])) throw overflow("the column update");
            v[j] = q[j] / ktu[j];
            if (!usable(v[j])) throw overflow("the column update");
        }
        iterations = it + 1;
    }
    Potentials pot;
    pot.a = u.unaryExpr([](double x) { return x > 0.0 ? std::log(x) : kNegInf; });
    pot.b = v.unaryExpr([](double x) { return x > 0.0 ? std::log(x) : kNegInf; });
    pot.iterations = iterations;
    return pot;
}

}  // namespace

std::string to_string(Metric metric) {
    return metric == Metric::euclidean ? "euclidean" : "squared";
}

Metric metric_from_string(const std::string& name) {
    if (name == "euclidean") return Metric::euclidean;
    if (name == "squared" || name == "squared_euclidean") return Metric::squared_euclidean;
    throw ConfigurationError("unknown metric '" + name + "' (expected euclidean or squared)");
}

DiscreteDistribution DiscreteDistribution::uniform(Matrix points) {
    DiscreteDistribution d;
    const auto n = points.rows();
    d.points = std::move(points);
    d.weights = Vector::Constant(n, n > 0 ? 1.0 / static_cast<double>(n) : 0.0);
    return d;
}

void DiscreteDistribution::validate() const {
    if (points.rows() < 1 || points.cols() < 1) throw ContractViolation("distribution needs n >= 1 and d >= 1");
    if (weights.size() != points.rows()) throw ContractViolation("weights length does not match point count");
    if (!points.allFinite()) throw ContractViolation("distribution has a non-finite coordinate");
    if ((weights.array() < 0.0).any() || !weights.allFinite()) {
        throw ContractViolation("distribution weights must be finite and nonnegative");
    }
    if (std::abs(weights.sum() - 1.0) > kWeightSumTolerance) {
        throw ContractViolation("distribution weights must sum to 1");
    }
}

void SinkhornConfig::validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigurationError("sinkhorn epsilon must be > 0");
    if (!(marginal_tolerance > 0.0)) throw ConfigurationError("sinkhorn marginal tolerance must be > 0");
    if (max_iterations < 1) throw ConfigurationError("sinkhorn max_iterations must be >= 1");
}

double SinkhornConfig::resolve_epsilon(const CostMatrix& cost) const {
    if (!epsilon_relative) return epsilon;
    const double mean = cost.entries.size() > 0 ? cost.entries.mean() : 0.0;
    // All-zero cost: any positive epsilon gives the same (outer-product) plan.
    return mean > 0.0 ? epsilon * mean : epsilon;
}

CostMatrix cost_matrix(const Matrix& source_points, const Matrix& target_points, Metric metric) {
    if (source_points.cols() != target_points.cols()) {
        throw ContractViolation("feature dimension mismatch: " + std::to_string(source_points.cols()) + " vs " +
                                std::to_string(target_points.cols()));
    }
    // |x|^2 + |y|^2 - 2<x,y> cancels badly for near points, so evaluate directly.
    CostMatrix cost;
    cost.metric = metric;
    cost.entries.resize(source_points.rows(), target_points.rows());
    for (Eigen::Index i = 0; i < source_points.rows(); ++i) {
        for (Eigen::Index j = 0; j < target_points.rows(); ++j) {
            const double sq = (source_points.row(i) - target_points.row(j)).squaredNorm();
            cost.entries(i, j) = metric == Metric::euclidean ? std::sqrt(sq) : sq;
        }
    }
    return cost;
}

CostMatrix cost_matrix(const DiscreteDistribution& source, const DiscreteDistribution& target, Metric metric) {
    return cost_matrix(source.points, target.points, metric);
}

double entropy(const Matrix& gamma) {
    double h = 0.0;
    for (Eigen::Index i = 0; i < gamma.rows(); ++i) {
        for (Eigen::Index j = 0; j < gamma.cols(); ++j) {
            const double g = gamma(i, j);
            if (g < 0.0) throw ContractViolation("entropy of a plan with a negative entry");
            if (g > 0.0) h -= g * std::log(g);
        }
    }
    return h;
}

ExactSolution exact_ot_bruteforce(const CostMatrix& cost, const DiscreteDistribution& source,
                                  const DiscreteDistribution& target) {
    const int n = source.size();
    if (n != target.size()) throw UnsupportedInstance("brute-force OT needs equal-size marginals");
    if (n < 1 || n > 8) throw UnsupportedInstance("brute-force OT supports 1 <= n <= 8");
    if (!is_uniform(source.weights) || !is_uniform(target.weights)) {
        throw UnsupportedInstance("brute-force OT needs uniform weights");
    }
    check_cost_shape(cost, source, target);

    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best = perm;
    double best_sum = std::numeric_limits<double>::infinity();
    do {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += cost.entries(i, perm[static_cast<std::size_t>(i)]);
        if (s < best_sum) {
            best_sum = s;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));

    ExactSolution sol;
    sol.assignment = best;
    sol.value = best_sum / n;
    sol.plan.gamma = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i) sol.plan.gamma(i, best[static_cast<std::size_t>(i)]) = 1.0 / n;
    sol.plan.value_cost = sol.value;
    sol.plan.value_regularized = sol.value;
    sol.plan.converged = true;
    return sol;
}

TransportPlan sinkhorn(const CostMatrix& cost, const DiscreteDistribution& source,
                       const DiscreteDistribution& target, const SinkhornConfig& config) {
    config.validate();
    source.validate();
    target.validate();
    check_cost_shape(cost, source, target);
    if (!cost.entries.allFinite() || (cost.entries.array() < 0.0).any()) {
        throw ContractViolation("cost entries must be finite and nonnegative");
    }

    const double eps = config.resolve_epsilon(cost);
    const Matrix scaled = cost.entries / eps;
    const Potentials pot = config.log_domain
                               ? solve_log_domain(cost.entries, eps, source.weights, target.weights, config)
                               : solve_kernel_domain(scaled, source.weights, target.weights, config);

    TransportPlan plan;
    plan.gamma = plan_from_potentials(scaled, pot.a, pot.b);
    if (!plan.gamma.allFinite()) {
        throw NumericOverflow("sinkhorn plan has non-finite entries; retry with log_domain = true");
    }
    plan.dual_f = eps * pot.a;
    plan.dual_g = eps * pot.b;
    plan.epsilon = eps;
    plan.iterations_used = pot.iterations;
    plan.value_cost = plan.gamma.cwiseProduct(cost.entries).sum();
    plan.value_regularized = plan.value_cost - eps * entropy(plan.gamma);
    const auto [row_res, col_res] = marginal_residual(plan.gamma, source.weights, target.weights);
    plan.converged = row_res <= config.marginal_tolerance && col_res <= config.marginal_tolerance;
    return plan;
}

std::pair<double, double> marginal_residual(const Matrix& gamma, const Vector& p, const Vector& q) {
    if (gamma.rows() != p.size() || gamma.cols() != q.size()) {
        throw ContractViolation("plan shape does not match the marginals");
    }
    const double row = (gamma.rowwise().sum() - p).cwiseAbs().maxCoeff();
    const double col = (gamma.colwise().sum().transpose() - q).cwiseAbs().maxCoeff();
    return {row, col};
}

std::pair<double, double> marginal_residual(const TransportPlan& plan, const DiscreteDistribution& source,
                                            const DiscreteDistribution& target) {
    return marginal_residual(plan.gamma, source.weights, target.weights);
}

OtValueGrads ot_value_and_point_grads(const Matrix& source_points, const Matrix& target_points,
                                      const SinkhornConfig& config, Metric metric) {
    if (source_points.cols() != target_points.cols()) {
        throw ContractViolation("feature dimension mismatch in OT loss");
    }
    const auto source = DiscreteDistribution::uniform(source_points);
    const auto target = DiscreteDistribution::uniform(target_points);
    const CostMatrix cost = cost_matrix(source_points, target_points, metric);

    OtValueGrads out;
    out.plan = sinkhorn(cost, source, target, config);
    if (!out.plan.converged) {
        const auto [row, col] = marginal_residual(out.plan, source, target);
        throw SinkhornNotConverged(out.plan.iterations_used, row, col);
    }
    out.value = out.plan.value_regularized;

    // dC_ij/dx_i = w_ij (x_i - y_j) with w = 1/|x_i - y_j| (euclidean) or 2.
    Matrix weights = out.plan.gamma;
    if (metric == Metric::euclidean) {
        weights.array() /= cost.entries.array().max(kDistanceGuard);
    } else {
        weights *= 2.0;
    }
    const Vector row_mass = weights.rowwise().sum();
    const Vector col_mass = weights.colwise().sum().transpose();
    out.source_grads = row_mass.asDiagonal() * source_points - weights * target_points;
    out.target_grads = col_mass.asDiagonal() * target_points - weights.transpose() * source_points;
    return out;
}

}  // namespace otda::ot
