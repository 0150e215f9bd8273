#pragma once

// Discrete optimal transport between weighted point clouds: cost matrices,
// the entropic Sinkhorn solver, a brute-force permutation oracle for the
// unregularized problem, and the point gradients of the entropic value.

#include <Eigen/Dense>

#include <string>
#include <utility>
#include <vector>

namespace otda::ot {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Metric { euclidean, squared_euclidean };

std::string to_string(Metric metric);
Metric metric_from_string(const std::string& name);

/// Empirical measure: n points in R^d with a probability vector of weights.
struct DiscreteDistribution {
    Matrix points;
    Vector weights;

    static DiscreteDistribution uniform(Matrix points);

    int size() const { return static_cast<int>(points.rows()); }
    int dim() const { return static_cast<int>(points.cols()); }

    /// Throws ContractViolation unless weights are a probability vector and
    /// every coordinate is finite.
    void validate() const;
};

struct CostMatrix {
    Matrix entries;
    Metric metric = Metric::euclidean;

    int rows() const { return static_cast<int>(entries.rows()); }
    int cols() const { return static_cast<int>(entries.cols()); }
};

struct TransportPlan {
    Matrix gamma;
    Vector dual_f;
    Vector dual_g;
    double value_cost = 0.0;         // <gamma, C>
    double value_regularized = 0.0;  // <gamma, C> - epsilon * H(gamma)
    double epsilon = 0.0;            // resolved regularization actually used
    int iterations_used = 0;
    bool converged = false;
};

struct SinkhornConfig {
    /// Entropic regularization. When `epsilon_relative` is set this is a
    /// multiplier on mean(C) and the absolute value is resolved per solve.
    double epsilon = 0.05;
    bool epsilon_relative = true;
    int max_iterations = 1000;
    double marginal_tolerance = 1e-6;
    bool log_domain = true;

    static SinkhornConfig absolute(double epsilon) {
        SinkhornConfig c;
        c.epsilon = epsilon;
        c.epsilon_relative = false;
        return c;
    }

    void validate() const;
    double resolve_epsilon(const CostMatrix& cost) const;
};

CostMatrix cost_matrix(const DiscreteDistribution& source, const DiscreteDistribution& target,
                       Metric metric = Metric::euclidean);

/// Pairwise cost between raw point sets (rows are points).
CostMatrix cost_matrix(const Matrix& source_points, const Matrix& target_points,
                       Metric metric = Metric::euclidean);

/// H(G) = -sum G_ij log G_ij with 0 log 0 = 0.
double entropy(const Matrix& gamma);
inline double entropy(const TransportPlan& plan) { return entropy(plan.gamma); }

struct ExactSolution {
    TransportPlan plan;
    double value = 0.0;
    std::vector<int> assignment;  // assignment[i] = matched target index
};

/// Minimum-cost permutation by enumeration. Uniform weights, n_s == n_t <= 8.
/// For equal-size uniform marginals this is the LP optimum (Birkhoff).
ExactSolution exact_ot_bruteforce(const CostMatrix& cost, const DiscreteDistribution& source,
                                  const DiscreteDistribution& target);

TransportPlan sinkhorn(const CostMatrix& cost, const DiscreteDistribution& source,
                       const DiscreteDistribution& target, const SinkhornConfig& config = {});

/// (max |row sums - p|, max |col sums - q|)
std::pair<double, double> marginal_residual(const TransportPlan& plan, const DiscreteDistribution& source,
                                            const DiscreteDistribution& target);
std::pair<double, double> marginal_residual(const Matrix& gamma, const Vector& p, const Vector& q);

struct OtValueGrads {
    double value = 0.0;
    Matrix source_grads;
    Matrix target_grads;
    TransportPlan plan;
};

/// Entropic OT value between two uniformly weighted point sets and its
/// gradient with respect to every point.
///
/// The gradient is dvalue/dC_ij = gamma_ij at the entropic optimum, chained
/// through the metric. A cost-relative epsilon is resolved once and then held
/// fixed (no gradient flows through mean(C)). Euclidean gradients divide by
/// max(|x - y|, 1e-12) so coincident points contribute zero.
///
/// Throws SinkhornNotConverged if the solve does not reach tolerance.
OtValueGrads ot_value_and_point_grads(const Matrix& source_points, const Matrix& target_points,
                                      const SinkhornConfig& config = {}, Metric metric = Metric::euclidean);

}  // namespace otda::ot
