#pragma once

// Test-only reference computations. Nothing here calls into the code paths
// it is used to check.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "otda/rng.hpp"

namespace otda::testing {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Central finite difference of f with respect to every entry of x.
template <typename MatrixT>
MatrixT central_differences(MatrixT x, const std::function<double(const MatrixT&)>& f, double step = 1e-5) {
    MatrixT grad(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            const double orig = x(i, j);
            x(i, j) = orig + step;
            const double up = f(x);
            x(i, j) = orig - step;
            const double down = f(x);
            x(i, j) = orig;
            grad(i, j) = (up - down) / (2.0 * step);
        }
    }
    return grad;
}

/// Elementwise relative error |a - b| / max(|a|, |b|, floor).
inline double max_relative_error(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

template <typename A, typename B>
double max_relative_error(const A& a, const B& b, double floor = 1e-6) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            worst = std::max(worst, max_relative_error(a(i, j), b(i, j), floor));
        }
    }
    return worst;
}

inline RowMatrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    RowMatrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
    }
    return m;
}

/// AUC as the fraction of concordant (positive, negative) pairs, ties half.
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    double concordant = 0.0;
    double ties = 0.0;
    double pos = 0.0;
    double neg = 0.0;
    for (int l : labels) (l == 1 ? pos : neg) += 1.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            if (scores[i] > scores[j]) concordant += 1.0;
            else if (scores[i] == scores[j]) ties += 1.0;
        }
    }
    return (concordant + 0.5 * ties) / (pos * neg);
}

}  // namespace otda::testing
