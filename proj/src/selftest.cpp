#include "otda/selftest.hpp"

#include "otda/da_train.hpp"
#include "otda/eval_report.hpp"
#include "otda/ot_core.hpp"
#include "otda/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>

namespace otda::selftest {

namespace {

using Matrix = ot::Matrix;
using Clock = std::chrono::steady_clock;

constexpr double kGradTolerance = 1e-4;
constexpr double kStep = 1e-5;

Matrix gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

double rel_err(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

std::string fmt_detail(const char* spec, double a, double b = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, spec, a, b);
    return buf;
}

// Runs body; any exception fails the suite with its message.
CheckResult timed(const std::string& name, const std::function<void(CheckResult&)>& body) {
    CheckResult r;
    r.name = name;
    const auto start = Clock::now();
    try {
        body(r);
    } catch (const std::exception& e) {
        r.passed = false;
        r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return r;
}

// Central differences of f over every entry of x, compared with g.
template <typename M, typename G>
double worst_fd_error(M& x, const G& g, const std::function<double()>& f) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        double& v = x.data()[i];
        const double orig = v;
        v = orig + kStep;
        const double up = f();
        v = orig - kStep;
        const double down = f();
        v = orig;
        worst = std::max(worst, rel_err(g.data()[i], (up - down) / (2 * kStep)));
    }
    return worst;
}

double worst_fd_error(nn::LayerStack& layers, const nn::LayerStack& grads, const std::function<double()>& f) {
    double worst = 0.0;
    for (std::size_t k = 0; k < layers.size(); ++k) {
        worst = std::max(worst, worst_fd_error(layers[k].weight, grads[k].weight, f));
        worst = std::max(worst, worst_fd_error(layers[k].bias, grads[k].bias, f));
    }
    return worst;
}

}  // namespace

CheckResult sinkhorn_oracle(int instances, std::uint64_t seed) {
    return timed("sinkhorn_vs_bruteforce", [&](CheckResult& r) {
        Rng rng = Rng::stream(seed, 0x51);
        double worst_gap = 0.0;
        double worst_res = 0.0;
        int failures = 0;
        for (int k = 0; k < instances; ++k) {
            const int n = 4 + static_cast<int>(rng.below(3));
            const auto src = ot::DiscreteDistribution::uniform(gaussian(rng, n, 8));
            const auto tgt = ot::DiscreteDistribution::uniform(gaussian(rng, n, 8));
            const auto cost = ot::cost_matrix(src, tgt);
            const double exact = ot::exact_ot_bruteforce(cost, src, tgt).value;
            auto cfg = ot::SinkhornConfig::absolute(1e-3);
            cfg.log_domain = true;
            cfg.max_iterations = 1000000;
            const auto plan = ot::sinkhorn(cost, src, tgt, cfg);
            const auto [row, col] = ot::marginal_residual(plan, src, tgt);
            const double gap = (plan.value_cost - exact) / exact;
            worst_gap = std::max(worst_gap, gap);
            worst_res = std::max({worst_res, row, col});
            // a plan off its marginals by `res` can undercut the optimum by at most n * res * max C
            const double slack = n * (row + col) * cost.entries.maxCoeff();
            const bool ok = plan.converged && row <= 1e-6 && col <= 1e-6 && plan.value_cost >= exact - slack &&
                            gap <= 0.01;
            failures += !ok;
            ++r.cases;
        }
        r.worst = worst_gap;
        r.passed = failures == 0;
        r.detail = fmt_detail("max relative excess %.3g, max residual %.3g", worst_gap, worst_res) +
                   (failures ? ", " + std::to_string(failures) + " failing" : "");
    });
}

CheckResult ot_gradient_check(int instances, std::uint64_t seed) {
    return timed("ot_point_gradients", [&](CheckResult& r) {
        Rng rng = Rng::stream(seed, 0x52);
        double worst = 0.0;
        for (int k = 0; k < instances; ++k) {
            const int ns = 3 + static_cast<int>(rng.below(4));
            const int nt = 3 + static_cast<int>(rng.below(4));
            Matrix xs = gaussian(rng, ns, 5);
            Matrix xt = gaussian(rng, nt, 5, 1.5);
            const auto metric = k % 2 ? ot::Metric::squared_euclidean : ot::Metric::euclidean;
            auto cfg = ot::SinkhornConfig::absolute(k % 2 ? 1.0 : 0.3);
            cfg.marginal_tolerance = 1e-13;
            cfg.max_iterations = 1000000;
            const auto g = ot::ot_value_and_point_grads(xs, xt, cfg, metric);
            auto value = [&] { return ot::ot_value_and_point_grads(xs, xt, cfg, metric).value; };
            worst = std::max(worst, worst_fd_error(xs, g.source_grads, value));
            worst = std::max(worst, worst_fd_error(xt, g.target_grads, value));
            ++r.cases;
        }
        r.worst = worst;
        r.passed = worst <= kGradTolerance;
        r.detail = fmt_detail("max relative error %.3g", worst);
    });
}

CheckResult composite_gradient_check(int instances, std::uint64_t seed) {
    return timed("composite_parameter_gradients", [&](CheckResult& r) {
        Rng rng = Rng::stream(seed, 0x53);
        double worst = 0.0;
        for (int k = 0; k < instances; ++k) {
            nn::ModelShape shape;
            shape.input_dim = 4;
            shape.featurizer_widths = {6, 5};
            auto p = nn::ModelParams::init(shape, seed * 1000 + static_cast<std::uint64_t>(k));
            for (auto& l : p.weights.featurizer) {
                for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = 0.1 * rng.normal();
            }
            const Matrix xs = gaussian(rng, 6, 4);
            const Matrix xt = gaussian(rng, 6, 4, 1.5);
            std::vector<int> ys(6);
            for (auto& y : ys) y = static_cast<int>(rng.below(2));

            train::TrainConfig c;
            c.method = train::Method::ot;
            c.alpha = 0.7;
            c.metric = k % 2 ? ot::Metric::squared_euclidean : ot::Metric::euclidean;
            c.sinkhorn = ot::SinkhornConfig::absolute(0.3);
            c.sinkhorn.marginal_tolerance = 1e-13;
            c.sinkhorn.max_iterations = 1000000;
            const auto g = train::composite_loss_gradients(p, xs, ys, xt, c);
            auto total = [&] { return train::composite_loss_gradients(p, xs, ys, xt, c).total; };
            worst = std::max(worst, worst_fd_error(p.weights.featurizer, g.grads.featurizer, total));
            worst = std::max(worst, worst_fd_error(p.weights.classifier, g.grads.classifier, total));
            ++r.cases;
        }
        r.worst = worst;
        r.passed = worst <= kGradTolerance;
        r.detail = fmt_detail("max relative error %.3g", worst);
    });
}

CheckResult metric_oracles(int cases, std::uint64_t seed) {
    return timed("auc_and_accuracy_oracles", [&](CheckResult& r) {
        Rng rng = Rng::stream(seed, 0x54);
        double worst_auc = 0.0;
        int accuracy_mismatches = 0;
        for (int k = 0; k < cases; ++k) {
            const std::size_t n = 2 + static_cast<std::size_t>(rng.below(49));
            std::vector<int> y(n);
            for (auto& v : y) v = static_cast<int>(rng.below(2));
            y[0] = 0;
            y[1] = 1;
            std::vector<double> s(n);
            for (auto& v : s) v = k % 2 ? static_cast<double>(rng.below(5)) : rng.uniform();

            double concordant = 0.0, pos = 0.0, neg = 0.0;
            for (std::size_t i = 0; i < n; ++i) (y[i] ? pos : neg) += 1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (!y[i]) continue;
                for (std::size_t j = 0; j < n; ++j) {
                    if (y[j]) continue;
                    concordant += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
                }
            }
            worst_auc = std::max(worst_auc, std::abs(eval::roc_auc(s, y).auc - concordant / (pos * neg)));

            Matrix logits = gaussian(rng, static_cast<Eigen::Index>(n), 2);
            std::size_t hits = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const auto row = static_cast<Eigen::Index>(i);
                hits += (logits(row, 1) > logits(row, 0) ? 1 : 0) == y[i];
            }
            accuracy_mismatches += eval::accuracy(logits, y) != static_cast<double>(hits) / static_cast<double>(n);
            ++r.cases;
        }
        r.worst = worst_auc;
        r.passed = worst_auc <= 1e-12 && accuracy_mismatches == 0;
        r.detail = fmt_detail("max |auc - pairwise| %.3g, accuracy mismatches %.0f", worst_auc,
                              static_cast<double>(accuracy_mismatches));
    });
}

std::vector<CheckResult> run_all() {
    return {sinkhorn_oracle(), ot_gradient_check(), composite_gradient_check(), metric_oracles()};
}

}  // namespace otda::selftest
