#include "doctest.h"

#include "oracles.hpp"
#include "otda/error.hpp"
#include "otda/eval_report.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace otda;
using namespace otda::eval;
using otda::testing::pairwise_auc;
using otda::testing::random_matrix;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<int> random_labels(Rng& rng, std::size_t n) {
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng.below(2));
    return y;
}

double pairwise_distance_gap(const Matrix& a, const Matrix& b) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = i + 1; j < a.rows(); ++j)
            worst = std::max(worst, std::abs((a.row(i) - a.row(j)).norm() - (b.row(i) - b.row(j)).norm()));
    return worst;
}

}  // namespace

TEST_SUITE("eval_report") {

TEST_CASE("accuracy examples") {
    Matrix logits(4, 2);
    logits << 2, 1, 0, 3, 5, -1, 1, 1;
    const std::vector<int> y{0, 1, 0, 0};
    CHECK(accuracy(logits, y) == 1.0);  // the tie goes to class 0
    const std::vector<int> flipped{1, 0, 1, 1};
    CHECK(accuracy(logits, flipped) == 0.0);
    CHECK(predict(logits) == std::vector<int>{0, 1, 0, 0});
    CHECK_THROWS_AS(accuracy(Matrix(0, 2), std::vector<int>{}), ContractViolation);
    CHECK_THROWS_AS(accuracy(logits, std::vector<int>{0, 1}), ContractViolation);
}

TEST_CASE("property: accuracy matches a direct count") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        const Matrix logits = random_matrix(rng, 100, 2);
        const auto y = random_labels(rng, 100);
        int hits = 0;
        for (Eigen::Index i = 0; i < 100; ++i) {
            const int pred = logits(i, 1) > logits(i, 0) ? 1 : 0;
            hits += pred == y[static_cast<std::size_t>(i)];
        }
        CHECK(accuracy(logits, y) == static_cast<double>(hits) / 100.0);
        std::vector<int> comp(y);
        for (auto& v : comp) v = 1 - v;
        CHECK(accuracy(logits, comp) == doctest::Approx(1.0 - accuracy(logits, y)).epsilon(1e-15));
    }
}

TEST_CASE("roc_auc examples") {
    SUBCASE("separated") {
        const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
        CHECK(roc_auc(s, std::vector<int>{0, 0, 1, 1}).auc == 1.0);
        CHECK(roc_auc(s, std::vector<int>{1, 1, 0, 0}).auc == 0.0);
    }
    SUBCASE("all scores equal") {
        const std::vector<double> s(6, 0.4);
        const auto r = roc_auc(s, std::vector<int>{0, 1, 0, 1, 1, 0});
        CHECK(r.auc == 0.5);
        CHECK(r.fpr.size() == 2);
    }
    SUBCASE("single class") {
        const std::vector<double> s{0.1, 0.2};
        CHECK_THROWS_AS(roc_auc(s, std::vector<int>{1, 1}), UndefinedMetric);
    }
}

TEST_CASE("property: AUC equals the pairwise oracle and the curve is well formed") {
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        Rng rng(1000 + seed);
        const std::size_t n = 2 + static_cast<std::size_t>(rng.below(49));
        auto y = random_labels(rng, n);
        y[0] = 0;
        y[1] = 1;
        std::vector<double> s(n);
        // coarse scores on odd seeds so ties are common
        for (auto& v : s) v = seed % 2 ? static_cast<double>(rng.below(4)) / 4.0 : rng.uniform();
        const auto r = roc_auc(s, y);
        CHECK(std::abs(r.auc - pairwise_auc(s, y)) <= 1e-12);

        REQUIRE(r.fpr.size() == r.tpr.size());
        REQUIRE(r.fpr.size() == r.thresholds.size());
        CHECK(r.fpr.front() == 0.0);
        CHECK(r.tpr.front() == 0.0);
        CHECK(r.fpr.back() == 1.0);
        CHECK(r.tpr.back() == 1.0);
        double trap = 0.0;
        for (std::size_t k = 1; k < r.fpr.size(); ++k) {
            CHECK(r.fpr[k] >= r.fpr[k - 1]);
            CHECK(r.tpr[k] >= r.tpr[k - 1]);
            CHECK(r.thresholds[k] < r.thresholds[k - 1]);
            trap += (r.fpr[k] - r.fpr[k - 1]) * 0.5 * (r.tpr[k] + r.tpr[k - 1]);
        }
        CHECK(std::abs(trap - r.auc) <= 1e-9);
    }
}

TEST_CASE("positive_scores") {
    Matrix logits(2, 2);
    logits << 0, 0, 0, std::log(3.0);
    const auto p = positive_scores(logits);
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] == doctest::Approx(0.75));
    CHECK_THROWS_AS(positive_scores(Matrix(2, 3)), ContractViolation);
}

TEST_CASE("subcluster breakdown") {
    Rng rng(8);
    const std::size_t n = 400;
    std::vector<int> pred(n), y(n), dom(n), sub(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<int>(rng.below(2));
        pred[i] = static_cast<int>(rng.below(2));
        dom[i] = 4 + static_cast<int>(rng.below(2));
        sub[i] = static_cast<int>(rng.below(6));
    }
    const std::vector<int> masked{5};
    const auto cells = subcluster_breakdown(pred, y, dom, sub, masked);

    SUBCASE("cells partition the input") {
        std::size_t count = 0, correct = 0;
        double weighted = 0.0;
        for (const auto& c : cells) {
            count += c.count;
            correct += c.correct;
            weighted += c.accuracy() * static_cast<double>(c.count);
            CHECK(c.masked == (c.subcluster == 5));
        }
        CHECK(count == n);
        CHECK(std::abs(weighted / static_cast<double>(n) - accuracy(pred, y)) <= 1e-12);
        for (std::size_t k = 1; k < cells.size(); ++k) {
            const bool ordered = cells[k - 1].domain < cells[k].domain ||
                                 (cells[k - 1].domain == cells[k].domain && cells[k - 1].subcluster < cells[k].subcluster);
            CHECK(ordered);
        }
    }
    SUBCASE("uniform predictions score each cell's class rate") {
        const std::vector<int> ones(n, 1);
        for (const auto& c : subcluster_breakdown(ones, y, dom, sub, masked)) {
            std::size_t pos = 0;
            for (std::size_t i = 0; i < n; ++i) pos += dom[i] == c.domain && sub[i] == c.subcluster && y[i] == 1;
            CHECK(c.correct == pos);
        }
    }
    SUBCASE("masked accuracy pools the masked cells") {
        std::size_t cnt = 0, hit = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (sub[i] != 5) continue;
            ++cnt;
            hit += pred[i] == y[i];
        }
        CHECK(masked_accuracy(cells) == doctest::Approx(static_cast<double>(hit) / static_cast<double>(cnt)));
        CHECK(std::isnan(masked_accuracy(subcluster_breakdown(pred, y, dom, sub, std::vector<int>{}))));
    }
    SUBCASE("missing tags") {
        CHECK_THROWS_AS(subcluster_breakdown(pred, y, dom, std::vector<int>{}, masked), FeatureUnavailable);
    }
}

TEST_CASE("pca_project examples") {
    Rng rng(31);
    SUBCASE("a plane embedded in higher dimension keeps its distances") {
        const Matrix plane = random_matrix(rng, 30, 2, 3.0);
        Eigen::MatrixXd basis = Eigen::MatrixXd(random_matrix(rng, 7, 7)).householderQr().householderQ();
        const Matrix embedded = plane * basis.leftCols(2).transpose();
        const auto p = pca_project(embedded);
        CHECK(pairwise_distance_gap(p.coords, plane) <= 1e-6);
    }
    SUBCASE("duplicated rows project identically") {
        const Matrix x = random_matrix(rng, 10, 5);
        Matrix doubled(20, 5);
        doubled << x, x;
        const auto p = pca_project(doubled);
        CHECK((p.coords.topRows(10) - p.coords.bottomRows(10)).cwiseAbs().maxCoeff() <= 1e-12);
    }
    SUBCASE("captured variance matches a full eigendecomposition") {
        const Matrix x = random_matrix(rng, 50, 6) * Eigen::VectorXd::LinSpaced(6, 0.5, 3.0).asDiagonal();
        const auto p = pca_project(x);
        const Matrix c = x.rowwise() - x.colwise().mean();
        const Eigen::MatrixXd cov = c.transpose() * c / 49.0;
        Eigen::EigenSolver<Eigen::MatrixXd> oracle(cov);
        std::vector<double> ev;
        for (int k = 0; k < 6; ++k) ev.push_back(oracle.eigenvalues()[k].real());
        std::sort(ev.rbegin(), ev.rend());
        CHECK(std::abs(p.explained[0] - ev[0]) <= 1e-9);
        CHECK(std::abs(p.explained[1] - ev[1]) <= 1e-9);
        CHECK(std::abs(p.total_variance - cov.trace()) <= 1e-9);
        // coordinate variance equals the eigenvalue
        const double v0 = p.coords.col(0).squaredNorm() / 49.0;
        CHECK(std::abs(v0 - ev[0]) <= 1e-9);
    }
    SUBCASE("sign convention") {
        const auto p = pca_project(random_matrix(rng, 20, 4));
        for (int k = 0; k < 2; ++k) {
            Eigen::Index arg;
            p.components.row(k).cwiseAbs().maxCoeff(&arg);
            CHECK(p.components(k, arg) > 0.0);
            CHECK(p.components.row(k).norm() == doctest::Approx(1.0));
        }
    }
    SUBCASE("degenerate input") {
        CHECK_THROWS_AS(pca_project(Matrix::Ones(5, 3)), DegenerateProjection);
        CHECK_THROWS_AS(pca_project(Matrix::Ones(1, 3)), ContractViolation);
    }
}

TEST_CASE("property: PCA is translation invariant and rotation equivariant") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(60 + seed);
        const Matrix x = random_matrix(rng, 25, 5) * Eigen::VectorXd::LinSpaced(5, 3.0, 0.5).asDiagonal();
        const auto base = pca_project(x);
        const Matrix shifted = x.rowwise() + random_matrix(rng, 1, 5, 10.0).row(0);
        CHECK(pairwise_distance_gap(pca_project(shifted).coords, base.coords) <= 1e-9);
        const Eigen::MatrixXd q = Eigen::MatrixXd(random_matrix(rng, 5, 5)).householderQr().householderQ();
        const Matrix rotated = x * q;
        CHECK(pairwise_distance_gap(pca_project(rotated).coords, base.coords) <= 1e-9);
    }
}

TEST_CASE("mean, std and cell formatting") {
    const std::vector<double> v{0.886, 0.891, 0.896};
    const auto [m, s] = mean_and_std(v);
    CHECK(m == doctest::Approx(0.891));
    CHECK(s == doctest::Approx(0.005));
    CHECK(mean_std_cell(m, s) == "0.891 (0.005)");
    CHECK(mean_and_std(std::vector<double>{0.7}).second == 0.0);
    CHECK_THROWS_AS(mean_and_std(std::vector<double>{}), ContractViolation);
}

TEST_CASE("tables and emitted files") {
    const auto ds = data::generate(data::default_generator_config(0, 200));
    const std::vector<double> alphas{1e-5, 0.1};
    train::TrainConfig base;
    base.method = train::Method::ot;
    base.epochs = 1;
    const auto sweep = train::alpha_sweep(ds, base, alphas, {0, 1}, 1);

    SUBCASE("alpha grid columns follow the grid") {
        const auto csv = alpha_grid_csv(sweep);
        CHECK(csv.rfind("metric,1e-05,0.1\n", 0) == 0);
        CHECK(csv.find("\nval_accuracy,\"") != std::string::npos);
        CHECK(csv.find("\ntest_accuracy,\"") != std::string::npos);
    }
    SUBCASE("one group gives a one-row method table") {
        const auto csv = method_table_csv({{"ot", {sweep.run(1, 0), sweep.run(1, 1)}}});
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
        CHECK(csv.find("\not,0.1,2,\"") != std::string::npos);
    }
    SUBCASE("subcluster table rows cover the test split") {
        const auto csv = subcluster_table_csv({sweep.run(0, 0)}, ds);
        std::istringstream in(csv);
        std::string line;
        std::getline(in, line);
        std::size_t total = 0;
        while (std::getline(in, line)) {
            std::vector<std::string> f;
            std::stringstream ls(line);
            for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
            total += std::stoul(f[4]);
        }
        CHECK(total == ds.indices(data::Split::test).size());
    }
    SUBCASE("re-emission is byte-identical") {
        const auto dir = std::filesystem::temp_directory_path() / "otda_test_emit";
        std::filesystem::remove_all(dir);
        std::vector<train::RunReport> runs{sweep.run(0, 0), sweep.run(1, 0)};
        emit_convergence_plots(sweep, dir / "a");
        emit_roc_plot(runs, ds, dir / "a");
        emit_embeddings(runs, ds, dir / "a");
        emit_convergence_plots(sweep, dir / "b");
        emit_roc_plot(runs, ds, dir / "b");
        emit_embeddings(runs, ds, dir / "b");
        int files = 0;
        for (const auto& e : std::filesystem::directory_iterator(dir / "a")) {
            CHECK(slurp(e.path()) == slurp(dir / "b" / e.path().filename()));
            ++files;
        }
        CHECK(files == 6);
        CHECK(slurp(dir / "a" / "roc_test.svg").rfind("<svg", 0) == 0);
    }
}

}
