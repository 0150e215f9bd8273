#include "doctest.h"

#include "oracles.hpp"
#include "otda/da_train.hpp"
#include "otda/error.hpp"
#include "otda/eval_report.hpp"
#include "otda/posthoc_align.hpp"

#include <cmath>

using namespace otda;
using namespace otda::posthoc;
using otda::testing::random_matrix;

TEST_SUITE("posthoc_align") {

TEST_CASE("barycentric_map examples") {
    Rng rng(3);
    SUBCASE("identical point sets at small epsilon map to themselves") {
        const Matrix x = random_matrix(rng, 12, 5, 2.0);
        PosthocConfig c;
        c.epsilon = 0.01;
        const auto r = barycentric_map(x, x, c);
        CHECK((r.aligned - x).cwiseAbs().maxCoeff() <= 1e-3);
    }
    SUBCASE("single source point absorbs every target") {
        const Matrix s = random_matrix(rng, 1, 4);
        const Matrix t = random_matrix(rng, 7, 4, 3.0);
        const auto r = barycentric_map(s, t);
        for (Eigen::Index j = 0; j < t.rows(); ++j) CHECK(r.aligned.row(j) == s.row(0));
    }
    SUBCASE("huge epsilon collapses onto the source mean") {
        const Matrix s = random_matrix(rng, 9, 3);
        const Matrix t = random_matrix(rng, 6, 3, 2.0);
        PosthocConfig c;
        c.epsilon = 1e6;
        const auto r = barycentric_map(s, t, c);
        const Eigen::RowVectorXd mean = s.colwise().mean();
        for (Eigen::Index j = 0; j < t.rows(); ++j) CHECK((r.aligned.row(j) - mean).cwiseAbs().maxCoeff() <= 1e-3);
    }
    SUBCASE("width mismatch and bad epsilon") {
        CHECK_THROWS_AS(barycentric_map(random_matrix(rng, 3, 2), random_matrix(rng, 3, 3)), ContractViolation);
        PosthocConfig c;
        c.epsilon = 0.0;
        CHECK_THROWS_AS(barycentric_map(random_matrix(rng, 3, 2), random_matrix(rng, 3, 2), c), ConfigurationError);
    }
}

TEST_CASE("property: aligned points are convex combinations of source points") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(100 + seed);
        const Matrix s = random_matrix(rng, 10 + static_cast<int>(seed), 6);
        const Matrix t = random_matrix(rng, 8, 6, 1.5);
        PosthocConfig c;
        c.epsilon = 0.5 + 0.3 * static_cast<double>(seed);
        const auto r = barycentric_map(s, t, c);
        CHECK(r.weights.minCoeff() >= 0.0);
        CHECK((r.weights.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-9);
        CHECK((r.aligned - r.weights * s).cwiseAbs().maxCoeff() <= 1e-12);
        for (Eigen::Index k = 0; k < s.cols(); ++k) {
            CHECK(r.aligned.col(k).maxCoeff() <= s.col(k).maxCoeff() + 1e-12);
            CHECK(r.aligned.col(k).minCoeff() >= s.col(k).minCoeff() - 1e-12);
        }
    }
}

TEST_CASE("evaluate_posthoc") {
    const auto ds = data::generate(data::default_generator_config(0, 300));
    train::TrainConfig tc;
    tc.epochs = 2;
    const auto erm = train::train(ds, tc);

    SUBCASE("reports val and test, deterministically") {
        const auto a = evaluate_posthoc(ds, erm.params);
        const auto b = evaluate_posthoc(ds, erm.params);
        CHECK(posthoc_report_to_json(a) == posthoc_report_to_json(b));
        CHECK(posthoc_csv(a) == posthoc_csv(b));
        REQUIRE(a.splits.size() == 2);
        CHECK(a.split("test").pre_accuracy == doctest::Approx(erm.final_metrics.at("test").accuracy).epsilon(1e-15));
        CHECK(std::isfinite(a.split("test").post_masked_accuracy));
        CHECK(std::isnan(a.split("val").post_masked_accuracy));
        CHECK(a.source_rows == 900);
        CHECK_THROWS_AS(a.split("train"), ContractViolation);
    }
    SUBCASE("source subsample is bounded and seeded") {
        PosthocConfig c;
        c.max_source_rows = 100;
        const auto a = evaluate_posthoc(ds, erm.params, c);
        CHECK(a.source_rows == 100);
        c.seed = 1;
        const auto b = evaluate_posthoc(ds, erm.params, c);
        CHECK(posthoc_report_to_json(a) != posthoc_report_to_json(b));
    }
    SUBCASE("a constant classifier scores the class rate") {
        auto p = erm.params;
        for (auto& l : p.weights.classifier) l.weight.setZero();
        p.weights.classifier.back().bias << 0.0, 1.0;  // always class 1
        const auto r = evaluate_posthoc(ds, p);
        for (const auto& s : r.splits) {
            const auto y = ds.labels_at(ds.indices(data::split_from_string(s.split)));
            double ones = 0.0;
            for (int v : y) ones += v;
            CHECK(s.post_accuracy == doctest::Approx(ones / static_cast<double>(y.size())).epsilon(1e-15));
            CHECK(s.pre_accuracy == s.post_accuracy);
        }
    }
    SUBCASE("source features aligned onto themselves keep their accuracy") {
        const auto idx = ds.indices(data::Split::train);
        const Matrix f = nn::forward_features(erm.params, ds.rows(idx)).features;
        const auto y = ds.labels_at(idx);
        PosthocConfig c;
        c.epsilon = 0.05;
        const auto r = barycentric_map(f, f, c);
        const double pre = eval::accuracy(nn::forward_classifier(erm.params, f), y);
        const double post = eval::accuracy(nn::forward_classifier(erm.params, r.aligned), y);
        CHECK(std::abs(pre - post) <= 0.005);
    }
}

}
