#include "doctest.h"

#include "oracles.hpp"
#include "otda/error.hpp"
#include "otda/nn_core.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>

using namespace otda;
using namespace otda::nn;
using otda::testing::central_differences;
using otda::testing::max_relative_error;
using otda::testing::random_matrix;

namespace {

ModelShape small_shape(int hidden = 6, int features = 5) {
    ModelShape s;
    s.input_dim = 4;
    s.featurizer_widths = {hidden, features};
    s.num_classes = 3;
    return s;
}

std::vector<int> random_labels(Rng& rng, int n, int k) {
    std::vector<int> y(static_cast<std::size_t>(n));
    for (auto& v : y) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
    return y;
}

// Scalar loss CE(logits) + 0.5 |features - anchor|^2, evaluated from scratch.
double composite_loss(const ModelParams& p, const Matrix& x, const std::vector<int>& y, const Matrix& anchor) {
    const auto t = forward(p, x);
    return cross_entropy(t.logits, y).loss + 0.5 * (t.features - anchor).squaredNorm();
}

// Visit every scalar parameter of a layer stack with a mutable reference.
void for_each_param(LayerStack& layers, const std::function<void(double&, std::size_t, bool, Eigen::Index)>& fn) {
    for (std::size_t k = 0; k < layers.size(); ++k) {
        for (Eigen::Index i = 0; i < layers[k].weight.size(); ++i) fn(layers[k].weight.data()[i], k, true, i);
        for (Eigen::Index i = 0; i < layers[k].bias.size(); ++i) fn(layers[k].bias.data()[i], k, false, i);
    }
}

double grad_entry(const LayerStack& g, std::size_t k, bool is_weight, Eigen::Index i) {
    return is_weight ? g[k].weight.data()[i] : g[k].bias.data()[i];
}

}  // namespace

TEST_SUITE("nn_core") {

TEST_CASE("forward_features examples") {
    SUBCASE("zero weights give zero features") {
        auto p = ModelParams::init(small_shape(), 1);
        for (auto& l : p.weights.featurizer) {
            l.weight.setZero();
            l.bias.setZero();
        }
        Rng rng(2);
        const auto out = forward_features(p, random_matrix(rng, 7, 4));
        CHECK(out.features.cwiseAbs().maxCoeff() == 0.0);
        CHECK(out.trace.blocks[0].floored[0] == 1);
    }
    SUBCASE("duplicate and permuted rows") {
        auto p = ModelParams::init(small_shape(), 3);
        Rng rng(4);
        Matrix x = random_matrix(rng, 5, 4);
        const Matrix f = forward_features(p, x).features;
        Matrix dup(6, 4);
        dup << x, x.row(2);
        const Matrix fd = forward_features(p, dup).features;
        CHECK(fd.row(5) == fd.row(2));
        CHECK(fd.topRows(5) == f);

        const auto perm = rng.permutation(5);
        Matrix xp(5, 4);
        for (int i = 0; i < 5; ++i) xp.row(i) = x.row(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]));
        const Matrix fp = forward_features(p, xp).features;
        for (int i = 0; i < 5; ++i) CHECK(fp.row(i) == f.row(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)])));
    }
    SUBCASE("input width mismatch") {
        auto p = ModelParams::init(small_shape(), 3);
        CHECK_THROWS_AS(forward_features(p, Matrix::Zero(2, 5)), ContractViolation);
    }
}

TEST_CASE("forward_classifier examples") {
    ModelShape s = small_shape(6, 3);
    auto p = ModelParams::init(s, 5);
    p.weights.classifier[0].weight = Matrix::Identity(3, 3);
    p.weights.classifier[0].bias.setZero();
    Rng rng(6);
    const Matrix feats = random_matrix(rng, 4, 3);
    CHECK(forward_classifier(p, feats) == feats);

    auto q = ModelParams::init(small_shape(), 7);
    const Matrix batch = random_matrix(rng, 6, 5);
    const Matrix all = forward_classifier(q, batch);
    const Matrix one = forward_classifier(q, Matrix(batch.row(3)));
    CHECK(one.row(0) == all.row(3));

    CHECK_THROWS_AS(forward_classifier(q, Matrix::Zero(2, 4)), ContractViolation);
}

TEST_CASE("cross_entropy examples") {
    const std::vector<int> y2{0, 1};
    CHECK(cross_entropy(Matrix::Zero(2, 2), y2).loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));

    Matrix confident(1, 2);
    confident << 50.0, 0.0;
    const std::vector<int> y0{0};
    CHECK(cross_entropy(confident, y0).loss <= 1e-20);

    Rng rng(8);
    const Matrix logits = random_matrix(rng, 3, 4);
    const std::vector<int> y{2, 0, 3};
    const auto got = cross_entropy(logits, y);
    const Matrix fd =
        central_differences<Matrix>(logits, [&](const Matrix& l) { return cross_entropy(l, y).loss; });
    CHECK(max_relative_error(got.grads, fd) <= 1e-5);

    Matrix shifted = logits.array() + 123.0;
    CHECK(cross_entropy(shifted, y).loss == doctest::Approx(got.loss).epsilon(1e-12));

    const std::vector<int> bad{0, 4, 1};
    CHECK_THROWS_AS(cross_entropy(logits, bad), ContractViolation);
}

TEST_CASE("binary cross entropy") {
    const std::vector<int> t{0, 1, 1};
    CHECK(binary_cross_entropy(Matrix::Zero(3, 1), t).loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    Rng rng(9);
    const Matrix z = random_matrix(rng, 3, 1, 3.0);
    const auto got = binary_cross_entropy(z, t);
    const Matrix fd =
        central_differences<Matrix>(z, [&](const Matrix& l) { return binary_cross_entropy(l, t).loss; });
    CHECK(max_relative_error(got.grads, fd) <= 1e-6);
}

TEST_CASE("backward examples") {
    auto p = ModelParams::init(small_shape(), 10);
    Rng rng(11);
    const Matrix x = random_matrix(rng, 8, 4);
    const auto t = forward(p, x);

    SUBCASE("zero upstream gives zero gradients") {
        const auto g = backward(p, t, Matrix::Zero(8, 5), Matrix::Zero(8, 3));
        for (const auto& l : g.featurizer) CHECK(l.weight.cwiseAbs().maxCoeff() == 0.0);
        for (const auto& l : g.classifier) CHECK(l.weight.cwiseAbs().maxCoeff() == 0.0);
        const auto g2 = backward(p, t, Matrix(), Matrix());
        CHECK(g2.featurizer[0].weight.cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("stale trace is rejected") {
        auto other = ModelParams::init(small_shape(7, 5), 10);
        CHECK_THROWS_AS(backward(other, t, Matrix::Zero(8, 5), Matrix()), ContractViolation);
        CHECK_THROWS_AS(backward(p, t, Matrix::Zero(7, 5), Matrix()), ContractViolation);
    }

    SUBCASE("dead hidden unit in a normalization-free head gets no incoming gradient") {
        ModelShape s = small_shape();
        s.classifier_hidden = {4};
        auto q = ModelParams::init(s, 12);
        q.weights.classifier[0].weight.row(1).setZero();
        q.weights.classifier[0].bias[1] = -1.0;
        const auto tq = forward(q, x);
        const auto ce = cross_entropy(tq.logits, random_labels(rng, 8, 3));
        const auto g = backward(q, tq, Matrix(), ce.grads);
        CHECK(g.classifier[0].weight.row(1).cwiseAbs().maxCoeff() == 0.0);
        CHECK(g.classifier[0].bias[1] == 0.0);
    }
}

TEST_CASE("property: backward matches finite differences of a composite loss") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(500 + seed);
        ModelShape s = small_shape();
        s.classifier_hidden = seed % 2 ? std::vector<int>{4} : std::vector<int>{};
        auto p = ModelParams::init(s, seed);
        for (auto& l : p.weights.featurizer) l.bias = Eigen::VectorXd::Random(l.out()) * 0.1;
        const Matrix x = random_matrix(rng, 8, 4);
        const auto y = random_labels(rng, 8, 3);
        const Matrix anchor = random_matrix(rng, 8, 5, 0.5);

        const auto t = forward(p, x);
        const auto ce = cross_entropy(t.logits, y);
        const Gradients g = backward(p, t, Matrix(t.features - anchor), ce.grads);

        double worst = 0.0;
        const double h = 1e-5;
        for (auto* group : {&p.weights.featurizer, &p.weights.classifier}) {
            const LayerStack& gg = group == &p.weights.featurizer ? g.featurizer : g.classifier;
            for_each_param(*group, [&](double& v, std::size_t k, bool w, Eigen::Index i) {
                const double orig = v;
                v = orig + h;
                const double up = composite_loss(p, x, y, anchor);
                v = orig - h;
                const double down = composite_loss(p, x, y, anchor);
                v = orig;
                worst = std::max(worst, max_relative_error(grad_entry(gg, k, w, i), (up - down) / (2 * h), 1e-6));
            });
        }
        CHECK(worst <= 1e-4);
    }
}

TEST_CASE("property: per-sample normalization statistics") {
    Rng rng(21);
    auto p = ModelParams::init(ModelShape{}, 21);
    const Matrix x = random_matrix(rng, 64, 8);
    const auto out = forward_features(p, x);
    for (const auto& b : out.trace.blocks) {
        for (Eigen::Index i = 0; i < b.normalized.rows(); ++i) {
            if (b.floored[static_cast<std::size_t>(i)]) continue;
            const double mean = b.normalized.row(i).mean();
            const double var = (b.normalized.row(i).array() - mean).square().mean();
            CHECK(std::abs(mean) <= 1e-7);
            CHECK(std::abs(var - 1.0) <= 1e-4);
        }
    }
}

TEST_CASE("property: initial logit scale on unit-variance inputs") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        auto p = ModelParams::init(ModelShape{}, seed);
        const Matrix logits = forward(p, random_matrix(rng, 256, 8)).logits;
        const double mean = logits.mean();
        const double sd = std::sqrt((logits.array() - mean).square().mean());
        CHECK(sd >= 0.1);
        CHECK(sd <= 10.0);
    }
}

TEST_CASE("sgd_step examples") {
    auto base = ModelParams::init(small_shape(), 30);
    Rng rng(31);
    Gradients g = ParamSet::zeros_like(base.weights);
    for (auto& l : g.featurizer) l.weight = random_matrix(rng, l.out(), l.in());
    for (auto& l : g.classifier) l.bias = Eigen::VectorXd::Constant(l.out(), 0.3);

    SUBCASE("plain gradient descent") {
        auto p = base;
        sgd_step(p, g, {0.1, 0.0, 0.0});
        CHECK((p.weights.featurizer[1].weight - (base.weights.featurizer[1].weight - 0.1 * g.featurizer[1].weight))
                  .cwiseAbs()
                  .maxCoeff() <= 1e-15);
        CHECK((p.weights.classifier[0].bias.array() - (-0.03)).abs().maxCoeff() <= 1e-15);
    }
    SUBCASE("pure weight decay shrinks weights, not biases") {
        auto p = base;
        p.weights.featurizer[0].bias.setConstant(2.0);
        const auto before = p;
        sgd_step(p, ParamSet::zeros_like(base.weights), {0.1, 0.0, 0.5});
        CHECK((p.weights.featurizer[0].weight - before.weights.featurizer[0].weight * (1 - 0.1 * 0.5))
                  .cwiseAbs()
                  .maxCoeff() <= 1e-15);
        CHECK(p.weights.featurizer[0].bias == before.weights.featurizer[0].bias);
    }
    SUBCASE("two momentum steps displace by 2.9 g") {
        auto p = base;
        sgd_step(p, g, {1.0, 0.9, 0.0});
        sgd_step(p, g, {1.0, 0.9, 0.0});
        CHECK((p.weights.featurizer[0].weight - (base.weights.featurizer[0].weight - 2.9 * g.featurizer[0].weight))
                  .cwiseAbs()
                  .maxCoeff() <= 1e-12);
    }
    SUBCASE("shape mismatch") {
        auto p = base;
        Gradients wrong = ParamSet::zeros_like(ModelParams::init(small_shape(7, 5), 1).weights);
        CHECK_THROWS_AS(sgd_step(p, wrong, {}), ContractViolation);
    }
}

TEST_CASE("property: identical seeds give bit-identical trajectories") {
    auto run = [](std::uint64_t seed) {
        auto p = ModelParams::init(ModelShape{}, seed);
        Rng rng(seed);
        for (int step = 0; step < 5; ++step) {
            const Matrix x = random_matrix(rng, 16, 8);
            const auto y = random_labels(rng, 16, 2);
            const auto t = forward(p, x);
            const auto ce = cross_entropy(t.logits, y);
            sgd_step(p, backward(p, t, Matrix(), ce.grads), {});
        }
        return p;
    };
    const auto a = run(77);
    const auto b = run(77);
    for (std::size_t k = 0; k < a.weights.featurizer.size(); ++k) {
        CHECK(a.weights.featurizer[k].weight == b.weights.featurizer[k].weight);
    }
    CHECK(a.weights.classifier[0].weight == b.weights.classifier[0].weight);
}

TEST_CASE("domain head initialization does not perturb the rest of the model") {
    ModelShape plain;
    ModelShape adversarial;
    adversarial.domain_hidden = 32;
    const auto a = ModelParams::init(plain, 5);
    const auto b = ModelParams::init(adversarial, 5);
    CHECK(b.has_domain_head());
    CHECK(a.weights.featurizer[2].weight == b.weights.featurizer[2].weight);
    CHECK(a.weights.classifier[0].weight == b.weights.classifier[0].weight);
}

TEST_CASE("checkpoint round trip") {
    ModelShape s;
    s.domain_hidden = 8;
    const auto p = ModelParams::init(s, 42);
    const auto path = std::filesystem::temp_directory_path() / "otda_ckpt_test.json";
    save_checkpoint(p, path);
    const auto q = load_checkpoint(path);
    CHECK(q.weights.featurizer[1].weight == p.weights.featurizer[1].weight);
    CHECK(q.weights.domain_head[1].bias == p.weights.domain_head[1].bias);

    {
        std::ofstream bad(path);
        bad << R"({"format": "something-else", "version": 1})";
    }
    CHECK_THROWS_AS(load_checkpoint(path), ConfigurationError);
    std::filesystem::remove(path);
}

}  // TEST_SUITE
