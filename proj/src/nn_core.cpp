#include "otda/nn_core.hpp"

#include "otda/error.hpp"
#include "otda/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace otda::nn {

namespace {

using nlohmann::json;

DenseLayer make_layer(int in, int out, Rng& rng) {
    DenseLayer layer;
    layer.weight.resize(out, in);
    const double bound = std::sqrt(3.0 / in);
    for (int r = 0; r < out; ++r) {
        for (int c = 0; c < in; ++c) layer.weight(r, c) = rng.uniform(-bound, bound);
    }
    layer.bias = Vector::Zero(out);
    return layer;
}

LayerStack zeros_like(const LayerStack& layers) {
    LayerStack out;
    out.reserve(layers.size());
    for (const auto& l : layers) out.push_back({Matrix::Zero(l.out(), l.in()), Vector::Zero(l.out())});
    return out;
}

bool same_shape(const LayerStack& a, const LayerStack& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].in() != b[i].in() || a[i].out() != b[i].out() || a[i].bias.size() != b[i].bias.size()) return false;
    }
    return true;
}

void check_composes(const LayerStack& layers, const char* name) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].bias.size() != layers[i].out()) {
            throw ContractViolation(std::string(name) + " layer " + std::to_string(i) + " bias width mismatch");
        }
        if (i > 0 && layers[i].in() != layers[i - 1].out()) {
            throw ContractViolation(std::string(name) + " layers " + std::to_string(i - 1) + " and " +
                                    std::to_string(i) + " do not compose");
        }
    }
}

Matrix dense(const DenseLayer& layer, const Matrix& x) {
    Matrix z = x * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    return z;
}

void dense_backward(const DenseLayer& layer, const Matrix& x, const Matrix& dz, DenseLayer& grad, Matrix* dx) {
    grad.weight = dz.transpose() * x;
    grad.bias = dz.colwise().sum().transpose();
    if (dx) *dx = dz * layer.weight;
}

// Per-row standardization across hidden units with a variance floor.
void normalize_rows(const Matrix& z, NormBlockTrace& t) {
    const Eigen::Index n = z.rows();
    const double width = static_cast<double>(z.cols());
    t.normalized.resize(z.rows(), z.cols());
    t.inv_std.resize(n);
    t.floored.assign(static_cast<std::size_t>(n), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mean = z.row(i).sum() / width;
        const double var = (z.row(i).array() - mean).square().sum() / width;
        const bool floored = var < kVarianceFloor;
        const double inv = 1.0 / std::sqrt(floored ? kVarianceFloor : var);
        t.normalized.row(i) = (z.row(i).array() - mean) * inv;
        t.inv_std[i] = inv;
        t.floored[static_cast<std::size_t>(i)] = floored ? 1 : 0;
    }
}

Matrix normalize_backward(const NormBlockTrace& t, const Matrix& dy) {
    const double width = static_cast<double>(dy.cols());
    Matrix dz(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const double mean_dy = dy.row(i).sum() / width;
        if (t.floored[static_cast<std::size_t>(i)]) {
            dz.row(i) = (dy.row(i).array() - mean_dy) * t.inv_std[i];
        } else {
            const double mean_dy_y = dy.row(i).dot(t.normalized.row(i)) / width;
            dz.row(i) = (dy.row(i).array() - mean_dy - t.normalized.row(i).array() * mean_dy_y) * t.inv_std[i];
        }
    }
    return dz;
}

json layers_to_json(const LayerStack& layers) {
    json arr = json::array();
    for (const auto& l : layers) {
        std::vector<double> w(l.weight.data(), l.weight.data() + l.weight.size());
        std::vector<double> b(l.bias.data(), l.bias.data() + l.bias.size());
        arr.push_back({{"in", l.in()}, {"out", l.out()}, {"weight", w}, {"bias", b}});
    }
    return arr;
}

LayerStack layers_from_json(const json& arr, const std::string& group) {
    LayerStack out;
    for (const auto& j : arr) {
        const int in = j.at("in").get<int>();
        const int outw = j.at("out").get<int>();
        const auto w = j.at("weight").get<std::vector<double>>();
        const auto b = j.at("bias").get<std::vector<double>>();
        if (in < 1 || outw < 1 || w.size() != static_cast<std::size_t>(in) * static_cast<std::size_t>(outw) ||
            b.size() != static_cast<std::size_t>(outw)) {
            throw ConfigurationError("checkpoint group '" + group + "' has an inconsistent layer");
        }
        DenseLayer l;
        l.weight = Eigen::Map<const Matrix>(w.data(), outw, in);
        l.bias = Eigen::Map<const Vector>(b.data(), outw);
        out.push_back(std::move(l));
    }
    return out;
}

}  // namespace

ParamSet ParamSet::zeros_like(const ParamSet& other) {
    return {nn::zeros_like(other.featurizer), nn::zeros_like(other.classifier), nn::zeros_like(other.domain_head)};
}

bool ParamSet::same_shape(const ParamSet& other) const {
    return nn::same_shape(featurizer, other.featurizer) && nn::same_shape(classifier, other.classifier) &&
           nn::same_shape(domain_head, other.domain_head);
}

std::size_t ParamSet::parameter_count() const {
    std::size_t n = 0;
    for (const auto* stack : {&featurizer, &classifier, &domain_head}) {
        for (const auto& l : *stack) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    }
    return n;
}

void ModelShape::validate() const {
    if (input_dim < 1) throw ConfigurationError("model input_dim must be >= 1");
    if (featurizer_widths.empty()) throw ConfigurationError("featurizer needs at least one layer");
    for (int w : featurizer_widths) {
        if (w < 2) throw ConfigurationError("featurizer widths must be >= 2 for per-sample normalization");
    }
    for (int w : classifier_hidden) {
        if (w < 1) throw ConfigurationError("classifier hidden widths must be >= 1");
    }
    if (num_classes < 2) throw ConfigurationError("num_classes must be >= 2");
    if (domain_hidden < 0) throw ConfigurationError("domain_hidden must be >= 0");
    if (!(featurizer_init_gain > 0.0) || !std::isfinite(featurizer_init_gain)) {
        throw ConfigurationError("featurizer_init_gain must be positive and finite");
    }
}

ModelParams ModelParams::init(const ModelShape& shape, std::uint64_t seed) {
    shape.validate();
    ModelParams p;
    Rng main_rng = Rng::stream(seed, 0x1717);
    int width = shape.input_dim;
    for (int w : shape.featurizer_widths) {
        p.weights.featurizer.push_back(make_layer(width, w, main_rng));
        p.weights.featurizer.back().weight *= shape.featurizer_init_gain;
        width = w;
    }
    const int features = width;
    for (int w : shape.classifier_hidden) {
        p.weights.classifier.push_back(make_layer(width, w, main_rng));
        width = w;
    }
    p.weights.classifier.push_back(make_layer(width, shape.num_classes, main_rng));
    if (shape.domain_hidden > 0) {
        Rng head_rng = Rng::stream(seed, 0xD0D0);
        p.weights.domain_head.push_back(make_layer(features, shape.domain_hidden, head_rng));
        p.weights.domain_head.push_back(make_layer(shape.domain_hidden, 1, head_rng));
    }
    p.momentum = ParamSet::zeros_like(p.weights);
    return p;
}

int ModelParams::input_dim() const { return weights.featurizer.front().in(); }
int ModelParams::feature_dim() const { return weights.featurizer.back().out(); }
int ModelParams::num_classes() const { return weights.classifier.back().out(); }

void ModelParams::validate() const {
    if (weights.featurizer.empty() || weights.classifier.empty()) {
        throw ContractViolation("model needs a featurizer and a classifier");
    }
    check_composes(weights.featurizer, "featurizer");
    check_composes(weights.classifier, "classifier");
    check_composes(weights.domain_head, "domain head");
    if (weights.classifier.front().in() != feature_dim()) {
        throw ContractViolation("classifier input width does not match the feature width");
    }
    if (has_domain_head() &&
        (weights.domain_head.front().in() != feature_dim() || weights.domain_head.back().out() != 1)) {
        throw ContractViolation("domain head must map features to one logit");
    }
    if (!weights.same_shape(momentum)) throw ContractViolation("momentum buffers do not mirror the weights");
}

void OptimizerConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigurationError("learning rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigurationError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigurationError("weight decay must be >= 0");
}

FeatureOutput forward_features(const ModelParams& params, const Matrix& inputs) {
    if (inputs.cols() != params.input_dim()) {
        throw ContractViolation("input width " + std::to_string(inputs.cols()) + " does not match model input " +
                                std::to_string(params.input_dim()));
    }
    FeatureOutput out;
    out.trace.inputs = inputs;
    out.trace.blocks.resize(params.weights.featurizer.size());
    const Matrix* x = &inputs;
    for (std::size_t k = 0; k < params.weights.featurizer.size(); ++k) {
        auto& block = out.trace.blocks[k];
        block.pre = dense(params.weights.featurizer[k], *x);
        normalize_rows(block.pre, block);
        block.activation = block.normalized.cwiseMax(0.0);
        x = &block.activation;
    }
    out.features = *x;
    return out;
}

Matrix forward_head(const LayerStack& layers, const Matrix& inputs, HeadTrace* trace) {
    if (layers.empty()) throw ContractViolation("head has no layers");
    if (inputs.cols() != layers.front().in()) {
        throw ContractViolation("head input width " + std::to_string(inputs.cols()) + " does not match " +
                                std::to_string(layers.front().in()));
    }
    if (trace) {
        trace->inputs = inputs;
        trace->pre.clear();
        trace->activations.clear();
    }
    Matrix x = inputs;
    for (std::size_t k = 0; k < layers.size(); ++k) {
        Matrix z = dense(layers[k], x);
        const bool last = k + 1 == layers.size();
        if (trace) trace->pre.push_back(z);
        if (last) return z;
        x = z.cwiseMax(0.0);
        if (trace) trace->activations.push_back(x);
    }
    return x;
}

Matrix forward_classifier(const ModelParams& params, const Matrix& features) {
    return forward_head(params.weights.classifier, features);
}

ForwardTrace forward(const ModelParams& params, const Matrix& inputs) {
    ForwardTrace t;
    auto f = forward_features(params, inputs);
    t.featurizer = std::move(f.trace);
    t.features = std::move(f.features);
    t.logits = forward_head(params.weights.classifier, t.features, &t.classifier);
    return t;
}

Matrix softmax(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double mx = logits.row(i).maxCoeff();
        p.row(i) = (logits.row(i).array() - mx).exp();
        p.row(i) /= p.row(i).sum();
    }
    return p;
}

LossAndGrad cross_entropy(const Matrix& logits, std::span<const int> labels) {
    const Eigen::Index n = logits.rows();
    const Eigen::Index k = logits.cols();
    if (static_cast<std::size_t>(n) != labels.size()) throw ContractViolation("logits and labels differ in length");
    if (n == 0) throw ContractViolation("cross entropy of an empty batch");
    LossAndGrad out;
    out.grads.resize(n, k);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= k) throw ContractViolation("label " + std::to_string(y) + " out of range");
        const double mx = logits.row(i).maxCoeff();
        const auto shifted = (logits.row(i).array() - mx).eval();
        const double sum = shifted.exp().sum();
        const double log_sum = std::log(sum);
        total += log_sum - shifted[y];
        out.grads.row(i) = shifted.exp() / sum;
        out.grads(i, y) -= 1.0;
    }
    out.loss = total / static_cast<double>(n);
    out.grads /= static_cast<double>(n);
    return out;
}

LossAndGrad binary_cross_entropy(const Matrix& logits, std::span<const int> targets) {
    const Eigen::Index n = logits.rows();
    if (logits.cols() != 1) throw ContractViolation("binary cross entropy expects one logit per row");
    if (static_cast<std::size_t>(n) != targets.size()) throw ContractViolation("logits and targets differ in length");
    if (n == 0) throw ContractViolation("binary cross entropy of an empty batch");
    LossAndGrad out;
    out.grads.resize(n, 1);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int t = targets[static_cast<std::size_t>(i)];
        if (t != 0 && t != 1) throw ContractViolation("binary target must be 0 or 1");
        const double z = logits(i, 0);
        // log(1 + exp(-|z|)) + max(z, 0) - t z
        total += std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - t * z;
        const double sig = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        out.grads(i, 0) = sig - t;
    }
    out.loss = total / static_cast<double>(n);
    out.grads /= static_cast<double>(n);
    return out;
}

HeadBackward head_backward(const LayerStack& layers, const HeadTrace& trace, const Matrix& output_grads) {
    if (trace.pre.size() != layers.size() || trace.activations.size() + 1 != layers.size()) {
        throw ContractViolation("head trace does not match the head");
    }
    if (output_grads.rows() != trace.inputs.rows() || output_grads.cols() != layers.back().out()) {
        throw ContractViolation("head output gradient shape mismatch");
    }
    HeadBackward out;
    out.grads.resize(layers.size());
    Matrix dz = output_grads;
    for (std::size_t k = layers.size(); k-- > 0;) {
        const Matrix& x = k == 0 ? trace.inputs : trace.activations[k - 1];
        Matrix dx;
        dense_backward(layers[k], x, dz, out.grads[k], &dx);
        if (k == 0) {
            out.input_grads = std::move(dx);
        } else {
            dz = dx.cwiseProduct((trace.pre[k - 1].array() > 0.0).cast<double>().matrix());
        }
    }
    return out;
}

LayerStack featurizer_backward(const LayerStack& layers, const FeaturizerTrace& trace, const Matrix& feature_grads) {
    if (trace.blocks.size() != layers.size()) throw ContractViolation("featurizer trace does not match the model");
    if (feature_grads.rows() != trace.inputs.rows() || feature_grads.cols() != layers.back().out()) {
        throw ContractViolation("feature gradient shape mismatch");
    }
    LayerStack grads(layers.size());
    Matrix da = feature_grads;
    for (std::size_t k = layers.size(); k-- > 0;) {
        const auto& block = trace.blocks[k];
        if (block.pre.cols() != layers[k].out()) throw ContractViolation("featurizer trace is stale");
        const Matrix dy = da.cwiseProduct((block.normalized.array() > 0.0).cast<double>().matrix());
        const Matrix dz = normalize_backward(block, dy);
        const Matrix& x = k == 0 ? trace.inputs : trace.blocks[k - 1].activation;
        Matrix dx;
        dense_backward(layers[k], x, dz, grads[k], k == 0 ? nullptr : &dx);
        da = std::move(dx);
    }
    return grads;
}

Gradients backward(const ModelParams& params, const ForwardTrace& trace, const Matrix& upstream_feature_grads,
                   const Matrix& upstream_logit_grads) {
    const Eigen::Index n = trace.features.rows();
    Gradients g;
    g.domain_head = nn::zeros_like(params.weights.domain_head);

    Matrix feature_grads = Matrix::Zero(n, trace.features.cols());
    if (upstream_feature_grads.size() > 0) {
        if (upstream_feature_grads.rows() != n || upstream_feature_grads.cols() != trace.features.cols()) {
            throw ContractViolation("upstream feature gradient shape mismatch");
        }
        feature_grads = upstream_feature_grads;
    }
    if (upstream_logit_grads.size() > 0) {
        if (upstream_logit_grads.rows() != n || upstream_logit_grads.cols() != trace.logits.cols()) {
            throw ContractViolation("upstream logit gradient shape mismatch");
        }
        auto head = head_backward(params.weights.classifier, trace.classifier, upstream_logit_grads);
        g.classifier = std::move(head.grads);
        feature_grads += head.input_grads;
    } else {
        g.classifier = nn::zeros_like(params.weights.classifier);
    }
    g.featurizer = featurizer_backward(params.weights.featurizer, trace.featurizer, feature_grads);
    return g;
}

void sgd_step(ModelParams& params, const Gradients& grads, const OptimizerConfig& config) {
    config.validate();
    if (!params.weights.same_shape(grads)) throw ContractViolation("gradients are not shape-parallel to the model");
    auto step = [&](LayerStack& w, LayerStack& v, const LayerStack& g) {
        for (std::size_t k = 0; k < w.size(); ++k) {
            v[k].weight = config.momentum * v[k].weight + (g[k].weight + config.weight_decay * w[k].weight);
            v[k].bias = config.momentum * v[k].bias + g[k].bias;
            w[k].weight -= config.learning_rate * v[k].weight;
            w[k].bias -= config.learning_rate * v[k].bias;
        }
    };
    step(params.weights.featurizer, params.momentum.featurizer, grads.featurizer);
    step(params.weights.classifier, params.momentum.classifier, grads.classifier);
    step(params.weights.domain_head, params.momentum.domain_head, grads.domain_head);
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
    json j;
    j["format"] = "otda-checkpoint";
    j["version"] = 1;
    j["featurizer"] = layers_to_json(params.weights.featurizer);
    j["classifier"] = layers_to_json(params.weights.classifier);
    j["domain_head"] = layers_to_json(params.weights.domain_head);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out << j.dump(1) << '\n';
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read checkpoint " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigurationError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
    }
    if (j.value("format", "") != "otda-checkpoint" || j.value("version", 0) != 1) {
        throw ConfigurationError("checkpoint " + path.string() + " has an unknown format or version");
    }
    ModelParams p;
    try {
        p.weights.featurizer = layers_from_json(j.at("featurizer"), "featurizer");
        p.weights.classifier = layers_from_json(j.at("classifier"), "classifier");
        p.weights.domain_head = layers_from_json(j.value("domain_head", json::array()), "domain_head");
    } catch (const json::exception& e) {
        throw ConfigurationError("checkpoint " + path.string() + ": " + e.what());
    }
    p.momentum = ParamSet::zeros_like(p.weights);
    p.validate();
    return p;
}

}  // namespace otda::nn
