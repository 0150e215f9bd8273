#pragma once

// Small feed-forward network with an explicit reverse pass.
//
// The featurizer is a stack of dense -> per-sample normalization -> ReLU
// blocks. Normalization standardizes each row across its hidden units (no
// batch statistics, no learned affine). Classifier and domain heads are dense
// layers with ReLU between them and a linear output.

#include "otda/ot_core.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace otda::nn {

using Matrix = ot::Matrix;
using Vector = Eigen::VectorXd;

inline constexpr double kVarianceFloor = 1e-5;

struct DenseLayer {
    Matrix weight;  // out x in
    Vector bias;    // out

    int in() const { return static_cast<int>(weight.cols()); }
    int out() const { return static_cast<int>(weight.rows()); }
};

using LayerStack = std::vector<DenseLayer>;

/// Parameters of every sub-network. Also used for gradients and momentum.
struct ParamSet {
    LayerStack featurizer;
    LayerStack classifier;
    LayerStack domain_head;  // empty unless the model carries a DANN adversary

    static ParamSet zeros_like(const ParamSet& other);
    bool same_shape(const ParamSet& other) const;
    std::size_t parameter_count() const;
};

using Gradients = ParamSet;

struct ModelShape {
    int input_dim = 8;
    std::vector<int> featurizer_widths{64, 64, 32};
    std::vector<int> classifier_hidden{};
    int num_classes = 2;
    /// Hidden width of the two-layer domain head; 0 means no domain head.
    int domain_hidden = 0;
    /// Multiplier on the featurizer's initial weights. Every featurizer block
    /// is normalized per sample, so this leaves the forward pass unchanged and
    /// only sets the featurizer's effective step size (lr / gain^2).
    double featurizer_init_gain = 1.0;

    void validate() const;
};

struct ModelParams {
    ParamSet weights;
    ParamSet momentum;

    /// Seeded uniform fan-in initialization, U(-sqrt(3/fan_in), sqrt(3/fan_in)),
    /// zero biases, featurizer weights scaled by the init gain. Featurizer and classifier draw from one stream and the
    /// domain head from another, so adding a domain head leaves the rest of
    /// the initialization unchanged.
    static ModelParams init(const ModelShape& shape, std::uint64_t seed);

    int input_dim() const;
    int feature_dim() const;
    int num_classes() const;
    bool has_domain_head() const { return !weights.domain_head.empty(); }

    /// Layer widths compose and momentum buffers mirror the weights.
    void validate() const;
};

struct OptimizerConfig {
    double learning_rate = 1e-3;
    double momentum = 0.9;
    double weight_decay = 1e-3;

    void validate() const;
};

struct NormBlockTrace {
    Matrix pre;         // dense output z
    Matrix normalized;  // (z - mean) / std per row
    Vector inv_std;
    std::vector<char> floored;  // row variance hit the floor
    Matrix activation;  // ReLU(normalized)
};

struct FeaturizerTrace {
    Matrix inputs;
    std::vector<NormBlockTrace> blocks;
};

struct HeadTrace {
    Matrix inputs;
    std::vector<Matrix> pre;          // per layer
    std::vector<Matrix> activations;  // ReLU outputs of hidden layers
};

struct ForwardTrace {
    FeaturizerTrace featurizer;
    HeadTrace classifier;
    Matrix features;
    Matrix logits;
};

struct FeatureOutput {
    Matrix features;
    FeaturizerTrace trace;
};

FeatureOutput forward_features(const ModelParams& params, const Matrix& inputs);
Matrix forward_classifier(const ModelParams& params, const Matrix& features);
ForwardTrace forward(const ModelParams& params, const Matrix& inputs);

/// Generic head: ReLU between layers, linear output.
Matrix forward_head(const LayerStack& layers, const Matrix& inputs, HeadTrace* trace = nullptr);

struct LossAndGrad {
    double loss = 0.0;
    Matrix grads;  // d loss / d logits
};

/// Mean softmax cross-entropy; stable via max subtraction.
LossAndGrad cross_entropy(const Matrix& logits, std::span<const int> labels);

/// Mean sigmoid binary cross-entropy of n x 1 logits against 0/1 targets.
LossAndGrad binary_cross_entropy(const Matrix& logits, std::span<const int> targets);

Matrix softmax(const Matrix& logits);

struct HeadBackward {
    LayerStack grads;
    Matrix input_grads;
};

HeadBackward head_backward(const LayerStack& layers, const HeadTrace& trace, const Matrix& output_grads);

LayerStack featurizer_backward(const LayerStack& layers, const FeaturizerTrace& trace, const Matrix& feature_grads);

/// Parameter gradients for a scalar loss given its gradient with respect to
/// the features and to the logits of `trace`. Either upstream may be empty
/// (0 x 0) to mean zero. The domain-head group of the result is zero.
Gradients backward(const ModelParams& params, const ForwardTrace& trace, const Matrix& upstream_feature_grads,
                   const Matrix& upstream_logit_grads);

/// v <- momentum v + (g + weight_decay * W); W <- W - lr v. Biases are not decayed.
void sgd_step(ModelParams& params, const Gradients& grads, const OptimizerConfig& config);

/// JSON checkpoint: {"format": "otda-checkpoint", "version": 1, "featurizer": [...], ...}
/// with each layer stored as {"in", "out", "weight" (row-major), "bias"}.
/// Momentum buffers are not stored; a loaded model has zero momentum.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace otda::nn
