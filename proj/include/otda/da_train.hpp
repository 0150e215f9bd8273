#pragma once

// Training harness: ERM, OT-regularized and domain-adversarial training with
// early stopping on validation accuracy, plus the α sweep.
//
// The validation domain doubles as the unlabeled target: its inputs feed the
// alignment term, its labels only ever feed accuracy measurement.

#include "otda/data_gen.hpp"
#include "otda/nn_core.hpp"
#include "otda/ot_core.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace otda::train {

using Matrix = ot::Matrix;

enum class Method { erm, ot, dann };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct TrainConfig {
    Method method = Method::erm;
    /// Weight of the OT term, or of the reversed adversary gradient for DANN.
    double alpha = 0.0;
    int epochs = 5;
    int batch_size = 128;
    nn::OptimizerConfig optimizer;
    ot::SinkhornConfig sinkhorn;
    ot::Metric metric = ot::Metric::euclidean;
    std::uint64_t seed = 0;
    bool early_stopping = true;
    /// Small featurizer init gain: with lr 1e-3 and five epochs the
    /// normalized featurizer barely moves from its initialization otherwise.
    nn::ModelShape model{.featurizer_init_gain = 0.07};
    /// Hidden width of the domain head, used when method == dann.
    int domain_hidden = 32;

    void validate() const;
    /// Model shape actually built for this config and input width.
    nn::ModelShape model_shape(int input_dim) const;
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    double ce_loss = 0.0;
    /// Mean OT value (method ot) or domain BCE (method dann) over the epoch's steps.
    double align_loss = 0.0;
    double val_accuracy = 0.0;
    double test_accuracy = 0.0;
    double seconds = 0.0;  // wall clock; kept out of serialized reports
};

struct SplitMetrics {
    double accuracy = 0.0;
    double auc = 0.0;
    double masked_accuracy = 0.0;  // NaN unless the split has held-out subcluster samples
};

struct RunReport {
    TrainConfig config;
    std::vector<EpochRecord> epochs;
    int selected_epoch = 0;  // 1-based
    std::map<std::string, SplitMetrics> final_metrics;  // "train", "val", "test"
    nn::ModelParams params;  // parameters of the selected epoch
    std::string run_id() const;
};

struct StepResult {
    double ce_loss = 0.0;
    double align_loss = 0.0;
};

struct CompositeGradients {
    double ce_loss = 0.0;
    double ot_loss = 0.0;
    double total = 0.0;
    nn::Gradients grads;
};

/// L_CE(source) + α·OT_ε(φ(X_S), φ(X_T)) and its parameter gradients. The OT
/// term, and its Sinkhorn solve, are skipped entirely when α = 0 or the method
/// is erm.
CompositeGradients composite_loss_gradients(const nn::ModelParams& params, const Matrix& xs, std::span<const int> ys,
                                            const Matrix& xt, const TrainConfig& config);

StepResult composite_loss_step(nn::ModelParams& params, const Matrix& xs, std::span<const int> ys, const Matrix& xt,
                               const TrainConfig& config);

struct DannGradients {
    double ce_loss = 0.0;
    double domain_loss = 0.0;
    nn::Gradients grads;
    /// Featurizer gradient contributed by the reversed adversary alone
    /// (filled only on request).
    nn::LayerStack featurizer_from_adversary;
};

/// Source rows are domain 0, target rows domain 1. The domain head descends
/// the BCE; the featurizer receives -α times the BCE gradient.
DannGradients dann_gradients(const nn::ModelParams& params, const Matrix& xs, std::span<const int> ys,
                             const Matrix& xt, double alpha, bool split_adversary = false);

StepResult dann_step(nn::ModelParams& params, const Matrix& xs, std::span<const int> ys, const Matrix& xt,
                     const TrainConfig& config);

RunReport train(const data::DomainDataset& dataset, const TrainConfig& config);

/// Accuracy / AUC / held-out-subcluster accuracy of `params` on one split.
SplitMetrics evaluate_split(const nn::ModelParams& params, const data::DomainDataset& dataset, data::Split split);

struct SweepCell {
    double alpha = 0.0;
    double val_mean = 0.0;
    double val_std = 0.0;
    double test_mean = 0.0;
    double test_std = 0.0;
};

struct SweepResult {
    TrainConfig base;
    std::vector<double> alphas;
    std::vector<std::uint64_t> seeds;
    std::vector<RunReport> runs;  // alpha-major: runs[a * seeds.size() + s]
    std::vector<SweepCell> cells;
    double selected_alpha = 0.0;  // argmax of mean validation accuracy; ties to the earlier α

    const RunReport& run(std::size_t alpha_index, std::size_t seed_index) const {
        return runs[alpha_index * seeds.size() + seed_index];
    }
};

/// Runs every (α, seed) cell. Cells run on up to `threads` worker threads
/// (0 = read OTDA_THREADS, default 1); results do not depend on the count.
SweepResult alpha_sweep(const data::DomainDataset& dataset, const TrainConfig& base, const std::vector<double>& alphas,
                        const std::vector<std::uint64_t>& seeds, int threads = 0);

/// Runs train for each seed with otherwise identical config.
std::vector<RunReport> train_seeds(const data::DomainDataset& dataset, const TrainConfig& base,
                                   const std::vector<std::uint64_t>& seeds, int threads = 0);

int default_thread_count();

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& text);
std::string run_report_to_json(const RunReport& report);
/// Everything but the parameters, which live in the run's checkpoint.
RunReport run_report_from_json(const std::string& text);
/// One row per epoch.
std::string epochs_csv(const RunReport& report);
std::string sweep_to_json(const SweepResult& sweep);

/// Formats a number the way run ids and tables show it ("1e-05", "0.1", "1").
std::string format_alpha(double alpha);

}  // namespace otda::train
