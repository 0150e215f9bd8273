#pragma once

// Post-hoc alignment: freeze an ERM model, move each target feature to the
// plan-weighted barycenter of source features, classify with the frozen head.

#include "otda/data_gen.hpp"
#include "otda/nn_core.hpp"
#include "otda/ot_core.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace otda::posthoc {

using Matrix = ot::Matrix;

struct AlignmentResult {
    Matrix aligned;   // n_t x f
    Matrix weights;   // n_t x n_s barycentric weights; rows sum to 1
    ot::TransportPlan plan;  // target (rows) x source (columns)
    double pre_accuracy = 0.0;
    double post_accuracy = 0.0;
};

struct PosthocConfig {
    double epsilon = 2.0;  // absolute, in feature units
    int max_source_rows = 2048;
    std::uint64_t seed = 0;  // governs the source subsample
    ot::Metric metric = ot::Metric::euclidean;
    int max_iterations = 1000;
    double marginal_tolerance = 1e-6;
    bool log_domain = true;

    void validate() const;
    ot::SinkhornConfig sinkhorn() const;
};

/// x̂_j = Σ_i Γ_ji x_i / Σ_i Γ_ji with Γ the entropic plan from the uniform
/// target measure to the uniform source measure.
AlignmentResult barycentric_map(const Matrix& source_features, const Matrix& target_features,
                                const PosthocConfig& config = {});

struct SplitAlignment {
    std::string split;
    double pre_accuracy = 0.0;
    double post_accuracy = 0.0;
    double pre_masked_accuracy = 0.0;   // NaN without held-out subcluster samples
    double post_masked_accuracy = 0.0;
};

struct PosthocReport {
    PosthocConfig config;
    std::uint64_t model_seed = 0;
    int source_rows = 0;
    std::vector<SplitAlignment> splits;  // val, test

    const SplitAlignment& split(const std::string& name) const;
};

/// Aligns the val and test splits onto (a seeded subsample of) the
/// source-train features of `erm_params` and scores them with its head.
PosthocReport evaluate_posthoc(const data::DomainDataset& dataset, const nn::ModelParams& erm_params,
                               const PosthocConfig& config = {});

std::string posthoc_report_to_json(const PosthocReport& report);
/// split,pre_accuracy,post_accuracy,pre_masked_accuracy,post_masked_accuracy
std::string posthoc_csv(const PosthocReport& report);

}  // namespace otda::posthoc
