#include "otda/posthoc_align.hpp"

#include "otda/error.hpp"
#include "otda/eval_report.hpp"
#include "otda/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace otda::posthoc {

namespace {

using nlohmann::json;
using data::Split;

constexpr std::uint64_t kSubsampleStream = 0xB0A7;

json nan_to_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double masked_accuracy_of(const data::DomainDataset& ds, const std::vector<std::size_t>& idx,
                          const std::vector<int>& pred) {
    if (!ds.has_subclusters() || ds.masked_subclusters.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::vector<int> labels, dom, sub;
    for (auto i : idx) {
        labels.push_back(ds.labels[i]);
        dom.push_back(ds.domain_ids[i]);
        sub.push_back(ds.subclusters[i]);
    }
    return eval::masked_accuracy(eval::subcluster_breakdown(pred, labels, dom, sub, ds.masked_subclusters));
}

}  // namespace

void PosthocConfig::validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigurationError("alignment epsilon must be > 0");
    if (max_source_rows < 1) throw ConfigurationError("max_source_rows must be >= 1");
    if (max_iterations < 1) throw ConfigurationError("max_iterations must be >= 1");
    if (!(marginal_tolerance > 0.0)) throw ConfigurationError("marginal tolerance must be > 0");
}

ot::SinkhornConfig PosthocConfig::sinkhorn() const {
    auto c = ot::SinkhornConfig::absolute(epsilon);
    c.max_iterations = max_iterations;
    c.marginal_tolerance = marginal_tolerance;
    c.log_domain = log_domain;
    return c;
}

AlignmentResult barycentric_map(const Matrix& source_features, const Matrix& target_features,
                                const PosthocConfig& config) {
    config.validate();
    if (source_features.cols() != target_features.cols()) {
        throw ContractViolation("source and target features differ in width");
    }
    const auto target = ot::DiscreteDistribution::uniform(target_features);
    const auto source = ot::DiscreteDistribution::uniform(source_features);
    const auto cost = ot::cost_matrix(target, source, config.metric);

    AlignmentResult out;
    out.plan = ot::sinkhorn(cost, target, source, config.sinkhorn());
    if (!out.plan.converged) {
        const auto [row, col] = ot::marginal_residual(out.plan, target, source);
        throw SinkhornNotConverged(out.plan.iterations_used, row, col);
    }
    const Eigen::VectorXd mass = out.plan.gamma.rowwise().sum();
    if (!(mass.array() > 0.0).all()) throw NumericError("barycentric map: a target point received no mass");
    out.weights = mass.cwiseInverse().asDiagonal() * out.plan.gamma;
    out.aligned = out.weights * source_features;
    return out;
}

const SplitAlignment& PosthocReport::split(const std::string& name) const {
    for (const auto& s : splits) {
        if (s.split == name) return s;
    }
    throw ContractViolation("post-hoc report has no split '" + name + "'");
}

PosthocReport evaluate_posthoc(const data::DomainDataset& dataset, const nn::ModelParams& erm_params,
                               const PosthocConfig& config) {
    config.validate();
    dataset.validate();
    PosthocReport report;
    report.config = config;

    auto train_idx = dataset.indices(Split::train);
    if (static_cast<int>(train_idx.size()) > config.max_source_rows) {
        Rng rng = Rng::stream(config.seed, kSubsampleStream);
        rng.shuffle(std::span<std::size_t>(train_idx));
        train_idx.resize(static_cast<std::size_t>(config.max_source_rows));
        std::sort(train_idx.begin(), train_idx.end());
    }
    report.source_rows = static_cast<int>(train_idx.size());
    const Matrix source = nn::forward_features(erm_params, dataset.rows(train_idx)).features;

    for (Split s : {Split::val, Split::test}) {
        const auto idx = dataset.indices(s);
        if (idx.empty()) throw ConfigurationError("split '" + data::to_string(s) + "' is empty");
        const auto labels = dataset.labels_at(idx);
        const Matrix feats = nn::forward_features(erm_params, dataset.rows(idx)).features;

        const auto pre = eval::predict(nn::forward_classifier(erm_params, feats));
        const auto aligned = barycentric_map(source, feats, config);
        const auto post = eval::predict(nn::forward_classifier(erm_params, aligned.aligned));

        SplitAlignment r;
        r.split = data::to_string(s);
        r.pre_accuracy = eval::accuracy(pre, labels);
        r.post_accuracy = eval::accuracy(post, labels);
        r.pre_masked_accuracy = masked_accuracy_of(dataset, idx, pre);
        r.post_masked_accuracy = masked_accuracy_of(dataset, idx, post);
        report.splits.push_back(r);
    }
    return report;
}

std::string posthoc_report_to_json(const PosthocReport& r) {
    json j;
    j["epsilon"] = r.config.epsilon;
    j["metric"] = ot::to_string(r.config.metric);
    j["max_source_rows"] = r.config.max_source_rows;
    j["source_rows"] = r.source_rows;
    j["subsample_seed"] = r.config.seed;
    j["model_seed"] = r.model_seed;
    json splits = json::array();
    for (const auto& s : r.splits) {
        splits.push_back({{"split", s.split},
                          {"pre_accuracy", s.pre_accuracy},
                          {"post_accuracy", s.post_accuracy},
                          {"pre_masked_accuracy", nan_to_null(s.pre_masked_accuracy)},
                          {"post_masked_accuracy", nan_to_null(s.post_masked_accuracy)}});
    }
    j["splits"] = splits;
    return j.dump(2) + "\n";
}

std::string posthoc_csv(const PosthocReport& r) {
    std::ostringstream out;
    out << "split,pre_accuracy,post_accuracy,pre_masked_accuracy,post_masked_accuracy\n";
    char buf[256];
    for (const auto& s : r.splits) {
        std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%.9g,%.9g\n", s.split.c_str(), s.pre_accuracy, s.post_accuracy,
                      s.pre_masked_accuracy, s.post_masked_accuracy);
        out << buf;
    }
    return out.str();
}

}  // namespace otda::posthoc
