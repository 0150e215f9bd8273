#pragma once

// Metrics, per-subcluster breakdowns, PCA embeddings and report emission.

#include "otda/da_train.hpp"
#include "otda/data_gen.hpp"
#include "otda/posthoc_align.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace otda::eval {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Row-wise argmax; ties go to the lower class index.
std::vector<int> predict(const Matrix& logits);

/// Fraction of rows whose argmax equals the label.
double accuracy(const Matrix& logits, std::span<const int> labels);
double accuracy(std::span<const int> predictions, std::span<const int> labels);

struct RocCurve {
    std::vector<double> thresholds;  // descending; the first is +inf
    std::vector<double> fpr;
    std::vector<double> tpr;
    double auc = 0.0;
};

/// ROC from class-1 scores; one point per distinct score, so tied scores
/// contribute a diagonal segment. AUC by the trapezoid rule.
RocCurve roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Class-1 probability of two-column logits.
std::vector<double> positive_scores(const Matrix& logits);

struct SubclusterCell {
    int domain = 0;
    int subcluster = 0;
    bool masked = false;
    std::size_t count = 0;
    std::size_t correct = 0;
    double accuracy() const { return count ? static_cast<double>(correct) / static_cast<double>(count) : 0.0; }
};

/// Accuracy per (domain, subcluster) cell, sorted by domain then subcluster.
std::vector<SubclusterCell> subcluster_breakdown(std::span<const int> predictions, std::span<const int> labels,
                                                 std::span<const int> domains, std::span<const int> subclusters,
                                                 std::span<const int> masked_subclusters);

/// Accuracy pooled over every cell flagged as masked; NaN when there is none.
double masked_accuracy(const std::vector<SubclusterCell>& cells);

struct Projection {
    Matrix coords;            // n x 2
    Matrix components;        // 2 x f, rows are unit principal directions
    Eigen::Vector2d explained;  // variance along each component
    double total_variance = 0.0;
};

/// Mean-centered projection onto the top two principal directions. Each
/// direction's largest-magnitude loading is made positive.
Projection pca_project(const Matrix& features);

/// "0.891 (0.005)": mean with the sample standard deviation in parentheses.
std::string mean_std_cell(double mean, double std);

/// Mean and sample (n - 1) standard deviation; std is 0 for a single value.
std::pair<double, double> mean_and_std(std::span<const double> values);

/// A labelled group of runs that differ only in seed.
struct RunGroup {
    std::string label;
    std::vector<train::RunReport> runs;
};

/// method,alpha,seeds,val_accuracy,test_accuracy,test_auc,masked_accuracy with
/// mean (std) cells, one row per group.
std::string method_table_csv(const std::vector<RunGroup>& groups);
/// Rows val_accuracy / test_accuracy, one mean (std) column per α.
std::string alpha_grid_csv(const train::SweepResult& sweep);
/// run_id,domain,subcluster,masked,count,correct,accuracy for the test split.
std::string subcluster_table_csv(const std::vector<train::RunReport>& runs, const data::DomainDataset& dataset);
/// label,split,original_test,swapped_test: accuracy on the unseen domain before and after the swap.
std::string swap_table_csv(const std::vector<RunGroup>& original, const std::vector<RunGroup>& swapped);
/// split,seeds,pre_accuracy,post_accuracy (mean (std)).
std::string posthoc_table_csv(const std::vector<posthoc::PosthocReport>& reports);

/// plots/convergence_{ce,align,val}.svg: per-α seed-mean curves against epoch.
void emit_convergence_plots(const train::SweepResult& sweep, const std::filesystem::path& plots_dir);
/// plots/roc_test.svg: one test-split ROC curve per run.
void emit_roc_plot(const std::vector<train::RunReport>& runs, const data::DomainDataset& dataset,
                   const std::filesystem::path& plots_dir);
/// embeddings/{run_id}.csv: domain,split,label,subcluster,pc1,pc2,f0.. of the
/// learned features of every sample.
void emit_embeddings(const std::vector<train::RunReport>& runs, const data::DomainDataset& dataset,
                     const std::filesystem::path& embeddings_dir);

/// Polyline SVG: one series per entry, shared axes.
struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};
std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace otda::eval
