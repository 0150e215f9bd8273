#pragma once

// Synthetic multi-domain benchmark.
//
// Each class is a mixture of Gaussian subclusters in a shared latent space.
// Every domain applies its own affine map (per-coordinate scale, offset) to
// all of its samples, and may leave some subclusters out. Domains are tagged
// train / val / test; by default 1-3 train, 4 val, 5 test, and one class-1
// subcluster appears only in the test domain.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace otda::data {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Split { train, val, test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct ShiftSpec {
    Matrix scale;   // num_domains x d, entries > 0
    Matrix offset;  // num_domains x d
    /// num_domains x (num_classes * subclusters_per_class); nonzero = present.
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> present;
};

struct GeneratorConfig {
    int num_domains = 5;
    int dim = 8;
    int samples_per_domain = 2000;
    std::uint64_t seed = 0;
    int num_classes = 2;
    int subclusters_per_class = 3;
    /// Latent subcluster centers, row c * subclusters_per_class + k.
    Matrix subcluster_means;
    double noise_std = 1.0;
    /// Per-domain class-1 fraction is drawn uniformly from this range.
    double class1_fraction_lo = 0.3;
    double class1_fraction_hi = 0.7;
    /// Split of each domain, indexed by domain_id - 1.
    std::vector<Split> domain_splits;
    ShiftSpec shift;

    int num_subclusters() const { return num_classes * subclusters_per_class; }
    int class_of_subcluster(int s) const { return s / subclusters_per_class; }
    /// Subclusters present in the test domain but in no train domain.
    std::vector<int> masked_subclusters() const;
    void validate() const;
};

/// The frozen benchmark: 5 domains, d = 8, signal in the first two latent
/// coordinates, domain shifts and the held-out subcluster along the rest.
GeneratorConfig default_generator_config(std::uint64_t seed = 0, int samples_per_domain = 2000);

/// Same geometry with identity shifts and every subcluster everywhere.
GeneratorConfig unshifted_generator_config(std::uint64_t seed = 0, int samples_per_domain = 2000);

struct DomainDataset {
    Matrix features;
    std::vector<int> labels;
    std::vector<int> domain_ids;  // 1-based
    std::vector<Split> splits;
    std::vector<int> subclusters;         // empty when unavailable
    std::vector<int> masked_subclusters;  // subcluster ids never seen in training
    std::optional<GeneratorConfig> generator;

    std::size_t size() const { return labels.size(); }
    int dim() const { return static_cast<int>(features.cols()); }
    bool has_subclusters() const { return !subclusters.empty(); }

    std::vector<std::size_t> indices(Split s) const;
    std::vector<int> domains(Split s) const;
    Matrix rows(const std::vector<std::size_t>& idx) const;
    std::vector<int> labels_at(const std::vector<std::size_t>& idx) const;

    /// Split topology (>= 1 train domain, exactly one val and one test domain),
    /// consistent column lengths, labels in {0, 1}, finite features.
    void validate() const;
};

DomainDataset generate(const GeneratorConfig& config);

/// Exchanges the split tags of the val and test domains.
DomainDataset swap_val_test(const DomainDataset& dataset);

/// CSV with header domain_id,split,label,f0,...,f{d-1}; 9 significant digits.
/// Subcluster tags go to a sidecar next to it (see subcluster_sidecar).
void save_csv(const DomainDataset& dataset, const std::filesystem::path& path);
DomainDataset load_csv(const std::filesystem::path& path);

/// "x/dataset.csv" -> "x/dataset.subclusters.csv"
std::filesystem::path subcluster_sidecar(const std::filesystem::path& csv_path);

std::string generator_config_to_json(const GeneratorConfig& config);
GeneratorConfig generator_config_from_json(const std::string& text);

}  // namespace otda::data
