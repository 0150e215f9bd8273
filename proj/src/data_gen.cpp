#include "otda/data_gen.hpp"

#include "otda/error.hpp"
#include "otda/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace otda::data {

namespace {

using nlohmann::json;

constexpr std::uint64_t kDomainStream = 0xDA7A;

// Benchmark geometry. Tuned once against the calibration runs and then frozen.
constexpr double kClassSeparation = 4.0;   // distance between class centers on latent axis 0
constexpr double kSubclusterSpacing = 3.0;  // spacing of subclusters along latent axis 1
constexpr double kClassNuisance = 1.0;      // class 0 sits at -1, class 1 at +1 along the nuisance axis
constexpr double kMaskedShift = -7.0;       // held-out subcluster position along the nuisance axis
constexpr int kMaskedSubcluster = 5;        // class 1, third subcluster

// Unit direction spanning the nuisance coordinates (2..d-1).
Vector nuisance_axis(int dim) {
    Vector u = Vector::Zero(dim);
    for (int j = 2; j < dim; ++j) u[j] = 1.0;
    const double n = u.norm();
    if (n > 0) u /= n;
    return u;
}

Matrix default_means(int dim, int per_class) {
    Matrix means = Matrix::Zero(2 * per_class, dim);
    for (int c = 0; c < 2; ++c) {
        for (int k = 0; k < per_class; ++k) {
            auto row = means.row(c * per_class + k);
            row[0] = (c == 0 ? -0.5 : 0.5) * kClassSeparation;
            if (dim > 1) row[1] = (k - 0.5 * (per_class - 1)) * kSubclusterSpacing;
        }
    }
    return means;
}

std::string fmt9(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

template <class T>
bool parse_number(const std::string& s, T& out) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

void strip_cr(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
}

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json r = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
        rows.push_back(r);
    }
    return rows;
}

Matrix matrix_from_json(const json& rows, const char* name) {
    if (!rows.is_array() || rows.empty() || !rows[0].is_array()) {
        throw ConfigurationError(std::string("generator config: ") + name + " must be a non-empty array of rows");
    }
    Matrix m(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size()) {
            throw ConfigurationError(std::string("generator config: ragged rows in ") + name);
        }
        for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j].get<double>();
    }
    return m;
}

}  // namespace

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ContractViolation("unknown split '" + s + "'");
}

std::vector<int> GeneratorConfig::masked_subclusters() const {
    std::vector<int> out;
    const int test = static_cast<int>(std::find(domain_splits.begin(), domain_splits.end(), Split::test) -
                                      domain_splits.begin());
    if (test >= num_domains) return out;
    for (int s = 0; s < num_subclusters(); ++s) {
        if (!shift.present(test, s)) continue;
        bool seen = false;
        for (int d = 0; d < num_domains; ++d) {
            if (domain_splits[static_cast<std::size_t>(d)] == Split::train && shift.present(d, s)) seen = true;
        }
        if (!seen) out.push_back(s);
    }
    return out;
}

void GeneratorConfig::validate() const {
    if (num_domains < 3) throw ConfigurationError("num_domains must be >= 3");
    if (dim < 1) throw ConfigurationError("dim must be >= 1");
    if (samples_per_domain < 100) throw ConfigurationError("samples_per_domain must be >= 100");
    if (num_classes != 2) throw ConfigurationError("only binary labels are supported");
    if (subclusters_per_class < 1) throw ConfigurationError("subclusters_per_class must be >= 1");
    if (subcluster_means.rows() != num_subclusters() || subcluster_means.cols() != dim) {
        throw ConfigurationError("subcluster_means must be (num_classes * subclusters_per_class) x dim");
    }
    if (!(noise_std > 0)) throw ConfigurationError("noise_std must be positive");
    if (!(class1_fraction_lo > 0 && class1_fraction_lo <= class1_fraction_hi && class1_fraction_hi < 1)) {
        throw ConfigurationError("class-1 fraction range must satisfy 0 < lo <= hi < 1");
    }
    if (static_cast<int>(domain_splits.size()) != num_domains) {
        throw ConfigurationError("domain_splits must name a split for every domain");
    }
    const auto count = [&](Split s) { return std::count(domain_splits.begin(), domain_splits.end(), s); };
    if (count(Split::val) != 1 || count(Split::test) != 1 || count(Split::train) < 1) {
        throw ConfigurationError("need exactly one val domain, one test domain and at least one train domain");
    }
    if (shift.scale.rows() != num_domains || shift.scale.cols() != dim || shift.offset.rows() != num_domains ||
        shift.offset.cols() != dim) {
        throw ConfigurationError("shift scale/offset must be num_domains x dim");
    }
    if (!(shift.scale.array() > 0).all() || !shift.scale.allFinite() || !shift.offset.allFinite()) {
        throw ConfigurationError("shift scales must be positive and finite, offsets finite");
    }
    if (shift.present.rows() != num_domains || shift.present.cols() != num_subclusters()) {
        throw ConfigurationError("subcluster mask must be num_domains x num_subclusters");
    }
    for (int d = 0; d < num_domains; ++d) {
        for (int c = 0; c < num_classes; ++c) {
            bool any = false;
            for (int k = 0; k < subclusters_per_class; ++k) any = any || shift.present(d, c * subclusters_per_class + k);
            if (!any) {
                throw ConfigurationError("domain " + std::to_string(d + 1) + " has no subcluster for class " +
                                         std::to_string(c));
            }
        }
    }
}

GeneratorConfig unshifted_generator_config(std::uint64_t seed, int samples_per_domain) {
    GeneratorConfig c;
    c.seed = seed;
    c.samples_per_domain = samples_per_domain;
    c.subcluster_means = default_means(c.dim, c.subclusters_per_class);
    c.domain_splits = {Split::train, Split::train, Split::train, Split::val, Split::test};
    c.shift.scale = Matrix::Ones(c.num_domains, c.dim);
    c.shift.offset = Matrix::Zero(c.num_domains, c.dim);
    c.shift.present.setOnes(c.num_domains, c.num_subclusters());
    return c;
}

GeneratorConfig default_generator_config(std::uint64_t seed, int samples_per_domain) {
    GeneratorConfig c = unshifted_generator_config(seed, samples_per_domain);
    const Vector u = nuisance_axis(c.dim);

    // Stain-like shift: mild per-domain rescaling plus a displacement along the
    // nuisance axis that grows from the training domains to val to test.
    const double scales[5] = {1.0, 0.9, 1.1, 1.15, 1.25};
    const double along[5] = {-0.5, 0.0, 0.5, 3.5, 6.0};
    for (int d = 0; d < c.num_domains; ++d) {
        c.shift.scale.row(d).setConstant(scales[d]);
        c.shift.offset.row(d) = along[d] * u.transpose();
    }

    // The nuisance axis also carries a little class signal (tumor stains a
    // bit darker), so a model fit on the training domains leans on it and the
    // val/test displacement pushes predictions toward class 1.
    for (int s = 0; s < c.num_subclusters(); ++s) {
        const double side = s < c.subclusters_per_class ? -1.0 : 1.0;
        if (s != kMaskedSubcluster) c.subcluster_means.row(s) += side * kClassNuisance * u.transpose();
    }

    // Held-out phenotype: a class-1 subcluster that only the test domain
    // contains, sitting on the class-0 side of the nuisance axis, so only a
    // model that has stopped reading that axis gets it right.
    c.subcluster_means.row(kMaskedSubcluster) += kMaskedShift * u.transpose();
    for (int d = 0; d < c.num_domains; ++d) {
        if (c.domain_splits[static_cast<std::size_t>(d)] != Split::test) c.shift.present(d, kMaskedSubcluster) = 0;
    }
    return c;
}

std::vector<std::size_t> DomainDataset::indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i) {
        if (splits[i] == s) out.push_back(i);
    }
    return out;
}

std::vector<int> DomainDataset::domains(Split s) const {
    std::set<int> ids;
    for (std::size_t i = 0; i < splits.size(); ++i) {
        if (splits[i] == s) ids.insert(domain_ids[i]);
    }
    return {ids.begin(), ids.end()};
}

Matrix DomainDataset::rows(const std::vector<std::size_t>& idx) const {
    Matrix out(static_cast<Eigen::Index>(idx.size()), features.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        out.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(idx[r]));
    }
    return out;
}

std::vector<int> DomainDataset::labels_at(const std::vector<std::size_t>& idx) const {
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(labels[i]);
    return out;
}

void DomainDataset::validate() const {
    const std::size_t n = labels.size();
    if (static_cast<std::size_t>(features.rows()) != n || domain_ids.size() != n || splits.size() != n) {
        throw ContractViolation("dataset columns have inconsistent lengths");
    }
    if (!subclusters.empty() && subclusters.size() != n) {
        throw ContractViolation("subcluster tags do not cover every sample");
    }
    if (!features.allFinite()) throw ContractViolation("dataset features must be finite");
    for (int y : labels) {
        if (y != 0 && y != 1) throw ContractViolation("labels must be 0 or 1");
    }
    // A domain carries a single split.
    std::vector<std::pair<int, Split>> seen;
    for (std::size_t i = 0; i < n; ++i) {
        auto it = std::find_if(seen.begin(), seen.end(), [&](const auto& p) { return p.first == domain_ids[i]; });
        if (it == seen.end()) {
            seen.emplace_back(domain_ids[i], splits[i]);
        } else if (it->second != splits[i]) {
            throw ConfigurationError("domain " + std::to_string(domain_ids[i]) + " carries more than one split");
        }
    }
    if (domains(Split::train).empty()) throw ConfigurationError("dataset has no train domain");
    if (domains(Split::val).size() != 1) throw ConfigurationError("dataset needs exactly one val domain");
    if (domains(Split::test).size() != 1) throw ConfigurationError("dataset needs exactly one test domain");
}

DomainDataset generate(const GeneratorConfig& config) {
    config.validate();
    const int n = config.samples_per_domain;
    const int per_class = config.subclusters_per_class;

    DomainDataset ds;
    ds.features.resize(static_cast<Eigen::Index>(config.num_domains) * n, config.dim);
    ds.generator = config;
    ds.masked_subclusters = config.masked_subclusters();

    Eigen::Index row = 0;
    for (int d = 0; d < config.num_domains; ++d) {
        Rng rng = Rng::stream(config.seed, kDomainStream + static_cast<std::uint64_t>(d));
        const double frac = rng.uniform(config.class1_fraction_lo, config.class1_fraction_hi);
        const int ones = static_cast<int>(std::lround(frac * n));
        std::vector<int> labels(static_cast<std::size_t>(n), 0);
        std::fill(labels.begin(), labels.begin() + ones, 1);
        rng.shuffle(std::span<int>(labels));

        std::vector<int> present[2];
        for (int c = 0; c < 2; ++c) {
            for (int k = 0; k < per_class; ++k) {
                if (config.shift.present(d, c * per_class + k)) present[c].push_back(c * per_class + k);
            }
        }
        const auto scale = config.shift.scale.row(d);
        const auto offset = config.shift.offset.row(d);
        for (int i = 0; i < n; ++i, ++row) {
            const int y = labels[static_cast<std::size_t>(i)];
            const auto& opts = present[y];
            const int s = opts[rng.below(opts.size())];
            for (int j = 0; j < config.dim; ++j) {
                const double latent = config.subcluster_means(s, j) + config.noise_std * rng.normal();
                ds.features(row, j) = scale[j] * latent + offset[j];
            }
            ds.labels.push_back(y);
            ds.domain_ids.push_back(d + 1);
            ds.splits.push_back(config.domain_splits[static_cast<std::size_t>(d)]);
            ds.subclusters.push_back(s);
        }
    }
    return ds;
}

DomainDataset swap_val_test(const DomainDataset& dataset) {
    DomainDataset out = dataset;
    for (auto& s : out.splits) {
        if (s == Split::val) {
            s = Split::test;
        } else if (s == Split::test) {
            s = Split::val;
        }
    }
    if (out.generator) {
        for (auto& s : out.generator->domain_splits) {
            if (s == Split::val) {
                s = Split::test;
            } else if (s == Split::test) {
                s = Split::val;
            }
        }
    }
    return out;
}

std::filesystem::path subcluster_sidecar(const std::filesystem::path& csv_path) {
    auto p = csv_path;
    p.replace_extension(".subclusters.csv");
    return p;
}

void save_csv(const DomainDataset& dataset, const std::filesystem::path& path) {
    dataset.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "domain_id,split,label";
    for (int j = 0; j < dataset.dim(); ++j) out << ",f" << j;
    out << '\n';
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        out << dataset.domain_ids[i] << ',' << to_string(dataset.splits[i]) << ',' << dataset.labels[i];
        for (int j = 0; j < dataset.dim(); ++j) out << ',' << fmt9(dataset.features(static_cast<Eigen::Index>(i), j));
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());

    const auto side = subcluster_sidecar(path);
    if (dataset.has_subclusters()) {
        std::ofstream tags(side, std::ios::binary);
        if (!tags) throw IoError("cannot write " + side.string());
        tags << "subcluster,masked\n";
        for (int s : dataset.subclusters) {
            const bool masked = std::count(dataset.masked_subclusters.begin(), dataset.masked_subclusters.end(), s) > 0;
            tags << s << ',' << (masked ? 1 : 0) << '\n';
        }
        if (!tags) throw IoError("write failed: " + side.string());
    } else {
        std::filesystem::remove(side);
    }
}

DomainDataset load_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());

    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line)) throw ParseError("empty file, expected header", line_no);
    strip_cr(line);
    const auto header = split_fields(line);
    if (header.size() < 4 || header[0] != "domain_id" || header[1] != "split" || header[2] != "label") {
        throw ParseError("header must start with domain_id,split,label,f0", line_no);
    }
    const int d = static_cast<int>(header.size()) - 3;
    for (int j = 0; j < d; ++j) {
        if (header[static_cast<std::size_t>(j) + 3] != "f" + std::to_string(j)) {
            throw ParseError("expected column f" + std::to_string(j), line_no);
        }
    }

    DomainDataset ds;
    std::vector<double> values;
    while (std::getline(in, line)) {
        ++line_no;
        strip_cr(line);
        if (line.empty()) continue;
        const auto f = split_fields(line);
        if (static_cast<int>(f.size()) != d + 3) {
            throw ParseError("expected " + std::to_string(d + 3) + " fields, found " + std::to_string(f.size()),
                             line_no);
        }
        int domain = 0;
        int label = 0;
        if (!parse_number(f[0], domain) || domain < 1) throw ParseError("bad domain_id '" + f[0] + "'", line_no);
        Split split;
        try {
            split = split_from_string(f[1]);
        } catch (const ContractViolation&) {
            throw ParseError("bad split '" + f[1] + "'", line_no);
        }
        if (!parse_number(f[2], label) || (label != 0 && label != 1)) {
            throw ParseError("bad label '" + f[2] + "'", line_no);
        }
        for (int j = 0; j < d; ++j) {
            double v = 0;
            const auto& s = f[static_cast<std::size_t>(j) + 3];
            if (!parse_number(s, v) || !std::isfinite(v)) throw ParseError("bad feature value '" + s + "'", line_no);
            values.push_back(v);
        }
        ds.domain_ids.push_back(domain);
        ds.splits.push_back(split);
        ds.labels.push_back(label);
    }
    if (ds.labels.empty()) throw ParseError("no data rows", line_no);
    ds.features = Eigen::Map<Matrix>(values.data(), static_cast<Eigen::Index>(ds.labels.size()), d);

    const auto side = subcluster_sidecar(path);
    if (std::filesystem::exists(side)) {
        std::ifstream tags(side, std::ios::binary);
        std::size_t tag_line = 1;
        if (!std::getline(tags, line)) throw ParseError(side.string() + ": empty file", tag_line);
        strip_cr(line);
        if (line != "subcluster,masked") throw ParseError(side.string() + ": bad header", tag_line);
        std::set<int> masked;
        while (std::getline(tags, line)) {
            ++tag_line;
            strip_cr(line);
            if (line.empty()) continue;
            const auto f = split_fields(line);
            int s = 0;
            int m = 0;
            if (f.size() != 2 || !parse_number(f[0], s) || !parse_number(f[1], m) || s < 0 || (m != 0 && m != 1)) {
                throw ParseError(side.string() + ": bad row", tag_line);
            }
            ds.subclusters.push_back(s);
            if (m) masked.insert(s);
        }
        if (ds.subclusters.size() != ds.labels.size()) {
            throw ParseError(side.string() + ": row count does not match dataset", tag_line);
        }
        ds.masked_subclusters.assign(masked.begin(), masked.end());
    }
    ds.validate();
    return ds;
}

std::string generator_config_to_json(const GeneratorConfig& c) {
    json j;
    j["num_domains"] = c.num_domains;
    j["dim"] = c.dim;
    j["samples_per_domain"] = c.samples_per_domain;
    j["seed"] = c.seed;
    j["num_classes"] = c.num_classes;
    j["subclusters_per_class"] = c.subclusters_per_class;
    j["subcluster_means"] = matrix_to_json(c.subcluster_means);
    j["noise_std"] = c.noise_std;
    j["class1_fraction"] = {c.class1_fraction_lo, c.class1_fraction_hi};
    json splits = json::array();
    for (auto s : c.domain_splits) splits.push_back(to_string(s));
    j["domain_splits"] = splits;
    j["shift"]["scale"] = matrix_to_json(c.shift.scale);
    j["shift"]["offset"] = matrix_to_json(c.shift.offset);
    json present = json::array();
    for (Eigen::Index d = 0; d < c.shift.present.rows(); ++d) {
        json r = json::array();
        for (Eigen::Index s = 0; s < c.shift.present.cols(); ++s) r.push_back(c.shift.present(d, s) != 0);
        present.push_back(r);
    }
    j["shift"]["present"] = present;
    return j.dump(2) + "\n";
}

GeneratorConfig generator_config_from_json(const std::string& text) {
    GeneratorConfig c;
    try {
        const json j = json::parse(text);
        c.num_domains = j.at("num_domains").get<int>();
        c.dim = j.at("dim").get<int>();
        c.samples_per_domain = j.at("samples_per_domain").get<int>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.num_classes = j.value("num_classes", 2);
        c.subclusters_per_class = j.at("subclusters_per_class").get<int>();
        c.subcluster_means = matrix_from_json(j.at("subcluster_means"), "subcluster_means");
        c.noise_std = j.at("noise_std").get<double>();
        const auto& frac = j.at("class1_fraction");
        c.class1_fraction_lo = frac.at(0).get<double>();
        c.class1_fraction_hi = frac.at(1).get<double>();
        for (const auto& s : j.at("domain_splits")) c.domain_splits.push_back(split_from_string(s.get<std::string>()));
        c.shift.scale = matrix_from_json(j.at("shift").at("scale"), "shift.scale");
        c.shift.offset = matrix_from_json(j.at("shift").at("offset"), "shift.offset");
        const auto& present = j.at("shift").at("present");
        c.shift.present.resize(static_cast<Eigen::Index>(present.size()),
                               present.empty() ? 0 : static_cast<Eigen::Index>(present[0].size()));
        for (std::size_t d = 0; d < present.size(); ++d) {
            if (present[d].size() != static_cast<std::size_t>(c.shift.present.cols())) {
                throw ConfigurationError("generator config: ragged shift.present");
            }
            for (std::size_t s = 0; s < present[d].size(); ++s) {
                c.shift.present(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(s)) =
                    present[d][s].get<bool>() ? 1 : 0;
            }
        }
    } catch (const json::exception& e) {
        throw ConfigurationError(std::string("generator config: ") + e.what());
    } catch (const ContractViolation& e) {
        throw ConfigurationError(std::string("generator config: ") + e.what());
    }
    c.validate();
    return c;
}

}  // namespace otda::data
