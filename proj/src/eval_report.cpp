#include "otda/eval_report.hpp"

#include "otda/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace otda::eval {

namespace {

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

const char* const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::vector<double> collect(const std::vector<train::RunReport>& runs, double (*get)(const train::RunReport&)) {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(get(r));
    return v;
}

std::string cell(const std::vector<double>& values) {
    std::vector<double> finite;
    for (double v : values) {
        if (std::isfinite(v)) finite.push_back(v);
    }
    if (finite.empty()) return "";
    const auto [m, s] = mean_and_std(finite);
    return mean_std_cell(m, s);
}

std::vector<double> test_scores(const train::RunReport& run, const data::DomainDataset& dataset,
                                std::vector<int>& labels) {
    const auto idx = dataset.indices(data::Split::test);
    labels = dataset.labels_at(idx);
    return positive_scores(nn::forward(run.params, dataset.rows(idx)).logits);
}

}  // namespace

std::vector<int> predict(const Matrix& logits) {
    std::vector<int> out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < logits.cols(); ++k) {
            if (logits(i, k) > logits(i, best)) best = k;
        }
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size()) throw ContractViolation("predictions and labels differ in length");
    if (labels.empty()) throw ContractViolation("accuracy of an empty set");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double accuracy(const Matrix& logits, std::span<const int> labels) {
    if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
        throw ContractViolation("logits and labels differ in length");
    }
    return accuracy(predict(logits), labels);
}

std::vector<double> positive_scores(const Matrix& logits) {
    if (logits.cols() != 2) throw ContractViolation("class-1 scores need two-column logits");
    std::vector<double> out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        out[static_cast<std::size_t>(i)] = 1.0 / (1.0 + std::exp(logits(i, 0) - logits(i, 1)));
    }
    return out;
}

RocCurve roc_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ContractViolation("scores and labels differ in length");
    long long pos = 0;
    long long neg = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw ContractViolation("ROC labels must be 0 or 1");
        if (!std::isfinite(scores[i])) throw ContractViolation("ROC scores must be finite");
        (labels[i] ? pos : neg) += 1;
    }
    if (pos == 0 || neg == 0) throw UndefinedMetric("ROC/AUC needs both classes present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve roc;
    roc.thresholds.push_back(std::numeric_limits<double>::infinity());
    roc.fpr.push_back(0.0);
    roc.tpr.push_back(0.0);
    // Twice the area in units of (1/neg)(1/pos), accumulated exactly.
    long long area2 = 0;
    long long tp = 0;
    long long fp = 0;
    for (std::size_t k = 0; k < order.size();) {
        const double s = scores[order[k]];
        const long long tp0 = tp;
        const long long fp0 = fp;
        while (k < order.size() && scores[order[k]] == s) {
            (labels[order[k]] ? tp : fp) += 1;
            ++k;
        }
        area2 += (fp - fp0) * (tp + tp0);
        roc.thresholds.push_back(s);
        roc.fpr.push_back(static_cast<double>(fp) / static_cast<double>(neg));
        roc.tpr.push_back(static_cast<double>(tp) / static_cast<double>(pos));
    }
    roc.auc = static_cast<double>(area2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
    return roc;
}

std::vector<SubclusterCell> subcluster_breakdown(std::span<const int> predictions, std::span<const int> labels,
                                                 std::span<const int> domains, std::span<const int> subclusters,
                                                 std::span<const int> masked_subclusters) {
    if (subclusters.empty() && !labels.empty()) throw FeatureUnavailable("samples carry no subcluster tags");
    if (predictions.size() != labels.size() || domains.size() != labels.size() ||
        subclusters.size() != labels.size()) {
        throw ContractViolation("breakdown inputs differ in length");
    }
    std::map<std::pair<int, int>, SubclusterCell> cells;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto& c = cells[{domains[i], subclusters[i]}];
        c.domain = domains[i];
        c.subcluster = subclusters[i];
        c.masked = std::find(masked_subclusters.begin(), masked_subclusters.end(), subclusters[i]) !=
                   masked_subclusters.end();
        c.count += 1;
        c.correct += predictions[i] == labels[i];
    }
    std::vector<SubclusterCell> out;
    for (const auto& [key, c] : cells) out.push_back(c);
    return out;
}

double masked_accuracy(const std::vector<SubclusterCell>& cells) {
    std::size_t count = 0;
    std::size_t correct = 0;
    for (const auto& c : cells) {
        if (!c.masked) continue;
        count += c.count;
        correct += c.correct;
    }
    if (count == 0) return std::numeric_limits<double>::quiet_NaN();
    return static_cast<double>(correct) / static_cast<double>(count);
}

Projection pca_project(const Matrix& features) {
    const Eigen::Index n = features.rows();
    const Eigen::Index f = features.cols();
    if (n < 2) throw ContractViolation("PCA needs at least two rows");
    if (f < 1) throw ContractViolation("PCA needs at least one column");
    if (!features.allFinite()) throw ContractViolation("PCA input must be finite");

    const Eigen::RowVectorXd mean = features.colwise().mean();
    const Matrix centered = features.rowwise() - mean;
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);

    Projection p;
    p.total_variance = cov.trace();
    if (!(p.total_variance > 0.0)) throw DegenerateProjection("PCA input has zero variance");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw NumericError("PCA eigen-decomposition failed");
    p.components = Matrix::Zero(2, f);
    p.explained.setZero();
    for (int k = 0; k < 2 && k < f; ++k) {
        Eigen::VectorXd v = solver.eigenvectors().col(f - 1 - k);
        Eigen::Index arg = 0;
        for (Eigen::Index j = 1; j < f; ++j) {
            if (std::abs(v[j]) > std::abs(v[arg])) arg = j;
        }
        if (v[arg] < 0) v = -v;
        p.components.row(k) = v.transpose();
        p.explained[k] = std::max(solver.eigenvalues()[f - 1 - k], 0.0);
    }
    p.coords = centered * p.components.transpose();
    return p;
}

std::pair<double, double> mean_and_std(std::span<const double> values) {
    if (values.empty()) throw ContractViolation("mean of an empty set");
    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    if (values.size() == 1) return {mean, 0.0};
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / (n - 1.0))};
}

std::string mean_std_cell(double mean, double std) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f (%.3f)", mean, std);
    return buf;
}

std::string method_table_csv(const std::vector<RunGroup>& groups) {
    std::ostringstream out;
    out << "method,alpha,seeds,val_accuracy,test_accuracy,test_auc,masked_accuracy\n";
    for (const auto& g : groups) {
        if (g.runs.empty()) throw ContractViolation("method table group '" + g.label + "' has no runs");
        out << g.label << ',' << train::format_alpha(g.runs.front().config.alpha) << ',' << g.runs.size() << ','
            << '"' << cell(collect(g.runs, [](const train::RunReport& r) { return r.final_metrics.at("val").accuracy; }))
            << "\",\""
            << cell(collect(g.runs, [](const train::RunReport& r) { return r.final_metrics.at("test").accuracy; }))
            << "\",\"" << cell(collect(g.runs, [](const train::RunReport& r) { return r.final_metrics.at("test").auc; }))
            << "\",\""
            << cell(collect(g.runs,
                            [](const train::RunReport& r) { return r.final_metrics.at("test").masked_accuracy; }))
            << "\"\n";
    }
    return out.str();
}

std::string alpha_grid_csv(const train::SweepResult& sweep) {
    std::ostringstream out;
    out << "metric";
    for (double a : sweep.alphas) out << ',' << train::format_alpha(a);
    out << '\n';
    out << "val_accuracy";
    for (const auto& c : sweep.cells) out << ",\"" << mean_std_cell(c.val_mean, c.val_std) << '"';
    out << '\n';
    out << "test_accuracy";
    for (const auto& c : sweep.cells) out << ",\"" << mean_std_cell(c.test_mean, c.test_std) << '"';
    out << '\n';
    return out.str();
}

std::string subcluster_table_csv(const std::vector<train::RunReport>& runs, const data::DomainDataset& dataset) {
    if (!dataset.has_subclusters()) throw FeatureUnavailable("dataset carries no subcluster tags");
    const auto idx = dataset.indices(data::Split::test);
    const auto labels = dataset.labels_at(idx);
    std::vector<int> dom, sub;
    for (auto i : idx) {
        dom.push_back(dataset.domain_ids[i]);
        sub.push_back(dataset.subclusters[i]);
    }
    std::ostringstream out;
    out << "run_id,domain,subcluster,masked,count,correct,accuracy\n";
    for (const auto& r : runs) {
        const auto pred = predict(nn::forward(r.params, dataset.rows(idx)).logits);
        for (const auto& c : subcluster_breakdown(pred, labels, dom, sub, dataset.masked_subclusters)) {
            out << r.run_id() << ',' << c.domain << ',' << c.subcluster << ',' << (c.masked ? 1 : 0) << ','
                << c.count << ',' << c.correct << ',' << fmt("%.6f", c.accuracy()) << '\n';
        }
    }
    return out.str();
}

std::string swap_table_csv(const std::vector<RunGroup>& original, const std::vector<RunGroup>& swapped) {
    if (original.size() != swapped.size()) throw ContractViolation("swap table needs matching groups");
    auto test_acc = [](const train::RunReport& r) { return r.final_metrics.at("test").accuracy; };
    std::ostringstream out;
    out << "method,original_test_accuracy,swapped_test_accuracy\n";
    for (std::size_t i = 0; i < original.size(); ++i) {
        out << original[i].label << ",\"" << cell(collect(original[i].runs, test_acc)) << "\",\""
            << cell(collect(swapped[i].runs, test_acc)) << "\"\n";
    }
    return out.str();
}

std::string posthoc_table_csv(const std::vector<posthoc::PosthocReport>& reports) {
    if (reports.empty()) throw ContractViolation("post-hoc table needs at least one report");
    std::ostringstream out;
    out << "split,seeds,pre_accuracy,post_accuracy,pre_masked_accuracy,post_masked_accuracy\n";
    for (const auto& s : reports.front().splits) {
        std::vector<double> pre, post, pre_m, post_m;
        for (const auto& r : reports) {
            const auto& a = r.split(s.split);
            pre.push_back(a.pre_accuracy);
            post.push_back(a.post_accuracy);
            pre_m.push_back(a.pre_masked_accuracy);
            post_m.push_back(a.post_masked_accuracy);
        }
        out << s.split << ',' << reports.size() << ",\"" << cell(pre) << "\",\"" << cell(post) << "\",\""
            << cell(pre_m) << "\",\"" << cell(post_m) << "\"\n";
    }
    return out.str();
}

std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series) {
    constexpr double W = 640, H = 420, L = 70, R = 170, T = 40, B = 50;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 "
        << W << ' ' << H << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
        << xml_escape(title) << "</text>\n";
    out << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double xv = x0 + (x1 - x0) * k / 4.0;
        const double yv = y0 + (y1 - y0) * k / 4.0;
        out << "<text x=\"" << fmt("%.2f", px(xv)) << "\" y=\"" << H - B + 16
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << fmt("%.3g", xv)
            << "</text>\n";
        out << "<text x=\"" << L - 6 << "\" y=\"" << fmt("%.2f", py(yv) + 4)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt("%.3g", yv)
            << "</text>\n";
    }
    out << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(x_label)
        << "</text>\n";
    out << "<text transform=\"translate(16," << (T + H - B) / 2
        << ") rotate(-90)\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
        << xml_escape(y_label) << "</text>\n";

    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = kPalette[k % (sizeof kPalette / sizeof kPalette[0])];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
        bool first = true;
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            out << (first ? "" : " ") << fmt("%.2f", px(s.x[i])) << ',' << fmt("%.2f", py(s.y[i]));
            first = false;
        }
        out << "\"/>\n";
        const double ly = T + 14 + 18.0 * static_cast<double>(k);
        out << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly
            << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << W - R + 36 << "\" y=\"" << ly + 4 << "\" font-family=\"sans-serif\" font-size=\"11\">"
            << xml_escape(s.label) << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

void emit_convergence_plots(const train::SweepResult& sweep, const std::filesystem::path& plots_dir) {
    struct Panel {
        const char* file;
        const char* title;
        const char* y_label;
        double (*get)(const train::EpochRecord&);
    };
    const Panel panels[] = {
        {"convergence_ce.svg", "Cross-entropy loss", "CE loss", [](const train::EpochRecord& e) { return e.ce_loss; }},
        {"convergence_align.svg", "Alignment loss", "OT / adversary loss",
         [](const train::EpochRecord& e) { return e.align_loss; }},
        {"convergence_val.svg", "Validation accuracy", "accuracy",
         [](const train::EpochRecord& e) { return e.val_accuracy; }},
    };
    for (const auto& panel : panels) {
        std::vector<Series> series;
        for (std::size_t a = 0; a < sweep.alphas.size(); ++a) {
            Series s;
            s.label = "alpha=" + train::format_alpha(sweep.alphas[a]);
            const std::size_t epochs = sweep.run(a, 0).epochs.size();
            for (std::size_t e = 0; e < epochs; ++e) {
                double sum = 0.0;
                for (std::size_t k = 0; k < sweep.seeds.size(); ++k) sum += panel.get(sweep.run(a, k).epochs[e]);
                s.x.push_back(static_cast<double>(e + 1));
                s.y.push_back(sum / static_cast<double>(sweep.seeds.size()));
            }
            series.push_back(std::move(s));
        }
        write_text(plots_dir / panel.file, line_plot_svg(panel.title, "epoch", panel.y_label, series));
    }
}

void emit_roc_plot(const std::vector<train::RunReport>& runs, const data::DomainDataset& dataset,
                   const std::filesystem::path& plots_dir) {
    std::vector<Series> series;
    for (const auto& r : runs) {
        std::vector<int> labels;
        const auto scores = test_scores(r, dataset, labels);
        const auto roc = roc_auc(scores, labels);
        series.push_back({r.run_id() + " (AUC " + fmt("%.3f", roc.auc) + ")", roc.fpr, roc.tpr});
    }
    write_text(plots_dir / "roc_test.svg", line_plot_svg("ROC, unseen domain", "false positive rate",
                                                         "true positive rate", series));
}

void emit_embeddings(const std::vector<train::RunReport>& runs, const data::DomainDataset& dataset,
                     const std::filesystem::path& embeddings_dir) {
    for (const auto& r : runs) {
        const Matrix feats = nn::forward_features(r.params, dataset.features).features;
        const auto proj = pca_project(feats);
        std::ostringstream out;
        out << "domain,split,label,subcluster,pc1,pc2";
        for (Eigen::Index j = 0; j < feats.cols(); ++j) out << ",f" << j;
        out << '\n';
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            const auto row = static_cast<Eigen::Index>(i);
            out << dataset.domain_ids[i] << ',' << data::to_string(dataset.splits[i]) << ',' << dataset.labels[i]
                << ',' << (dataset.has_subclusters() ? dataset.subclusters[i] : -1) << ','
                << fmt("%.6g", proj.coords(row, 0)) << ',' << fmt("%.6g", proj.coords(row, 1));
            for (Eigen::Index j = 0; j < feats.cols(); ++j) out << ',' << fmt("%.6g", feats(row, j));
            out << '\n';
        }
        write_text(embeddings_dir / (r.run_id() + ".csv"), out.str());
    }
}

}  // namespace otda::eval
