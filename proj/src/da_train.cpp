#include "otda/da_train.hpp"

#include "otda/error.hpp"
#include "otda/eval_report.hpp"
#include "otda/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <limits>
#include <sstream>
#include <thread>

namespace otda::train {

namespace {

using nlohmann::json;
using data::Split;

constexpr std::uint64_t kShuffleStream = 0x5EED01;
constexpr std::uint64_t kTargetStream = 0x7A26E7;

void add_into(nn::LayerStack& acc, const nn::LayerStack& g) {
    for (std::size_t k = 0; k < acc.size(); ++k) {
        acc[k].weight += g[k].weight;
        acc[k].bias += g[k].bias;
    }
}

void check_batches(const Matrix& xs, std::span<const int> ys, const Matrix& xt) {
    if (xs.rows() == 0 || xt.rows() == 0) throw ContractViolation("empty source or target batch");
    if (static_cast<std::size_t>(xs.rows()) != ys.size()) throw ContractViolation("source batch and labels differ");
    if (xs.cols() != xt.cols()) throw ContractViolation("source and target batches differ in width");
}

// Cycles through a split in reshuffled passes.
class CyclicSampler {
public:
    CyclicSampler(std::vector<std::size_t> pool, Rng rng) : pool_(std::move(pool)), rng_(rng) { refill(); }

    std::vector<std::size_t> next(std::size_t count) {
        std::vector<std::size_t> out;
        out.reserve(count);
        while (out.size() < count) {
            if (cursor_ == order_.size()) refill();
            out.push_back(order_[cursor_++]);
        }
        return out;
    }

private:
    void refill() {
        order_ = pool_;
        rng_.shuffle(std::span<std::size_t>(order_));
        cursor_ = 0;
    }

    std::vector<std::size_t> pool_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    Rng rng_;
};

json nan_to_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json config_json(const TrainConfig& c) {
    json j;
    j["method"] = to_string(c.method);
    j["alpha"] = c.alpha;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["optimizer"] = {{"learning_rate", c.optimizer.learning_rate},
                      {"momentum", c.optimizer.momentum},
                      {"weight_decay", c.optimizer.weight_decay}};
    j["sinkhorn"] = {{"epsilon", c.sinkhorn.epsilon},
                     {"epsilon_relative", c.sinkhorn.epsilon_relative},
                     {"max_iterations", c.sinkhorn.max_iterations},
                     {"marginal_tolerance", c.sinkhorn.marginal_tolerance},
                     {"log_domain", c.sinkhorn.log_domain}};
    j["metric"] = ot::to_string(c.metric);
    j["seed"] = c.seed;
    j["early_stopping"] = c.early_stopping;
    j["model"] = {{"featurizer_widths", c.model.featurizer_widths},
                  {"classifier_hidden", c.model.classifier_hidden},
                  {"featurizer_init_gain", c.model.featurizer_init_gain}};
    j["domain_hidden"] = c.domain_hidden;
    return j;
}

}  // namespace

std::string to_string(Method m) {
    switch (m) {
        case Method::erm: return "erm";
        case Method::ot: return "ot";
        case Method::dann: return "dann";
    }
    return "?";
}

Method method_from_string(const std::string& s) {
    if (s == "erm") return Method::erm;
    if (s == "ot") return Method::ot;
    if (s == "dann") return Method::dann;
    throw ConfigurationError("unknown method '" + s + "' (expected erm, ot or dann)");
}

void TrainConfig::validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigurationError("alpha must be finite and >= 0");
    if (epochs < 1) throw ConfigurationError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigurationError("batch size must be >= 1");
    if (domain_hidden < 1) throw ConfigurationError("domain head width must be >= 1");
    model.validate();
    optimizer.validate();
    try {
        sinkhorn.validate();
    } catch (const ContractViolation& e) {
        throw ConfigurationError(e.what());
    }
}

nn::ModelShape TrainConfig::model_shape(int input_dim) const {
    nn::ModelShape s = model;
    s.input_dim = input_dim;
    s.domain_hidden = method == Method::dann ? domain_hidden : 0;
    return s;
}

std::string RunReport::run_id() const {
    return to_string(config.method) + "_a" + format_alpha(config.alpha) + "_s" + std::to_string(config.seed);
}

std::string format_alpha(double alpha) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", alpha);
    return buf;
}

CompositeGradients composite_loss_gradients(const nn::ModelParams& params, const Matrix& xs, std::span<const int> ys,
                                            const Matrix& xt, const TrainConfig& config) {
    check_batches(xs, ys, xt);
    CompositeGradients out;
    const auto ts = nn::forward(params, xs);
    const auto ce = nn::cross_entropy(ts.logits, ys);
    out.ce_loss = ce.loss;

    const bool use_ot = config.method == Method::ot && config.alpha > 0.0;
    if (!use_ot) {
        out.grads = nn::backward(params, ts, Matrix(), ce.grads);
        out.total = out.ce_loss;
        return out;
    }
    if (xs.rows() != xt.rows()) throw ContractViolation("OT pairing needs equal source and target batch sizes");

    const auto ft = nn::forward_features(params, xt);
    const auto ot_val = ot::ot_value_and_point_grads(ts.features, ft.features, config.sinkhorn, config.metric);
    out.ot_loss = ot_val.value;
    out.total = out.ce_loss + config.alpha * out.ot_loss;

    out.grads = nn::backward(params, ts, Matrix(config.alpha * ot_val.source_grads), ce.grads);
    const auto target_feat = nn::featurizer_backward(params.weights.featurizer, ft.trace,
                                                     Matrix(config.alpha * ot_val.target_grads));
    add_into(out.grads.featurizer, target_feat);
    return out;
}

StepResult composite_loss_step(nn::ModelParams& params, const Matrix& xs, std::span<const int> ys, const Matrix& xt,
                               const TrainConfig& config) {
    auto g = composite_loss_gradients(params, xs, ys, xt, config);
    nn::sgd_step(params, g.grads, config.optimizer);
    return {g.ce_loss, g.ot_loss};
}

DannGradients dann_gradients(const nn::ModelParams& params, const Matrix& xs, std::span<const int> ys,
                             const Matrix& xt, double alpha, bool split_adversary) {
    check_batches(xs, ys, xt);
    if (!params.has_domain_head()) throw ContractViolation("adversarial step needs a domain head");
    DannGradients out;
    const Eigen::Index ns = xs.rows();
    const Eigen::Index nt = xt.rows();

    const auto ts = nn::forward(params, xs);
    const auto ce = nn::cross_entropy(ts.logits, ys);
    const auto ft = nn::forward_features(params, xt);
    out.ce_loss = ce.loss;

    Matrix both(ns + nt, ts.features.cols());
    both << ts.features, ft.features;
    std::vector<int> domain(static_cast<std::size_t>(ns + nt), 0);
    std::fill(domain.begin() + ns, domain.end(), 1);
    nn::HeadTrace head_trace;
    const Matrix logits = nn::forward_head(params.weights.domain_head, both, &head_trace);
    const auto bce = nn::binary_cross_entropy(logits, domain);
    out.domain_loss = bce.loss;
    auto head = nn::head_backward(params.weights.domain_head, head_trace, bce.grads);

    // Gradient reversal: the featurizer ascends the domain loss.
    const Matrix rev_s = -alpha * head.input_grads.topRows(ns);
    const Matrix rev_t = -alpha * head.input_grads.bottomRows(nt);
    out.grads = nn::backward(params, ts, rev_s, ce.grads);
    add_into(out.grads.featurizer, nn::featurizer_backward(params.weights.featurizer, ft.trace, rev_t));
    out.grads.domain_head = std::move(head.grads);

    if (split_adversary) {
        out.featurizer_from_adversary = nn::featurizer_backward(params.weights.featurizer, ts.featurizer, rev_s);
        add_into(out.featurizer_from_adversary, nn::featurizer_backward(params.weights.featurizer, ft.trace, rev_t));
    }
    return out;
}

StepResult dann_step(nn::ModelParams& params, const Matrix& xs, std::span<const int> ys, const Matrix& xt,
                     const TrainConfig& config) {
    auto g = dann_gradients(params, xs, ys, xt, config.alpha);
    nn::sgd_step(params, g.grads, config.optimizer);
    return {g.ce_loss, g.domain_loss};
}

SplitMetrics evaluate_split(const nn::ModelParams& params, const data::DomainDataset& dataset, Split split) {
    const auto idx = dataset.indices(split);
    if (idx.empty()) throw ConfigurationError("split '" + data::to_string(split) + "' is empty");
    const Matrix logits = nn::forward(params, dataset.rows(idx)).logits;
    const auto labels = dataset.labels_at(idx);

    SplitMetrics m;
    m.accuracy = eval::accuracy(logits, labels);
    m.auc = std::numeric_limits<double>::quiet_NaN();
    if (logits.cols() == 2) {
        try {
            m.auc = eval::roc_auc(eval::positive_scores(logits), labels).auc;
        } catch (const UndefinedMetric&) {
        }
    }
    m.masked_accuracy = std::numeric_limits<double>::quiet_NaN();
    if (dataset.has_subclusters() && !dataset.masked_subclusters.empty()) {
        const auto pred = eval::predict(logits);
        std::vector<int> dom, sub;
        for (auto i : idx) {
            dom.push_back(dataset.domain_ids[i]);
            sub.push_back(dataset.subclusters[i]);
        }
        m.masked_accuracy =
            eval::masked_accuracy(eval::subcluster_breakdown(pred, labels, dom, sub, dataset.masked_subclusters));
    }
    return m;
}

RunReport train(const data::DomainDataset& dataset, const TrainConfig& config) {
    config.validate();
    dataset.validate();
    const auto train_idx = dataset.indices(Split::train);
    const auto val_idx = dataset.indices(Split::val);
    const auto test_idx = dataset.indices(Split::test);
    if (train_idx.empty() || val_idx.empty() || test_idx.empty()) {
        throw ConfigurationError("train, val and test splits must all be non-empty");
    }

    RunReport report;
    report.config = config;
    auto params = nn::ModelParams::init(config.model_shape(dataset.dim()), config.seed);
    report.params = params;

    Rng shuffle_rng = Rng::stream(config.seed, kShuffleStream);
    CyclicSampler targets(val_idx, Rng::stream(config.seed, kTargetStream));
    // The adversary trains on target rows even at alpha = 0; the OT term does not.
    const bool needs_target =
        config.method == Method::dann || (config.method == Method::ot && config.alpha > 0.0);

    const Matrix val_x = dataset.rows(val_idx);
    const Matrix test_x = dataset.rows(test_idx);
    const auto val_y = dataset.labels_at(val_idx);
    const auto test_y = dataset.labels_at(test_idx);

    double best_val = -1.0;
    const std::size_t bs = static_cast<std::size_t>(config.batch_size);
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        std::vector<std::size_t> order = train_idx;
        shuffle_rng.shuffle(std::span<std::size_t>(order));

        double ce_sum = 0.0;
        double align_sum = 0.0;
        int steps = 0;
        for (std::size_t lo = 0; lo < order.size(); lo += bs) {
            const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                                 order.begin() + static_cast<std::ptrdiff_t>(std::min(lo + bs, order.size())));
            const Matrix xs = dataset.rows(batch);
            const auto ys = dataset.labels_at(batch);
            // Unlabeled target rows: only inputs of the val domain are read.
            const Matrix xt = needs_target ? dataset.rows(targets.next(batch.size())) : xs;
            const StepResult r = config.method == Method::dann ? dann_step(params, xs, ys, xt, config)
                                                                : composite_loss_step(params, xs, ys, xt, config);
            if (!std::isfinite(r.ce_loss) || !std::isfinite(r.align_loss)) {
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                   std::to_string(steps + 1));
            }
            ce_sum += r.ce_loss;
            align_sum += r.align_loss;
            ++steps;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.ce_loss = ce_sum / steps;
        rec.align_loss = align_sum / steps;
        rec.val_accuracy = eval::accuracy(nn::forward(params, val_x).logits, val_y);
        rec.test_accuracy = eval::accuracy(nn::forward(params, test_x).logits, test_y);
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        report.epochs.push_back(rec);

        if (!config.early_stopping || rec.val_accuracy > best_val) {
            best_val = rec.val_accuracy;
            report.selected_epoch = epoch;
            report.params = params;
        }
    }

    for (Split s : {Split::train, Split::val, Split::test}) {
        report.final_metrics[data::to_string(s)] = evaluate_split(report.params, dataset, s);
    }
    return report;
}

int default_thread_count() {
    if (const char* env = std::getenv("OTDA_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return 1;
}

namespace {

template <class Fn>
void run_cells(std::size_t count, int threads, Fn&& fn) {
    if (threads <= 0) threads = default_thread_count();
    threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(threads), count));
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(count);
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace

std::vector<RunReport> train_seeds(const data::DomainDataset& dataset, const TrainConfig& base,
                                   const std::vector<std::uint64_t>& seeds, int threads) {
    std::vector<RunReport> runs(seeds.size());
    run_cells(seeds.size(), threads, [&](std::size_t i) {
        TrainConfig c = base;
        c.seed = seeds[i];
        runs[i] = train(dataset, c);
    });
    return runs;
}

SweepResult alpha_sweep(const data::DomainDataset& dataset, const TrainConfig& base, const std::vector<double>& alphas,
                        const std::vector<std::uint64_t>& seeds, int threads) {
    if (alphas.empty()) throw ConfigurationError("alpha sweep needs at least one alpha");
    if (seeds.empty()) throw ConfigurationError("alpha sweep needs at least one seed");
    SweepResult out;
    out.base = base;
    out.alphas = alphas;
    out.seeds = seeds;
    out.runs.resize(alphas.size() * seeds.size());
    run_cells(out.runs.size(), threads, [&](std::size_t i) {
        TrainConfig c = base;
        c.alpha = alphas[i / seeds.size()];
        c.seed = seeds[i % seeds.size()];
        out.runs[i] = train(dataset, c);
    });

    double best = -1.0;
    for (std::size_t a = 0; a < alphas.size(); ++a) {
        std::vector<double> val, test;
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            val.push_back(out.run(a, s).final_metrics.at("val").accuracy);
            test.push_back(out.run(a, s).final_metrics.at("test").accuracy);
        }
        SweepCell cell;
        cell.alpha = alphas[a];
        std::tie(cell.val_mean, cell.val_std) = eval::mean_and_std(val);
        std::tie(cell.test_mean, cell.test_std) = eval::mean_and_std(test);
        out.cells.push_back(cell);
        if (cell.val_mean > best) {
            best = cell.val_mean;
            out.selected_alpha = cell.alpha;
        }
    }
    return out;
}

std::string train_config_to_json(const TrainConfig& config) { return config_json(config).dump(2) + "\n"; }

TrainConfig train_config_from_json(const std::string& text) {
    TrainConfig c;
    try {
        const json j = json::parse(text);
        if (j.contains("method")) c.method = method_from_string(j["method"].get<std::string>());
        c.alpha = j.value("alpha", c.alpha);
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        if (j.contains("optimizer")) {
            const auto& o = j["optimizer"];
            c.optimizer.learning_rate = o.value("learning_rate", c.optimizer.learning_rate);
            c.optimizer.momentum = o.value("momentum", c.optimizer.momentum);
            c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
        }
        if (j.contains("sinkhorn")) {
            const auto& s = j["sinkhorn"];
            c.sinkhorn.epsilon = s.value("epsilon", c.sinkhorn.epsilon);
            c.sinkhorn.epsilon_relative = s.value("epsilon_relative", c.sinkhorn.epsilon_relative);
            c.sinkhorn.max_iterations = s.value("max_iterations", c.sinkhorn.max_iterations);
            c.sinkhorn.marginal_tolerance = s.value("marginal_tolerance", c.sinkhorn.marginal_tolerance);
            c.sinkhorn.log_domain = s.value("log_domain", c.sinkhorn.log_domain);
        }
        if (j.contains("metric")) c.metric = ot::metric_from_string(j["metric"].get<std::string>());
        c.seed = j.value("seed", c.seed);
        c.early_stopping = j.value("early_stopping", c.early_stopping);
        if (j.contains("model")) {
            const auto& m = j["model"];
            c.model.featurizer_widths = m.value("featurizer_widths", c.model.featurizer_widths);
            c.model.classifier_hidden = m.value("classifier_hidden", c.model.classifier_hidden);
            c.model.featurizer_init_gain = m.value("featurizer_init_gain", c.model.featurizer_init_gain);
        }
        c.domain_hidden = j.value("domain_hidden", c.domain_hidden);
    } catch (const json::exception& e) {
        throw ConfigurationError(std::string("train config: ") + e.what());
    } catch (const ContractViolation& e) {
        throw ConfigurationError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string run_report_to_json(const RunReport& r) {
    json j;
    j["run_id"] = r.run_id();
    j["config"] = config_json(r.config);
    j["seed"] = r.config.seed;
    j["selected_epoch"] = r.selected_epoch;
    json epochs = json::array();
    for (const auto& e : r.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"ce_loss", e.ce_loss},
                          {"align_loss", e.align_loss},
                          {"val_accuracy", e.val_accuracy},
                          {"test_accuracy", e.test_accuracy}});
    }
    j["epochs"] = epochs;
    json fin;
    for (const auto& [split, m] : r.final_metrics) {
        fin[split] = {{"accuracy", m.accuracy}, {"auc", nan_to_null(m.auc)},
                      {"masked_accuracy", nan_to_null(m.masked_accuracy)}};
    }
    j["final"] = fin;
    return j.dump(2) + "\n";
}

RunReport run_report_from_json(const std::string& text) {
    RunReport r;
    try {
        const json j = json::parse(text);
        r.config = train_config_from_json(j.at("config").dump());
        r.selected_epoch = j.at("selected_epoch").get<int>();
        for (const auto& e : j.at("epochs")) {
            EpochRecord rec;
            rec.epoch = e.at("epoch").get<int>();
            rec.ce_loss = e.at("ce_loss").get<double>();
            rec.align_loss = e.at("align_loss").get<double>();
            rec.val_accuracy = e.at("val_accuracy").get<double>();
            rec.test_accuracy = e.at("test_accuracy").get<double>();
            r.epochs.push_back(rec);
        }
        const auto nan_or = [](const json& v) {
            return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
        };
        for (const auto& [split, m] : j.at("final").items()) {
            r.final_metrics[split] = {m.at("accuracy").get<double>(), nan_or(m.at("auc")),
                                      nan_or(m.at("masked_accuracy"))};
        }
    } catch (const json::exception& e) {
        throw ConfigurationError(std::string("run report: ") + e.what());
    }
    return r;
}

std::string epochs_csv(const RunReport& r) {
    std::ostringstream out;
    out << "epoch,ce_loss,align_loss,val_accuracy,test_accuracy,selected\n";
    char buf[256];
    for (const auto& e : r.epochs) {
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%d\n", e.epoch, e.ce_loss, e.align_loss,
                      e.val_accuracy, e.test_accuracy, e.epoch == r.selected_epoch ? 1 : 0);
        out << buf;
    }
    return out.str();
}

std::string sweep_to_json(const SweepResult& s) {
    json j;
    j["base_config"] = config_json(s.base);
    j["alphas"] = s.alphas;
    j["seeds"] = s.seeds;
    j["selected_alpha"] = s.selected_alpha;
    json cells = json::array();
    for (const auto& c : s.cells) {
        cells.push_back({{"alpha", c.alpha},
                         {"val_mean", c.val_mean},
                         {"val_std", c.val_std},
                         {"test_mean", c.test_mean},
                         {"test_std", c.test_std}});
    }
    j["cells"] = cells;
    json runs = json::array();
    for (const auto& r : s.runs) runs.push_back(json::parse(run_report_to_json(r)));
    j["runs"] = runs;
    return j.dump(2) + "\n";
}

}  // namespace otda::train
