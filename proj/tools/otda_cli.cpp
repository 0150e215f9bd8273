// otda: data generation, training, sweeps, baselines and reports from one binary.
//
// Exit codes: 0 success, 1 contract / configuration / input errors, 2 numeric
// failures (Sinkhorn non-convergence, non-finite losses, failed self-test).
// Errors are also written to stderr as one line of JSON.

#include <CLI11.hpp>
#include <json.hpp>

#include "otda/da_train.hpp"
#include "otda/data_gen.hpp"
#include "otda/error.hpp"
#include "otda/eval_report.hpp"
#include "otda/posthoc_align.hpp"
#include "otda/selftest.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using namespace otda;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

const char* const kDefaultGrid = "1e-5,1e-4,1e-3,1e-2,1e-1,1";

struct Options {
    std::string method = "erm";
    double alpha = 0.0;
    std::string alphas = kDefaultGrid;
    std::optional<double> epsilon;
    std::uint64_t seed = 0;
    std::string seeds;  // "" = just --seed; "N" = N seeds from --seed; "a,b,c" = explicit
    int epochs = 5;
    int batch_size = 128;
    double lr = 1e-3;
    double momentum = 0.9;
    double weight_decay = 1e-3;
    std::string data;  // directory or CSV; empty = the generated default benchmark
    std::uint64_t data_seed = 0;
    int samples_per_domain = 2000;
    bool swap_val_test = false;
    std::string metric = "euclidean";
    std::string log_domain = "true";
    int max_iterations = 1000;
    double tolerance = 1e-6;
    std::string early_stopping = "true";

    // not part of the snapshot
    std::string out;
    std::string in;
    std::string config;
};

json snapshot(const std::string& command, const Options& o) {
    json j;
    j["command"] = command;
    j["method"] = o.method;
    j["alpha"] = o.alpha;
    j["alphas"] = o.alphas;
    j["epsilon"] = o.epsilon ? json(*o.epsilon) : json(nullptr);
    j["seed"] = o.seed;
    j["seeds"] = o.seeds;
    j["epochs"] = o.epochs;
    j["batch-size"] = o.batch_size;
    j["lr"] = o.lr;
    j["momentum"] = o.momentum;
    j["weight-decay"] = o.weight_decay;
    j["data"] = o.data;
    j["data-seed"] = o.data_seed;
    j["samples-per-domain"] = o.samples_per_domain;
    j["swap-val-test"] = o.swap_val_test;
    j["metric"] = o.metric;
    j["log-domain"] = o.log_domain;
    j["max-iterations"] = o.max_iterations;
    j["tolerance"] = o.tolerance;
    j["early-stopping"] = o.early_stopping;
    return j;
}

std::string bool_string(const json& v) {
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    const auto s = v.get<std::string>();
    if (s != "true" && s != "false") throw ConfigurationError("expected true or false, got '" + s + "'");
    return s;
}

// Values from the config file override the command line.
void apply_config_file(const std::string& command, Options& o) {
    std::ifstream in(o.config);
    if (!in) throw IoError("cannot read config file " + o.config);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigurationError("config file " + o.config + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigurationError("config file must hold a JSON object");

    const std::map<std::string, std::function<void(const json&)>> setters{
        {"command",
         [&](const json& v) {
             if (v.get<std::string>() != command)
                 throw ConfigurationError("config file was written by '" + v.get<std::string>() + "', not '" +
                                          command + "'");
         }},
        {"method", [&](const json& v) { o.method = v.get<std::string>(); }},
        {"alpha", [&](const json& v) { o.alpha = v.get<double>(); }},
        {"alphas", [&](const json& v) { o.alphas = v.get<std::string>(); }},
        {"epsilon",
         [&](const json& v) { o.epsilon = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()); }},
        {"seed", [&](const json& v) { o.seed = v.get<std::uint64_t>(); }},
        {"seeds", [&](const json& v) { o.seeds = v.is_number() ? std::to_string(v.get<int>()) : v.get<std::string>(); }},
        {"epochs", [&](const json& v) { o.epochs = v.get<int>(); }},
        {"batch-size", [&](const json& v) { o.batch_size = v.get<int>(); }},
        {"lr", [&](const json& v) { o.lr = v.get<double>(); }},
        {"momentum", [&](const json& v) { o.momentum = v.get<double>(); }},
        {"weight-decay", [&](const json& v) { o.weight_decay = v.get<double>(); }},
        {"data", [&](const json& v) { o.data = v.get<std::string>(); }},
        {"data-seed", [&](const json& v) { o.data_seed = v.get<std::uint64_t>(); }},
        {"samples-per-domain", [&](const json& v) { o.samples_per_domain = v.get<int>(); }},
        {"swap-val-test", [&](const json& v) { o.swap_val_test = v.get<bool>(); }},
        {"metric", [&](const json& v) { o.metric = v.get<std::string>(); }},
        {"log-domain", [&](const json& v) { o.log_domain = bool_string(v); }},
        {"max-iterations", [&](const json& v) { o.max_iterations = v.get<int>(); }},
        {"tolerance", [&](const json& v) { o.tolerance = v.get<double>(); }},
        {"early-stopping", [&](const json& v) { o.early_stopping = bool_string(v); }},
    };
    for (const auto& [key, value] : j.items()) {
        const auto it = setters.find(key);
        if (it == setters.end()) throw ConfigurationError("config file: unknown key '" + key + "'");
        try {
            it->second(value);
        } catch (const json::exception& e) {
            throw ConfigurationError("config file: key '" + key + "': " + e.what());
        }
    }
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        item.erase(0, item.find_first_not_of(' '));
        item.erase(item.find_last_not_of(' ') + 1);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<double> parse_alphas(const std::string& s) {
    std::vector<double> out;
    for (const auto& item : split_list(s)) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) throw ConfigurationError("bad alpha '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw ConfigurationError("--alphas is empty");
    return out;
}

std::vector<std::uint64_t> parse_seeds(const Options& o, std::size_t default_count) {
    std::vector<std::uint64_t> out;
    const auto items = split_list(o.seeds);
    auto to_u64 = [](const std::string& item) {
        if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
            throw ConfigurationError("bad seed '" + item + "'");
        return static_cast<std::uint64_t>(std::stoull(item));
    };
    if (items.size() > 1) {
        for (const auto& item : items) out.push_back(to_u64(item));
        return out;
    }
    const std::size_t count = items.empty() ? default_count : static_cast<std::size_t>(to_u64(items.front()));
    if (count == 0) throw ConfigurationError("--seeds must be positive");
    for (std::size_t k = 0; k < count; ++k) out.push_back(o.seed + k);
    return out;
}

data::DomainDataset load_dataset(const Options& o) {
    data::DomainDataset ds;
    if (o.data.empty()) {
        ds = data::generate(data::default_generator_config(o.data_seed, o.samples_per_domain));
    } else {
        fs::path p = o.data;
        if (fs::is_directory(p)) p /= "dataset.csv";
        ds = data::load_csv(p);
    }
    return o.swap_val_test ? data::swap_val_test(ds) : ds;
}

train::TrainConfig train_config(const Options& o) {
    train::TrainConfig c;
    c.method = train::method_from_string(o.method);
    c.alpha = o.alpha;
    c.epochs = o.epochs;
    c.batch_size = o.batch_size;
    c.optimizer.learning_rate = o.lr;
    c.optimizer.momentum = o.momentum;
    c.optimizer.weight_decay = o.weight_decay;
    if (o.epsilon) c.sinkhorn.epsilon = *o.epsilon;  // multiplier on mean(C)
    c.sinkhorn.log_domain = o.log_domain == "true";
    c.sinkhorn.max_iterations = o.max_iterations;
    c.sinkhorn.marginal_tolerance = o.tolerance;
    c.metric = ot::metric_from_string(o.metric);
    c.seed = o.seed;
    c.early_stopping = o.early_stopping == "true";
    c.validate();
    return c;
}

fs::path require_out(const Options& o) {
    if (o.out.empty()) throw ConfigurationError("--out is required");
    return o.out;
}

void write_snapshot(const fs::path& out, const std::string& command, const Options& o) {
    eval::write_text(out / "config.json", snapshot(command, o).dump(2) + "\n");
}

void write_run(const fs::path& dir, const train::RunReport& r) {
    const fs::path d = dir / r.run_id();
    eval::write_text(d / "metrics.json", train::run_report_to_json(r));
    eval::write_text(d / "epochs.csv", train::epochs_csv(r));
    nn::save_checkpoint(r.params, d / "model.json");
}

void print_run(const train::RunReport& r) {
    const auto& f = r.final_metrics;
    std::printf("%-22s epoch %d  val %.4f  test %.4f  masked %.4f\n", r.run_id().c_str(), r.selected_epoch,
                f.at("val").accuracy, f.at("test").accuracy, f.at("test").masked_accuracy);
}

// Method table, subcluster table, ROC plot and embeddings for the featured runs.
void emit_reports(const fs::path& out, const std::vector<eval::RunGroup>& groups,
                  const std::vector<train::RunReport>& featured, const data::DomainDataset& ds) {
    eval::write_text(out / "tables" / "method.csv", eval::method_table_csv(groups));
    if (ds.has_subclusters()) {
        eval::write_text(out / "tables" / "subclusters.csv", eval::subcluster_table_csv(featured, ds));
    }
    eval::emit_roc_plot(featured, ds, out / "plots");
    eval::emit_embeddings(featured, ds, out / "embeddings");
}

std::vector<train::RunReport> selected_runs(const train::SweepResult& s) {
    const auto it = std::find(s.alphas.begin(), s.alphas.end(), s.selected_alpha);
    const auto a = static_cast<std::size_t>(it - s.alphas.begin());
    std::vector<train::RunReport> runs;
    for (std::size_t k = 0; k < s.seeds.size(); ++k) runs.push_back(s.run(a, k));
    return runs;
}

int cmd_gen_data(const Options& o, std::uint64_t seed) {
    const fs::path out = require_out(o);
    const auto cfg = data::default_generator_config(seed, o.samples_per_domain);
    const auto ds = data::generate(cfg);
    fs::create_directories(out);
    data::save_csv(ds, out / "dataset.csv");
    eval::write_text(out / "generator.json", data::generator_config_to_json(cfg));
    write_snapshot(out, "gen-data", o);
    std::printf("wrote %zu samples to %s\n", ds.size(), (out / "dataset.csv").string().c_str());
    return 0;
}

int cmd_train(const Options& o) {
    const fs::path out = require_out(o);
    const auto ds = load_dataset(o);
    const auto base = train_config(o);
    const auto runs = train::train_seeds(ds, base, parse_seeds(o, 1));
    write_snapshot(out, "train", o);
    eval::write_text(out / "train_config.json", train::train_config_to_json(base));
    for (const auto& r : runs) {
        write_run(out, r);
        print_run(r);
    }
    emit_reports(out, {{o.method, runs}}, runs, ds);
    return 0;
}

int cmd_sweep(const std::string& command, const Options& o) {
    const fs::path out = require_out(o);
    const auto ds = load_dataset(o);
    const auto base = train_config(o);
    const auto sweep = train::alpha_sweep(ds, base, parse_alphas(o.alphas), parse_seeds(o, 4));
    write_snapshot(out, command, o);
    eval::write_text(out / "train_config.json", train::train_config_to_json(base));
    for (const auto& r : sweep.runs) write_run(out, r);
    eval::write_text(out / "sweep.json", train::sweep_to_json(sweep));
    eval::write_text(out / "tables" / "alpha_grid.csv", eval::alpha_grid_csv(sweep));
    eval::emit_convergence_plots(sweep, out / "plots");

    std::vector<eval::RunGroup> groups;
    for (std::size_t a = 0; a < sweep.alphas.size(); ++a) {
        eval::RunGroup g{o.method, {}};
        for (std::size_t k = 0; k < sweep.seeds.size(); ++k) g.runs.push_back(sweep.run(a, k));
        groups.push_back(std::move(g));
    }
    emit_reports(out, groups, selected_runs(sweep), ds);

    for (const auto& c : sweep.cells) {
        std::printf("alpha %-8s val %s  test %s\n", train::format_alpha(c.alpha).c_str(),
                    eval::mean_std_cell(c.val_mean, c.val_std).c_str(),
                    eval::mean_std_cell(c.test_mean, c.test_std).c_str());
    }
    std::printf("selected alpha %s\n", train::format_alpha(sweep.selected_alpha).c_str());
    return 0;
}

int cmd_posthoc(const Options& o) {
    const fs::path out = require_out(o);
    const auto ds = load_dataset(o);
    auto base = train_config(o);
    base.method = train::Method::erm;
    base.alpha = 0.0;
    const auto runs = train::train_seeds(ds, base, parse_seeds(o, 4));

    write_snapshot(out, "posthoc", o);
    std::vector<posthoc::PosthocReport> reports;
    for (const auto& r : runs) {
        posthoc::PosthocConfig pc;
        pc.epsilon = o.epsilon.value_or(2.0);
        pc.metric = base.metric;
        pc.log_domain = base.sinkhorn.log_domain;
        pc.max_iterations = base.sinkhorn.max_iterations;
        pc.marginal_tolerance = base.sinkhorn.marginal_tolerance;
        pc.seed = r.config.seed;
        auto rep = posthoc::evaluate_posthoc(ds, r.params, pc);
        rep.model_seed = r.config.seed;
        write_run(out, r);
        eval::write_text(out / r.run_id() / "posthoc.json", posthoc::posthoc_report_to_json(rep));
        eval::write_text(out / r.run_id() / "posthoc.csv", posthoc::posthoc_csv(rep));
        const auto& t = rep.split("test");
        std::printf("%-22s test %.4f -> %.4f\n", r.run_id().c_str(), t.pre_accuracy, t.post_accuracy);
        reports.push_back(std::move(rep));
    }
    eval::write_text(out / "tables" / "posthoc.csv", eval::posthoc_table_csv(reports));
    emit_reports(out, {{"erm", runs}}, runs, ds);
    return 0;
}

int cmd_swap_eval(const Options& o) {
    const fs::path out = require_out(o);
    const auto original = load_dataset(o);
    const auto alphas = parse_alphas(o.alphas);
    const auto seeds = parse_seeds(o, 4);
    auto base = train_config(o);
    write_snapshot(out, "swap-eval", o);

    std::vector<eval::RunGroup> groups[2];
    const char* names[2] = {"original", "swapped"};
    for (int arm = 0; arm < 2; ++arm) {
        const auto ds = arm == 0 ? original : data::swap_val_test(original);
        const fs::path dir = out / names[arm];
        base.method = train::Method::erm;
        base.alpha = 0.0;
        groups[arm].push_back({"erm", train::train_seeds(ds, base, seeds)});
        for (auto m : {train::Method::ot, train::Method::dann}) {
            base.method = m;
            const auto sweep = train::alpha_sweep(ds, base, alphas, seeds);
            eval::write_text(dir / ("alpha_grid_" + train::to_string(m) + ".csv"), eval::alpha_grid_csv(sweep));
            groups[arm].push_back({train::to_string(m), selected_runs(sweep)});
        }
        std::vector<train::RunReport> featured;
        for (const auto& g : groups[arm]) {
            for (const auto& r : g.runs) {
                write_run(dir, r);
                featured.push_back(r);
            }
        }
        eval::write_text(dir / "tables" / "method.csv", eval::method_table_csv(groups[arm]));
        if (ds.has_subclusters()) {
            eval::write_text(dir / "tables" / "subclusters.csv", eval::subcluster_table_csv(featured, ds));
        }
    }
    const auto table = eval::swap_table_csv(groups[0], groups[1]);
    eval::write_text(out / "tables" / "swap.csv", table);
    std::fputs(table.c_str(), stdout);
    return 0;
}

// Rebuilds tables, ROC plot and embeddings from the runs saved under --in.
int cmd_report(const Options& o) {
    const fs::path out = require_out(o);
    const fs::path in = o.in.empty() ? out : fs::path(o.in);
    if (!fs::is_directory(in)) throw IoError("not a directory: " + in.string());
    std::vector<fs::path> dirs;
    for (const auto& e : fs::recursive_directory_iterator(in)) {
        if (e.is_regular_file() && e.path().filename() == "metrics.json" &&
            fs::exists(e.path().parent_path() / "model.json")) {
            dirs.push_back(e.path().parent_path());
        }
    }
    if (dirs.empty()) throw ConfigurationError("no saved runs (metrics.json + model.json) under " + in.string());
    std::sort(dirs.begin(), dirs.end());

    std::map<std::pair<std::string, double>, eval::RunGroup> grouped;
    std::vector<train::RunReport> all;
    for (const auto& d : dirs) {
        std::ifstream f(d / "metrics.json");
        std::stringstream ss;
        ss << f.rdbuf();
        auto r = train::run_report_from_json(ss.str());
        r.params = nn::load_checkpoint(d / "model.json");
        auto& g = grouped[{train::to_string(r.config.method), r.config.alpha}];
        g.label = train::to_string(r.config.method);
        g.runs.push_back(r);
        all.push_back(std::move(r));
    }
    std::vector<eval::RunGroup> groups;
    for (auto& [key, g] : grouped) groups.push_back(std::move(g));

    const auto ds = load_dataset(o);
    write_snapshot(out, "report", o);
    emit_reports(out, groups, all, ds);
    std::fputs(eval::method_table_csv(groups).c_str(), stdout);
    return 0;
}

int cmd_selftest(const Options& o) {
    const auto results = selftest::run_all();
    json j = json::array();
    bool ok = true;
    for (const auto& r : results) {
        std::printf("%s %-30s cases %4d  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.cases, r.detail.c_str());
        ok = ok && r.passed;
        j.push_back({{"name", r.name}, {"passed", r.passed}, {"cases", r.cases}, {"worst", r.worst}});
    }
    if (!o.out.empty()) {
        write_snapshot(o.out, "selftest", o);
        eval::write_text(fs::path(o.out) / "selftest.json", j.dump(2) + "\n");
    }
    if (!ok) throw NumericError("self-test failed");
    return 0;
}

std::string error_type(const std::exception& e) {
    if (dynamic_cast<const SinkhornNotConverged*>(&e)) return "SinkhornNotConverged";
    if (dynamic_cast<const NumericError*>(&e)) return "NumericError";
    if (dynamic_cast<const ParseError*>(&e)) return "ParseError";
    if (dynamic_cast<const IoError*>(&e)) return "IoError";
    if (dynamic_cast<const ConfigurationError*>(&e)) return "ConfigurationError";
    if (dynamic_cast<const ContractViolation*>(&e)) return "ContractViolation";
    if (dynamic_cast<const CLI::Error*>(&e)) return "UsageError";
    return "Error";
}

int fail(const std::exception& e, int code) {
    std::cerr << json{{"error", {{"type", error_type(e)}, {"message", e.what()}, {"exit_code", code}}}}.dump() << '\n';
    return code;
}

void add_training_flags(CLI::App* cmd, Options& o, bool with_method, bool with_alpha) {
    if (with_method) {
        cmd->add_option("--method", o.method, "erm, ot or dann")
            ->check(CLI::IsMember({"erm", "ot", "dann"}))
            ->capture_default_str();
    }
    if (with_alpha) cmd->add_option("--alpha", o.alpha, "OT weight or DANN adversary weight")->capture_default_str();
    cmd->add_option("--epsilon", o.epsilon, "Sinkhorn epsilon as a multiple of mean(C) (default 0.05)");
    cmd->add_option("--seed", o.seed, "seed of the first run")->capture_default_str();
    cmd->add_option("--seeds", o.seeds, "seed count N (seeds --seed .. --seed+N-1) or a list a,b,c");
    cmd->add_option("--epochs", o.epochs)->capture_default_str();
    cmd->add_option("--batch-size", o.batch_size)->capture_default_str();
    cmd->add_option("--lr", o.lr)->capture_default_str();
    cmd->add_option("--momentum", o.momentum)->capture_default_str();
    cmd->add_option("--weight-decay", o.weight_decay)->capture_default_str();
    cmd->add_option("--metric", o.metric)->check(CLI::IsMember({"euclidean", "squared"}))->capture_default_str();
    cmd->add_option("--log-domain", o.log_domain)->check(CLI::IsMember({"true", "false"}))->capture_default_str();
    cmd->add_option("--max-iterations", o.max_iterations, "Sinkhorn iteration budget")->capture_default_str();
    cmd->add_option("--tolerance", o.tolerance, "Sinkhorn marginal tolerance")->capture_default_str();
    cmd->add_option("--early-stopping", o.early_stopping)
        ->check(CLI::IsMember({"true", "false"}))
        ->capture_default_str();
}

void add_data_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--data", o.data, "dataset directory or CSV (default: generate the benchmark)");
    cmd->add_option("--data-seed", o.data_seed, "benchmark seed when --data is not given")->capture_default_str();
    cmd->add_option("--samples-per-domain", o.samples_per_domain)->capture_default_str();
    cmd->add_flag("--swap-val-test", o.swap_val_test, "exchange the val and test domains");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"OT-regularized domain adaptation experiments"};
    app.require_subcommand(1);
    Options o;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic benchmark");
    gen->add_option("--seed", o.seed)->capture_default_str();
    gen->add_option("--samples-per-domain", o.samples_per_domain)->capture_default_str();

    auto* tr = app.add_subcommand("train", "train one configuration over one or more seeds");
    add_training_flags(tr, o, true, true);
    add_data_flags(tr, o);

    auto* sw = app.add_subcommand("sweep", "alpha sweep with validation-based selection");
    add_training_flags(sw, o, true, false);
    add_data_flags(sw, o);
    sw->add_option("--alphas", o.alphas, "comma-separated alpha grid")->capture_default_str();

    auto* dn = app.add_subcommand("dann", "domain-adversarial baseline: alpha sweep with method dann");
    add_training_flags(dn, o, false, false);
    add_data_flags(dn, o);
    dn->add_option("--alphas", o.alphas, "comma-separated alpha grid")->capture_default_str();

    auto* ph = app.add_subcommand("posthoc", "ERM followed by barycentric alignment of frozen features");
    add_training_flags(ph, o, false, false);
    add_data_flags(ph, o);
    ph->get_option("--epsilon")->description("absolute alignment epsilon in feature units (default 2)");

    auto* se = app.add_subcommand("swap-eval", "ERM / OT / DANN on the original and swapped val-test split");
    add_training_flags(se, o, false, false);
    add_data_flags(se, o);
    se->add_option("--alphas", o.alphas, "alpha grid for OT and DANN")->capture_default_str();

    auto* rp = app.add_subcommand("report", "rebuild tables and plots from saved runs");
    rp->add_option("--in", o.in, "directory holding saved runs (default --out)");
    add_data_flags(rp, o);

    auto* st = app.add_subcommand("selftest", "oracle suites: brute-force OT, gradient checks, AUC");

    for (auto* cmd : {gen, tr, sw, dn, ph, se, rp, st}) {
        cmd->add_option("--out", o.out, "output directory");
        cmd->add_option("--config", o.config, "JSON config file; its values override the flags");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(e, 1);
    }

    const auto* sub = app.get_subcommands().front();
    const std::string command = sub->get_name();
    try {
        if (command == "sweep" && sub->count("--method") == 0) o.method = "ot";
        if (!o.config.empty()) apply_config_file(command, o);
        if (command == "dann") o.method = "dann";
        if (command == "gen-data") return cmd_gen_data(o, o.seed);
        if (command == "train") return cmd_train(o);
        if (command == "sweep" || command == "dann") return cmd_sweep(command, o);
        if (command == "posthoc") return cmd_posthoc(o);
        if (command == "swap-eval") return cmd_swap_eval(o);
        if (command == "report") return cmd_report(o);
        if (command == "selftest") return cmd_selftest(o);
        throw ContractViolation("unknown subcommand " + command);
    } catch (const NumericError& e) {
        return fail(e, 2);
    } catch (const std::exception& e) {
        return fail(e, 1);
    }
}
