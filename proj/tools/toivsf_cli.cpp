#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "toivsf/checkpoint.hpp"
#include "toivsf/config.hpp"
#include "toivsf/errors.hpp"
#include "toivsf/eval.hpp"
#include "toivsf/gradient_suite.hpp"
#include "toivsf/ops.hpp"

using namespace toivsf;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kConfig = 2, kNumeric = 3, kIo = 4 };

struct Overrides {
    std::optional<std::size_t> epochs;
    std::optional<double> k;
    std::optional<double> alpha;
    std::optional<double> lr;
    std::optional<std::size_t> window_stride;
    std::optional<std::size_t> draws;
    std::vector<std::uint64_t> seeds;

    void attach(CLI::App* cmd) {
        cmd->add_option("--epochs", epochs, "override train.epochs");
        cmd->add_option("--k", k, "override train.k");
        cmd->add_option("--alpha", alpha, "override train.alpha (beta = 1 - alpha)");
        cmd->add_option("--lr", lr, "override train.lr");
        cmd->add_option("--window-stride", window_stride, "override train.window_stride");
        cmd->add_option("--draws", draws, "override eval.subset_draws");
        cmd->add_option("--seeds", seeds, "override train.seeds")->delimiter(',');
    }
};

RunConfig effective_config(const fs::path& path, const Overrides& o) {
    RunConfig cfg = load_run_config(path);
    if (o.epochs) cfg.train.epochs = *o.epochs;
    if (o.k) cfg.train.k = *o.k;
    if (o.alpha) {
        cfg.train.alpha = *o.alpha;
        cfg.train.beta = 1.0 - *o.alpha;
    }
    if (o.lr) cfg.train.lr = *o.lr;
    if (o.window_stride) cfg.train.window_stride = *o.window_stride;
    if (o.draws) cfg.eval.subset_draws = *o.draws;
    if (!o.seeds.empty()) cfg.seeds = o.seeds;
    if (const char* env = std::getenv("TOI_SEED")) {
        char* end = nullptr;
        const unsigned long long s = std::strtoull(env, &end, 10);
        if (!*env || *end) throw ConfigError(std::string("TOI_SEED must be a non-negative integer, got '") + env + "'");
        cfg.seeds = {s};
    }
    cfg.train.seed = cfg.seeds.front();
    cfg.finalize();
    return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

Json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(path.string() + " is not valid JSON: " + e.what());
    }
}

fs::path seed_dir(const fs::path& root, std::uint64_t seed) { return root / ("seed-" + std::to_string(seed)); }

std::string value_tag(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

std::string file_label(std::string s) {
    for (char& c : s)
        if (c == ':') c = '_';
    return s;
}

EpochCallback progress(bool verbose, std::uint64_t seed) {
    if (!verbose) return {};
    return [seed](const EpochRecord& e) {
        std::fprintf(stderr, "seed %llu epoch %zu train %.6f valid %.6f\n", static_cast<unsigned long long>(seed),
                     e.epoch, e.train.total, e.valid_loss);
    };
}

// Trains every seed into out_dir/seed-<s>/ and returns the per-seed records.
Json train_all(const RunConfig& cfg, const PreparedDataset& data, const std::string& mode, const fs::path& out_dir,
               bool verbose) {
    Json seeds = Json::array();
    for (std::uint64_t seed : cfg.seeds) {
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        TrainedModels models = mode == "pretrain" ? pretrain_then_freeze(data, tc, progress(verbose, seed))
                                                  : train_joint(data, tc, progress(verbose, seed));
        add_reference(models, data, tc, progress(verbose, seed));
        save_models(seed_dir(out_dir, seed), models, tc, data.num_vars());
        Json records = Json::array();
        for (const RunRecord& r : models.records) records.push_back(to_json(r));
        seeds.push_back(Json{{"seed", seed}, {"dir", seed_dir(out_dir, seed).filename().string()}, {"records", records}});
    }
    return seeds;
}

Json dataset_summary(const PreparedDataset& d) {
    return Json{{"length", d.raw.length()},
                {"num_vars", d.num_vars()},
                {"train_rows", {d.splits.train.begin, d.splits.train.end}},
                {"valid_rows", {d.splits.valid.begin, d.splits.valid.end}},
                {"test_rows", {d.splits.test.begin, d.splits.test.end}},
                {"windows", {d.windows.train.size(), d.windows.valid.size(), d.windows.test.size()}},
                {"warnings", d.windows.warnings}};
}

std::vector<Setting> parse_settings(const std::vector<std::string>& names) {
    std::vector<Setting> out;
    for (const std::string& n : names) out.push_back(Setting::parse(n));
    return out;
}

struct LoadedSeeds {
    std::vector<TrainedModels> models;
    std::vector<SeedModels> runs;
};

LoadedSeeds load_seeds(const RunConfig& cfg, const fs::path& ckpt_dir, std::size_t num_vars) {
    LoadedSeeds out;
    out.models.reserve(cfg.seeds.size());
    for (std::uint64_t seed : cfg.seeds) out.models.push_back(load_models(seed_dir(ckpt_dir, seed), cfg.train, num_vars));
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) out.runs.push_back({cfg.seeds[i], &out.models[i]});
    return out;
}

// Report files for one or more k values: report.json, report.txt, report.csv
// and one manifest per setting and k.
void write_reports(const fs::path& out_dir, const RunConfig& cfg, const std::vector<MetricsReport>& reports) {
    Json j = Json{{"config", to_json(cfg)}, {"reports", Json::array()}};
    std::string text, csv;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const MetricsReport& r = reports[i];
        j["reports"].push_back(r.to_json());
        text += r.to_text() + "\n";
        csv += r.to_csv(i == 0);
        for (const SettingReport& s : r.settings) {
            write_file(out_dir / "manifests" / ("k" + value_tag(r.k)) / (file_label(s.setting) + ".txt"), s.manifest);
        }
    }
    write_file(out_dir / "report.json", j.dump(2) + "\n");
    write_file(out_dir / "report.txt", text);
    write_file(out_dir / "report.csv", csv);
}

int cmd_synth(const fs::path& out, const SynthConfig& s) {
    write_csv(out, synth_generate(s));
    std::printf("wrote %s (%zu x %zu)\n", out.string().c_str(), s.length, s.n_vars);
    return kOk;
}

int cmd_train(const fs::path& config, const Overrides& o, const fs::path& out_dir, const std::string& mode,
              bool verbose) {
    if (mode != "joint" && mode != "pretrain") throw ConfigError("--mode must be joint or pretrain, got '" + mode + "'");
    RunConfig cfg = effective_config(config, o);
    PreparedDataset data = load_dataset(cfg.dataset);
    Json seeds = train_all(cfg, data, mode, out_dir, verbose);
    Json manifest{{"command", "train"},
                  {"mode", mode},
                  {"config", to_json(cfg)},
                  {"dataset", dataset_summary(data)},
                  {"seeds", seeds}};
    write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
    std::printf("trained %zu seed(s) in %s mode into %s\n", cfg.seeds.size(), mode.c_str(), out_dir.string().c_str());
    return kOk;
}

int cmd_eval(const fs::path& config, const Overrides& o, const fs::path& ckpt_dir, fs::path out_dir,
             const std::vector<std::string>& settings_flag, const std::vector<double>& k_flag) {
    RunConfig cfg = effective_config(config, o);
    if (!settings_flag.empty()) cfg.eval.settings = settings_flag;
    if (!k_flag.empty()) cfg.eval.k_values = k_flag;
    cfg.finalize();
    if (out_dir.empty()) out_dir = ckpt_dir;
    const auto settings = parse_settings(cfg.eval.settings);
    PreparedDataset data = load_dataset(cfg.dataset);
    LoadedSeeds seeds = load_seeds(cfg, ckpt_dir, data.num_vars());
    EvalOptions opt;
    opt.draws = cfg.eval.subset_draws;
    opt.dataset_label = cfg.dataset.synth ? "synthetic" : fs::path(cfg.dataset.path).stem().string();
    std::vector<MetricsReport> reports = k_sweep(data, seeds.runs, settings, cfg.eval.k_values, opt);
    write_reports(out_dir, cfg, reports);
    for (const MetricsReport& r : reports) std::cout << r.to_text() << "\n";
    return kOk;
}

// One sweep cell: train every seed at the axis value, evaluate, write result.json last.
void run_cell(RunConfig cfg, const std::string& axis, double value, const fs::path& cell_dir, bool verbose) {
    std::vector<std::string> settings = cfg.eval.settings;
    if (axis == "k") {
        cfg.train.k = value;
    } else {
        cfg.train.alpha = value;
        cfg.train.beta = 1.0 - value;
        settings = {"toi"};
    }
    cfg.eval.k_values = {cfg.train.k};
    cfg.eval.settings = settings;
    cfg.finalize();
    PreparedDataset data = load_dataset(cfg.dataset);
    const bool needs_reference = std::any_of(settings.begin(), settings.end(), [](const std::string& s) { return s != "toi"; });
    std::vector<TrainedModels> trained;
    for (std::uint64_t seed : cfg.seeds) {
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        trained.push_back(train_joint(data, tc, progress(verbose, seed)));
        if (needs_reference) add_reference(trained.back(), data, tc, progress(verbose, seed));
        save_models(seed_dir(cell_dir, seed), trained.back(), tc, data.num_vars());
    }
    std::vector<SeedModels> runs;
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) runs.push_back({cfg.seeds[i], &trained[i]});
    EvalOptions opt;
    opt.k = cfg.train.k;
    opt.draws = cfg.eval.subset_draws;
    MetricsReport report = run_settings(data, runs, parse_settings(settings), opt);
    for (const SettingReport& s : report.settings) write_file(cell_dir / "manifests" / (file_label(s.setting) + ".txt"), s.manifest);
    write_file(cell_dir / "result.json",
               Json{{"axis", axis}, {"value", value}, {"config", to_json(cfg)}, {"report", report.to_json()}}.dump(2) + "\n");
}

int exit_code_for(const std::exception& e);

int cmd_sweep(const fs::path& config, const Overrides& o, const std::string& axis, const std::vector<double>& values,
              const fs::path& out_dir, std::size_t parallel, bool verbose) {
    if (axis != "k" && axis != "alpha") throw ConfigError("--axis must be k or alpha, got '" + axis + "'");
    if (values.empty()) throw ConfigError("--values needs at least one value");
    for (double v : values) {
        if (axis == "alpha" && (v < 0 || v > 1)) throw ConfigError("alpha values must lie in [0, 1], got " + value_tag(v));
        if (axis == "k" && (!(v > 0) || v > 1)) throw ConfigError("k values must lie in (0, 1], got " + value_tag(v));
    }
    if (parallel < 1) throw ConfigError("--parallel must be >= 1");
    const RunConfig cfg = effective_config(config, o);
    parse_settings(cfg.eval.settings);

    auto cell_dir = [&](double v) { return out_dir / "cells" / (axis + "-" + value_tag(v)); };
    std::vector<double> pending;
    for (double v : values) {
        if (fs::exists(cell_dir(v) / "result.json")) {
            std::fprintf(stderr, "cell %s=%s already complete, skipping\n", axis.c_str(), value_tag(v).c_str());
        } else {
            pending.push_back(v);
        }
    }

    if (parallel == 1) {
        for (double v : pending) run_cell(cfg, axis, v, cell_dir(v), verbose);
    } else {
        std::fflush(nullptr);
        std::size_t next = 0, running = 0;
        int worst = kOk;
        while (next < pending.size() || running > 0) {
            while (running < parallel && next < pending.size()) {
                const double v = pending[next++];
                const pid_t pid = fork();
                if (pid < 0) throw IoError("fork failed");
                if (pid == 0) {
                    int code = kOk;
                    try {
                        run_cell(cfg, axis, v, cell_dir(v), verbose);
                    } catch (const std::exception& e) {
                        std::fprintf(stderr, "cell %s=%s: %s\n", axis.c_str(), value_tag(v).c_str(), e.what());
                        code = exit_code_for(e);
                    }
                    std::fflush(nullptr);
                    _exit(code);
                }
                ++running;
            }
            int status = 0;
            if (wait(&status) > 0) {
                --running;
                const int code = WIFEXITED(status) ? WEXITSTATUS(status) : 1;
                if (code != kOk && worst == kOk) worst = code;
            }
        }
        if (worst != kOk) return worst;
    }

    // assemble the table from the cell results in value order
    Json cells = Json::array();
    std::string csv = axis;
    bool header_done = false;
    std::string rows;
    for (double v : values) {
        Json r = read_json(cell_dir(v) / "result.json");
        cells.push_back(r);
        const Json& rep = r.at("report");
        if (!header_done) {
            for (const Json& s : rep.at("settings")) {
                const std::string name = s.at("setting").get<std::string>();
                csv += "," + name + "_mae_mean," + name + "_mae_std," + name + "_rmse_mean," + name + "_rmse_std";
            }
            csv += "\n";
            header_done = true;
        }
        rows += value_tag(v);
        for (const Json& s : rep.at("settings")) {
            for (const char* key : {"mae_mean", "mae_std", "rmse_mean", "rmse_std"}) {
                char buf[40];
                std::snprintf(buf, sizeof buf, ",%.10g", s.at(key).get<double>());
                rows += buf;
            }
        }
        rows += "\n";
    }
    write_file(out_dir / "sweep.csv", csv + rows);
    write_file(out_dir / "sweep.json", Json{{"axis", axis}, {"values", values}, {"cells", cells}}.dump(2) + "\n");
    std::cout << csv << rows;
    return kOk;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& ops_flag, double tolerance, const std::string& fault) {
    std::vector<std::string> ops;
    if (ops_flag == "all") {
        ops = gradient_suite_ops();
    } else {
        std::stringstream ss(ops_flag);
        for (std::string op; std::getline(ss, op, ',');)
            if (!op.empty()) ops.push_back(op);
    }
    if (!fault.empty()) testing::set_gradient_fault(fault);
    const auto rows = run_gradient_suite(seed, ops, real(tolerance));
    testing::clear_gradient_fault();
    std::printf("%-24s %6s %8s %6s %14s  %s\n", "op", "cases", "coords", "kinks", "max_rel_error", "result");
    std::vector<std::string> failed;
    for (const SuiteRow& r : rows) {
        std::printf("%-24s %6zu %8zu %6zu %14.3e  %s\n", r.op.c_str(), r.cases, r.coords, r.kinks, double(r.max_rel_error),
                    r.passed ? "pass" : "FAIL");
        if (!r.passed) failed.push_back(r.op);
    }
    if (failed.empty()) return kOk;
    std::string names;
    for (const auto& f : failed) names += (names.empty() ? "" : ", ") + f;
    std::fprintf(stderr, "gradient check failed for: %s\n", names.c_str());
    return kNumeric;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DimensionError*>(&e)) return kConfig;
    if (dynamic_cast<const NumericError*>(&e) || dynamic_cast<const DomainError*>(&e)) return kNumeric;
    if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const CheckpointError*>(&e) ||
        dynamic_cast<const ParseError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e))
        return kIo;
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Variable subset forecasting with task-oriented imputation"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "per-epoch progress on stderr");

    SynthConfig synth;
    fs::path synth_out;
    auto* s = app.add_subcommand("synth", "write a synthetic latent-factor dataset as CSV");
    s->add_option("--out", synth_out, "output CSV")->required();
    s->add_option("--n-vars", synth.n_vars);
    s->add_option("--latents", synth.n_latents);
    s->add_option("--length", synth.length);
    s->add_option("--noise", synth.noise_std);
    s->add_option("--neg-frac", synth.neg_fraction);
    s->add_option("--seed", synth.seed);

    fs::path config, out_dir, ckpt_dir;
    std::string mode = "joint";
    Overrides overrides;
    auto* t = app.add_subcommand("train", "train imputer, forecaster and reference forecaster per seed");
    t->add_option("--config", config)->required();
    t->add_option("--out-dir", out_dir)->required();
    t->add_option("--mode", mode, "joint or pretrain");
    overrides.attach(t);

    std::vector<std::string> settings;
    std::vector<double> k_values;
    auto* e = app.add_subcommand("eval", "score trained checkpoints on the test split");
    e->add_option("--config", config)->required();
    e->add_option("--ckpt-dir", ckpt_dir)->required();
    e->add_option("--out-dir", out_dir, "report directory (default: --ckpt-dir)");
    e->add_option("--settings", settings, "partial,oracle,toi,imputed_reference,baseline:<name>")->delimiter(',');
    e->add_option("--k-values", k_values)->delimiter(',');
    overrides.attach(e);

    std::string axis;
    std::vector<double> values;
    std::size_t parallel = 1;
    auto* w = app.add_subcommand("sweep", "train and score one cell per axis value; completed cells are reused");
    w->add_option("--config", config)->required();
    w->add_option("--axis", axis, "k or alpha")->required();
    w->add_option("--values", values)->required()->delimiter(',');
    w->add_option("--out-dir", out_dir)->required();
    w->add_option("--parallel", parallel, "cells run as separate worker processes");
    overrides.attach(w);

    std::uint64_t gc_seed = 0;
    std::string ops = "all";
    double tolerance = 1e-4;
    std::string fault;
    auto* g = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
    g->add_option("--seed", gc_seed);
    g->add_option("--ops", ops, "all or a comma list");
    g->add_option("--tolerance", tolerance);
    g->add_option("--inject-fault", fault, "corrupt the named op's gradient rule (checker self-test)")
        ->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& ok) {
        return app.exit(ok);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return kConfig;
    }

    try {
        if (*s) return cmd_synth(synth_out, synth);
        if (*t) return cmd_train(config, overrides, out_dir, mode, verbose);
        if (*e) return cmd_eval(config, overrides, ckpt_dir, out_dir, settings, k_values);
        if (*w) return cmd_sweep(config, overrides, axis, values, out_dir, parallel, verbose);
        if (*g) return cmd_gradcheck(gc_seed, ops, tolerance, fault);
    } catch (const std::exception& ex) {
        std::fprintf(stderr, "error: %s\n", ex.what());
        return exit_code_for(ex);
    }
    return kOk;
}
