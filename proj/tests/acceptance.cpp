// Acceptance run: one PASS/FAIL/SKIP line per criterion, nonzero exit on any FAIL.
// Usage: acceptance <cli-binary> [--only 1,2,...]

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "toivsf/checkpoint.hpp"
#include "toivsf/config.hpp"
#include "toivsf/errors.hpp"
#include "toivsf/eval.hpp"
#include "toivsf/gradient_suite.hpp"

using namespace toivsf;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

enum class Verdict { Pass, Fail, Skip };

struct Outcome {
    Verdict verdict;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<Setting> parse_all(const std::vector<std::string>& names) {
    std::vector<Setting> out;
    for (const auto& n : names) out.push_back(Setting::parse(n));
    return out;
}

// per-seed mean over draws
double seed_mean(const SettingReport& r, std::uint64_t seed) {
    double s = 0;
    std::size_t c = 0;
    for (const RunScore& run : r.runs) {
        if (run.seed == seed) {
            s += run.mae;
            ++c;
        }
    }
    return s / double(c);
}

fs::path g_source_dir = TOIVSF_SOURCE_DIR;
fs::path g_cli;
fs::path g_scratch;

// ---------------------------------------------------------------------------
// Shared synthetic setup: N=20, 3 latents, T=3000, k=0.15, 5 seeds.

struct SyntheticRuns {
    RunConfig cfg;
    PreparedDataset data;
    std::vector<TrainedModels> joint;
    std::vector<TrainedModels> frozen;
    std::vector<double> joint_seconds;
    MetricsReport report;  // all settings, k = 0.15
};

SyntheticRuns& synthetic(bool with_ablation) {
    static SyntheticRuns runs;
    static bool trained = false, ablated = false;
    if (!trained) {
        runs.cfg = load_run_config(g_source_dir / "configs" / "synthetic.json");
        runs.data = load_dataset(runs.cfg.dataset);
        for (std::uint64_t seed : runs.cfg.seeds) {
            TrainConfig tc = runs.cfg.train;
            tc.seed = seed;
            const auto t0 = Clock::now();
            runs.joint.push_back(train_joint(runs.data, tc));
            add_reference(runs.joint.back(), runs.data, tc);
            runs.joint_seconds.push_back(seconds_since(t0));
            std::fprintf(stderr, "  synthetic seed %llu trained in %.0f s\n", static_cast<unsigned long long>(seed),
                         runs.joint_seconds.back());
        }
        std::vector<SeedModels> sm;
        for (std::size_t i = 0; i < runs.joint.size(); ++i) sm.push_back({runs.cfg.seeds[i], &runs.joint[i]});
        EvalOptions opt;
        opt.k = runs.cfg.train.k;
        opt.draws = runs.cfg.eval.subset_draws;
        opt.dataset_label = "synthetic";
        runs.report = run_settings(runs.data, sm, parse_all(runs.cfg.eval.settings), opt);
        std::fprintf(stderr, "%s", runs.report.to_text().c_str());
        trained = true;
    }
    if (with_ablation && !ablated) {
        for (std::uint64_t seed : runs.cfg.seeds) {
            TrainConfig tc = runs.cfg.train;
            tc.seed = seed;
            runs.frozen.push_back(pretrain_then_freeze(runs.data, tc));
        }
        ablated = true;
    }
    return runs;
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
    const auto t0 = Clock::now();
    std::string worst_op;
    real worst = 0;
    std::vector<std::string> failed;
    std::size_t cases = 0;
    for (std::uint64_t seed : {0ULL, 1ULL}) {
        for (const SuiteRow& r : run_gradient_suite(seed, gradient_suite_ops())) {
            cases += r.cases;
            if (r.max_rel_error >= worst) {
                worst = r.max_rel_error;
                worst_op = r.op;
            }
            if (!r.passed) failed.push_back(r.op);
        }
    }
    const double secs = seconds_since(t0);
    std::string d = std::to_string(gradient_suite_ops().size()) + " ops, " + std::to_string(cases) +
                    " cases, worst rel err " + fmt("%.2e", worst) + " (" + worst_op + "), " + fmt("%.1f", secs) + " s";
    if (!failed.empty()) return {Verdict::Fail, d + "; failing: " + failed.front()};
    if (secs > 60) return {Verdict::Fail, d + " exceeds 60 s"};
    return {Verdict::Pass, d};
}

Outcome criterion2() {
    struct Row {
        double ref, ours, want;
        bool subset;
    };
    const Row rows[] = {{5.57, 4.34, 22.08, true}, {18.57, 11.40, 38.61, true}, {5.04, 4.34, 13.89, false},
                        {2.94, 2.26, 23.13, false}};
    std::string d;
    bool ok = true;
    for (const Row& r : rows) {
        const double got = r.subset ? delta_subset(r.ref, r.ours) : delta_improve(r.ref, r.ours);
        ok = ok && std::abs(got - r.want) <= 0.01;
        d += fmt("%.2f", got) + "% ";
    }
    return {ok ? Verdict::Pass : Verdict::Fail, "computed " + d + "(want 22.08 38.61 13.89 23.13)"};
}

Outcome criterion3() {
    SyntheticRuns& s = synthetic(false);
    const double toi = s.report.at("toi").mae_mean;
    const double partial = s.report.at("partial").mae_mean;
    const double gauss = s.report.at("baseline:gaussian_fill").mae_mean;
    double slowest = 0;
    for (double t : s.joint_seconds) slowest = std::max(slowest, t);
    const bool ok = toi <= 0.90 * partial && toi <= gauss && slowest <= 600;
    return {ok ? Verdict::Pass : Verdict::Fail,
            "TOI " + fmt("%.4f", toi) + " / partial " + fmt("%.4f", partial) + " = " + fmt("%.3f", toi / partial) +
                " (need <= 0.90); gaussian_fill " + fmt("%.4f", gauss) + "; slowest seed " + fmt("%.0f", slowest) +
                " s"};
}

Outcome criterion4() {
    SyntheticRuns& s = synthetic(true);
    std::vector<SeedModels> joint, frozen;
    for (std::size_t i = 0; i < s.cfg.seeds.size(); ++i) {
        joint.push_back({s.cfg.seeds[i], &s.joint[i]});
        frozen.push_back({s.cfg.seeds[i], &s.frozen[i]});
    }
    EvalOptions opt;
    opt.k = s.cfg.train.k;
    opt.draws = s.cfg.eval.subset_draws;
    const MetricsReport rj = run_settings(s.data, joint, parse_all({"toi"}), opt);
    const MetricsReport rf = run_settings(s.data, frozen, parse_all({"toi"}), opt);
    std::size_t wins = 0;
    std::string d;
    for (std::uint64_t seed : s.cfg.seeds) {
        const double a = seed_mean(rj.at("toi"), seed), b = seed_mean(rf.at("toi"), seed);
        wins += a <= b;
        d += fmt("%.3f", a) + "/" + fmt("%.3f", b) + " ";
    }
    return {wins >= 4 ? Verdict::Pass : Verdict::Fail,
            "joint <= frozen in " + std::to_string(wins) + "/5 seeds (joint/frozen MAE " + d + ")"};
}

Outcome criterion5() {
    const char* path = std::getenv("TOI_ETTH1_CSV");
    if (!path || !fs::exists(path)) return {Verdict::Skip, "set TOI_ETTH1_CSV to an ETTh1.csv file to run"};
    RunConfig cfg = load_run_config(g_source_dir / "configs" / "etth1.json");
    cfg.dataset.path = path;
    cfg.finalize();
    PreparedDataset data = load_dataset(cfg.dataset);
    if (data.num_vars() != 7) return {Verdict::Fail, "expected 7 variables, found " + std::to_string(data.num_vars())};
    const std::size_t s = subset_size(7, cfg.train.k);
    std::vector<TrainedModels> models;
    std::vector<SeedModels> sm;
    for (std::uint64_t seed : cfg.seeds) {
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        models.push_back(train_joint(data, tc));
        add_reference(models.back(), data, tc);
    }
    for (std::size_t i = 0; i < models.size(); ++i) sm.push_back({cfg.seeds[i], &models[i]});
    EvalOptions opt;
    opt.k = cfg.train.k;
    opt.draws = cfg.eval.subset_draws;
    MetricsReport r = run_settings(data, sm, parse_all({"partial", "toi"}), opt);
    std::size_t wins = 0;
    for (std::uint64_t seed : cfg.seeds) wins += seed_mean(r.at("toi"), seed) < seed_mean(r.at("partial"), seed);
    return {wins >= 4 ? Verdict::Pass : Verdict::Fail,
            "S=" + std::to_string(s) + ", TOI < partial in " + std::to_string(wins) + "/" +
                std::to_string(cfg.seeds.size()) + " seeds (means " + fmt("%.3f", r.at("toi").mae_mean) + " vs " +
                fmt("%.3f", r.at("partial").mae_mean) + ")"};
}

Outcome criterion6() {
    RunConfig cfg = load_run_config(g_source_dir / "configs" / "synthetic.json");
    PreparedDataset data = load_dataset(cfg.dataset);
    const std::vector<double> alphas{0, 0.25, 0.5, 0.75, 1};
    EvalOptions opt;
    opt.k = cfg.train.k;
    opt.draws = cfg.eval.subset_draws;
    auto rows = weight_sweep(data, cfg.train, cfg.seeds, alphas, opt);
    std::size_t interior = 0;
    std::string d;
    for (std::uint64_t seed : cfg.seeds) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < rows.size(); ++i)
            if (seed_mean(rows[i].report.at("toi"), seed) < seed_mean(rows[best].report.at("toi"), seed)) best = i;
        interior += best > 0 && best + 1 < rows.size();
        d += fmt("%.2f", alphas[best]) + " ";
    }
    std::string means;
    for (const auto& r : rows) means += fmt("%.3f", r.report.at("toi").mae_mean) + " ";
    return {interior >= 4 ? Verdict::Pass : Verdict::Fail,
            "best alpha per seed: " + d + "(interior in " + std::to_string(interior) + "/5); mean MAE by alpha " +
                means + "(" + std::to_string(cfg.train.epochs) + " epochs)"};
}

Outcome criterion7() {
    SyntheticRuns& s = synthetic(false);
    std::vector<SeedModels> sm;
    for (std::size_t i = 0; i < 3; ++i) sm.push_back({s.cfg.seeds[i], &s.joint[i]});
    EvalOptions opt;
    opt.draws = s.cfg.eval.subset_draws;
    auto reports = k_sweep(s.data, sm, parse_all({"partial", "toi"}), {0.15, 0.3, 0.5}, opt);
    const double toi_up = reports[0].at("toi").mae_mean - reports[2].at("toi").mae_mean;
    const double partial_up = reports[0].at("partial").mae_mean - reports[2].at("partial").mae_mean;
    std::fprintf(stderr, "%s", sweep_table("k", {0.15, 0.3, 0.5}, reports).c_str());
    return {toi_up < partial_up ? Verdict::Pass : Verdict::Fail,
            "MAE increase k=0.5 -> 0.15: TOI " + fmt("%.4f", toi_up) + " vs partial " + fmt("%.4f", partial_up)};
}

Outcome criterion8() {
    std::string d;
    bool ok = true;
    PreparedDataset data = [] {
        SynthConfig sc;
        sc.n_vars = 8;
        sc.length = 400;
        return prepare_dataset(synth_generate(sc), 12, 12);
    }();
    RunConfig cfg = load_run_config(g_source_dir / "configs" / "synthetic.json");
    TrainConfig tc = cfg.train;
    tc.alpha = 1;
    tc.beta = 0;
    {
        Rng rng(5);
        auto imp = make_imputer(tc, data.num_vars(), rng);
        auto fc = make_forecaster(tc, data.num_vars(), rng);
        auto snapshot = [](const ParameterStore& s) {
            std::vector<real> v;
            for (const Parameter& p : s.items()) v.insert(v.end(), p.tensor.values().begin(), p.tensor.values().end());
            return v;
        };
        const auto before = snapshot(fc->params());
        std::vector<Parameter*> ps;
        for (Parameter& p : imp->params().items()) ps.push_back(&p);
        for (Parameter& p : fc->params().items()) ps.push_back(&p);
        Adam opt(ps, AdamConfig{});
        WindowBatch b = gather_windows(data.normalized,
                                       std::span<const std::size_t>(data.windows.train).subspan(0, 16), 12, 12);
        for (int i = 0; i < 5; ++i) joint_step(b, sample_subset_tagged(data.num_vars(), 0.25, 40 + i), *imp, *fc, opt, tc);
        const bool same = snapshot(fc->params()) == before;
        ok &= same;
        d += std::string("beta=0 forecaster ") + (same ? "bit-identical" : "CHANGED");
    }
    {
        TrainConfig small = tc;
        small.alpha = small.beta = 0.5;
        small.epochs = 2;
        TrainedModels m = train_joint(data, small);
        add_reference(m, data, small);
        EvalOptions opt;
        opt.k = 1.0;
        opt.draws = 3;
        MetricsReport r = run_settings(data, {{0, &m}}, parse_all({"partial", "oracle"}), opt);
        bool equal = r.at("partial").runs.size() == r.at("oracle").runs.size();
        for (std::size_t i = 0; equal && i < r.at("partial").runs.size(); ++i) {
            equal = r.at("partial").runs[i].mae == r.at("oracle").runs[i].mae &&
                    r.at("partial").runs[i].rmse == r.at("oracle").runs[i].rmse;
        }
        equal = equal && r.at("partial").manifest == r.at("oracle").manifest;
        ok &= equal;
        d += std::string("; k=1 partial ") + (equal ? "== oracle" : "!= oracle");
    }
    {
        TrainStats st = compute_train_stats(data);
        WindowBatch b = gather_windows(data.raw, data.windows.test, 12, 12);
        std::size_t identity = 0;
        for (const std::string& name : baseline_names()) {
            Rng rng(1);
            Tensor filled = fill_baseline(name, b.lookback, full_mask(data.num_vars()), st, rng);
            identity += std::equal(filled.values().begin(), filled.values().end(), b.lookback.values().begin());
        }
        ok &= identity == baseline_names().size();
        d += "; full-mask fillers identity " + std::to_string(identity) + "/" + std::to_string(baseline_names().size());
    }
    return {ok ? Verdict::Pass : Verdict::Fail, d};
}

int run(const std::string& cmd) {
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Outcome criterion9() {
    const fs::path root = g_scratch / "determinism";
    fs::remove_all(root);
    fs::create_directories(root);
    const fs::path config = root / "config.json";
    {
        Json j = Json::parse(slurp(g_source_dir / "configs" / "synthetic.json"));
        j["dataset"]["synth"]["n_vars"] = 8;
        j["dataset"]["synth"]["length"] = 500;
        j["train"]["epochs"] = 3;
        j["train"]["seeds"] = {0, 1};
        j["eval"]["subset_draws"] = 3;
        std::ofstream(config) << j.dump(2);
    }
    const std::string cli = g_cli.string();
    for (const char* run_name : {"a", "b"}) {
        const fs::path dir = root / run_name;
        const std::string q = "'" + config.string() + "'";
        if (run(cli + " train --config " + q + " --out-dir '" + dir.string() + "' > /dev/null") != 0 ||
            run(cli + " eval --config " + q + " --ckpt-dir '" + dir.string() + "' > /dev/null") != 0) {
            return {Verdict::Fail, "CLI train/eval failed"};
        }
    }
    const std::string ra = slurp(root / "a" / "report.json"), rb = slurp(root / "b" / "report.json");
    bool ok = !ra.empty() && ra == rb;
    std::string d = std::string("rerun report.json ") + (ok ? "byte-identical" : "DIFFERS");

    // checkpoint reload gives the same forward pass to the last bit
    RunConfig cfg = load_run_config(config);
    PreparedDataset data = load_dataset(cfg.dataset);
    TrainConfig tc = cfg.train;
    TrainedModels live = train_joint(data, tc);
    add_reference(live, data, tc);
    save_models(root / "roundtrip", live, tc, data.num_vars());
    TrainedModels loaded = load_models(root / "roundtrip", tc, data.num_vars());
    WindowBatch b = gather_windows(data.normalized, data.windows.test, data.lookback, data.horizon);
    SubsetBatch sb = apply_mask(b, eval_subset(0, 0, data.num_vars(), tc.k));
    NoGradGuard guard;
    std::size_t ulp_diffs = 0;
    auto compare = [&](const Tensor& x, const Tensor& y) {
        for (std::size_t i = 0; i < x.numel(); ++i) ulp_diffs += x.values()[i] != y.values()[i];
    };
    compare(live.imputer->impute(sb), loaded.imputer->impute(sb));
    compare(live.forecaster->forward(sb.inputs), loaded.forecaster->forward(sb.inputs));
    compare(live.reference->forward(b.lookback), loaded.reference->forward(b.lookback));
    ok = ok && ulp_diffs == 0;
    d += "; checkpoint reload forward differences " + std::to_string(ulp_diffs);
    return {ok ? Verdict::Pass : Verdict::Fail, d};
}

Outcome criterion10() {
    SyntheticRuns& s = synthetic(false);
    const std::string& ref = s.report.settings.front().manifest;
    std::size_t same = 0;
    for (const SettingReport& r : s.report.settings) same += r.manifest == ref;
    // the CLI writes the same manifests to disk
    std::size_t files = 0, file_same = 0;
    const fs::path mdir = g_scratch / "determinism" / "a" / "manifests" / "k0.15";
    std::string first;
    if (fs::exists(mdir)) {
        for (const auto& e : fs::directory_iterator(mdir)) {
            const std::string text = slurp(e.path());
            if (first.empty()) first = text;
            ++files;
            file_same += text == first;
        }
    }
    const bool ok = same == s.report.settings.size() && !ref.empty() && file_same == files;
    return {ok ? Verdict::Pass : Verdict::Fail,
            std::to_string(same) + "/" + std::to_string(s.report.settings.size()) +
                " in-memory setting manifests identical; " + std::to_string(file_same) + "/" + std::to_string(files) +
                " CLI manifest files identical"};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: acceptance <cli-binary> [--only 1,2,...]\n");
        return 2;
    }
    g_cli = fs::absolute(argv[1]);
    std::set<int> only;
    for (int i = 2; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--only") {
            std::stringstream ss(argv[i + 1]);
            for (std::string t; std::getline(ss, t, ',');) only.insert(std::stoi(t));
        }
    }
    g_scratch = fs::temp_directory_path() / ("toivsf-acceptance-" + std::to_string(::getpid()));
    fs::create_directories(g_scratch);

    const std::map<int, std::pair<std::string, std::function<Outcome()>>> criteria{
        {1, {"gradient suite", criterion1}},
        {2, {"metric oracle", criterion2}},
        {3, {"synthetic end-to-end", criterion3}},
        {4, {"joint-learning ablation", criterion4}},
        {5, {"ETTh1 desk run", criterion5}},
        {6, {"weight-sweep shape", criterion6}},
        {7, {"k-sweep robustness", criterion7}},
        {8, {"degeneracy properties", criterion8}},
        {9, {"determinism", criterion9}},
        {10, {"protocol pairing", criterion10}},
    };
    // 9 before 10: pairing also inspects the manifests written by the CLI run
    const std::vector<int> order{1, 2, 8, 9, 3, 10, 7, 4, 6, 5};
    int failures = 0, skipped = 0, ran = 0;
    for (int id : order) {
        if (!only.empty() && !only.count(id)) continue;
        const auto& [name, fn] = criteria.at(id);
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {Verdict::Fail, std::string("error: ") + e.what()};
        }
        const char* tag = o.verdict == Verdict::Pass ? "PASS" : o.verdict == Verdict::Fail ? "FAIL" : "SKIP";
        std::printf("%s criterion %d (%s): %s [%.0f s]\n", tag, id, name.c_str(), o.detail.c_str(), seconds_since(t0));
        std::fflush(stdout);
        failures += o.verdict == Verdict::Fail;
        skipped += o.verdict == Verdict::Skip;
        ++ran;
    }
    fs::remove_all(g_scratch);
    std::printf("%d criteria: %d passed, %d failed, %d skipped\n", ran, ran - failures - skipped, failures, skipped);
    // only-skipped runs report as skipped to ctest
    if (failures) return 1;
    return ran > 0 && skipped == ran ? 77 : 0;
}
