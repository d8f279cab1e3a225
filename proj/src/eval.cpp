#include "toivsf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "toivsf/errors.hpp"
#include "toivsf/ops.hpp"

namespace toivsf {

namespace {

struct ErrorSums {
    double abs = 0;
    double sq = 0;
    std::size_t count = 0;

    void add(std::span<const real> pred, std::span<const real> truth, const SubsetMask* rows, std::size_t horizon) {
        if (pred.size() != truth.size()) throw DimensionError("prediction and truth differ in size");
        const std::size_t n = rows ? rows->num_vars() : 1;
        const std::size_t span_len = rows ? horizon : pred.size();
        if (rows && pred.size() % (n * horizon) != 0) throw DimensionError("buffer is not (B, N, Q)");
        for (std::size_t off = 0; off < pred.size(); off += span_len) {
            const std::size_t var = rows ? (off / horizon) % n : 0;
            if (rows && !rows->is_available(var)) continue;
            for (std::size_t q = 0; q < span_len; ++q) {
                const double e = double(pred[off + q]) - double(truth[off + q]);
                abs += std::abs(e);
                sq += e * e;
            }
            count += span_len;
        }
    }
    double mae() const {
        if (!count) throw DomainError("no entries to score");
        return abs / double(count);
    }
    double rmse() const {
        if (!count) throw DomainError("no entries to score");
        return std::sqrt(sq / double(count));
    }
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
    mean = 0;
    for (double x : xs) mean += x;
    mean /= double(xs.size());
    sd = 0;
    if (xs.size() > 1) {
        for (double x : xs) sd += (x - mean) * (x - mean);
        sd = std::sqrt(sd / double(xs.size() - 1));
    }
}

std::string join(const std::vector<std::size_t>& xs, char sep = ' ') {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) s += sep;
        s += std::to_string(xs[i]);
    }
    return s;
}

Tensor normalized_copy(const Tensor& original, const Normalizer& norm, std::size_t num_vars, std::size_t time) {
    Tensor out = original.clone();
    norm.apply_rows(out.mutable_values(), num_vars, time);
    return out;
}

}  // namespace

double subset_mae(std::span<const real> pred, std::span<const real> truth, const SubsetMask& rows,
                  std::size_t horizon) {
    ErrorSums s;
    s.add(pred, truth, &rows, horizon);
    return s.mae();
}

double subset_rmse(std::span<const real> pred, std::span<const real> truth, const SubsetMask& rows,
                   std::size_t horizon) {
    ErrorSums s;
    s.add(pred, truth, &rows, horizon);
    return s.rmse();
}

double mae(std::span<const real> pred, std::span<const real> truth) {
    ErrorSums s;
    s.add(pred, truth, nullptr, 0);
    return s.mae();
}

double rmse(std::span<const real> pred, std::span<const real> truth) {
    ErrorSums s;
    s.add(pred, truth, nullptr, 0);
    return s.rmse();
}

double delta_subset(double e_partial, double e_ours) {
    if (!(e_partial > 0)) throw DomainError("partial-setting error must be positive, got " + std::to_string(e_partial));
    return 100.0 * (e_partial - e_ours) / e_partial;
}

double delta_improve(double e_oracle, double e_ours) {
    if (!(e_oracle > 0)) throw DomainError("oracle-setting error must be positive, got " + std::to_string(e_oracle));
    return 100.0 * (e_oracle - e_ours) / e_oracle;
}

const std::vector<std::string>& baseline_names() {
    static const std::vector<std::string> names{"zero_fill", "mean_fill", "gaussian_fill", "nearest_train_variable"};
    return names;
}

Setting Setting::parse(const std::string& text) {
    Setting s;
    if (text == "partial") {
        s.mode = SettingMode::Partial;
    } else if (text == "oracle") {
        s.mode = SettingMode::Oracle;
    } else if (text == "toi") {
        s.mode = SettingMode::Toi;
    } else if (text == "imputed_reference") {
        s.mode = SettingMode::ImputedReference;
    } else if (text.rfind("baseline:", 0) == 0) {
        s.mode = SettingMode::Baseline;
        s.baseline = text.substr(9);
        const auto& names = baseline_names();
        if (std::find(names.begin(), names.end(), s.baseline) == names.end()) {
            throw ConfigError("unknown baseline '" + s.baseline +
                              "'; expected zero_fill, mean_fill, gaussian_fill or nearest_train_variable");
        }
    } else {
        throw ConfigError("unknown setting '" + text +
                          "'; expected partial, oracle, toi, imputed_reference or baseline:<name>");
    }
    return s;
}

std::string Setting::label() const {
    switch (mode) {
        case SettingMode::Partial: return "partial";
        case SettingMode::Oracle: return "oracle";
        case SettingMode::Toi: return "toi";
        case SettingMode::ImputedReference: return "imputed_reference";
        case SettingMode::Baseline: return "baseline:" + baseline;
    }
    return "";
}

TrainStats compute_train_stats(const PreparedDataset& data) {
    const std::size_t n = data.num_vars();
    TrainStats st;
    st.mean.assign(data.normalizer.mean.begin(), data.normalizer.mean.end());
    st.stddev.assign(data.normalizer.stddev.begin(), data.normalizer.stddev.end());
    st.corr.assign(n, std::vector<double>(n, 0.0));
    const IndexRange rows = data.splits.train;
    // z-scores against the train statistics, so the mean product is the correlation
    std::vector<double> sums(n * n, 0.0);
    auto z = data.normalized.values.values();
    for (std::size_t t = rows.begin; t < rows.end; ++t) {
        const real* row = z.data() + t * n;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i; j < n; ++j) sums[i * n + j] += double(row[i]) * double(row[j]);
    }
    const double count = double(rows.size());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            double c = count > 0 ? sums[i * n + j] / count : 0.0;
            c = std::clamp(c, -1.0, 1.0);
            st.corr[i][j] = st.corr[j][i] = c;
        }
    }
    return st;
}

Tensor fill_baseline(const std::string& name, const Tensor& lookback, const SubsetMask& mask, const TrainStats& stats,
                     Rng& rng) {
    if (lookback.dim() != 3 || lookback.size(1) != mask.num_vars()) {
        throw DimensionError("baseline fill expects (B, N, L) with N = " + std::to_string(mask.num_vars()) + ", got " +
                             shape_str(lookback.shape()));
    }
    const std::size_t b = lookback.size(0), n = lookback.size(1), l = lookback.size(2);
    Tensor out = lookback.clone();
    auto v = out.mutable_values();
    const std::vector<std::size_t> avail = mask.indices();

    // nearest available variable by absolute train correlation; ties to the lower index
    std::vector<std::size_t> donor(n, 0);
    if (name == "nearest_train_variable") {
        for (std::size_t j = 0; j < n; ++j) {
            double best = -1;
            for (std::size_t i : avail) {
                if (std::abs(stats.corr[i][j]) > best) {
                    best = std::abs(stats.corr[i][j]);
                    donor[j] = i;
                }
            }
        }
    } else if (name != "zero_fill" && name != "mean_fill" && name != "gaussian_fill") {
        throw ConfigError("unknown baseline '" + name + "'");
    }

    for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t j = 0; j < n; ++j) {
            if (mask.is_available(j)) continue;
            real* row = v.data() + (bi * n + j) * l;
            if (name == "zero_fill") {
                std::fill(row, row + l, real(0));
            } else if (name == "mean_fill") {
                std::fill(row, row + l, real(stats.mean[j]));
            } else if (name == "gaussian_fill") {
                for (std::size_t t = 0; t < l; ++t) row[t] = real(stats.mean[j] + stats.stddev[j] * rng.normal());
            } else {
                const std::size_t i = donor[j];
                const real* src = lookback.values().data() + (bi * n + i) * l;
                const double sign = stats.corr[i][j] < 0 ? -1.0 : 1.0;
                for (std::size_t t = 0; t < l; ++t) {
                    row[t] = real(stats.mean[j] + sign * stats.stddev[j] * (src[t] - stats.mean[i]) / stats.stddev[i]);
                }
            }
        }
    }
    return out;
}

SubsetMask eval_subset(std::uint64_t seed, std::size_t draw, std::size_t num_vars, double k) {
    Rng rng = Rng(seed).split("test-subsets").split(draw);
    return sample_subset(num_vars, k, rng);
}

const SettingReport& MetricsReport::at(const std::string& label) const {
    for (const SettingReport& s : settings)
        if (s.setting == label) return s;
    throw ConfigError("report has no setting '" + label + "'");
}

MetricsReport run_settings(const PreparedDataset& data, const std::vector<SeedModels>& runs,
                           const std::vector<Setting>& settings, const EvalOptions& options) {
    if (runs.empty()) throw ConfigError("evaluation needs at least one trained seed");
    if (settings.empty()) throw ConfigError("evaluation needs at least one setting");
    if (options.draws < 1) throw ConfigError("subset draws must be >= 1");
    if (!(options.k > 0) || options.k > 1) throw ConfigError("k must lie in (0, 1]");
    const std::size_t n = data.num_vars(), l = data.lookback, q = data.horizon;

    for (const SeedModels& run : runs) {
        if (!run.models) throw ConfigError("missing models for seed " + std::to_string(run.seed));
        for (const Setting& s : settings) {
            const bool needs_ref = s.mode != SettingMode::Toi;
            const bool needs_imp = s.mode == SettingMode::Toi || s.mode == SettingMode::ImputedReference;
            if (needs_ref && !run.models->reference)
                throw ConfigError("setting " + s.label() + " needs a reference forecaster");
            if (needs_imp && !run.models->imputer) throw ConfigError("setting " + s.label() + " needs an imputer");
            if (s.mode == SettingMode::Toi && !run.models->forecaster)
                throw ConfigError("setting toi needs a jointly trained forecaster");
        }
    }

    std::vector<std::size_t> starts;
    for (std::size_t i = 0; i < data.windows.test.size(); i += std::max<std::size_t>(1, options.test_stride))
        starts.push_back(data.windows.test[i]);
    if (starts.empty()) throw ConfigError("test split holds no complete window");
    const std::string window_desc =
        std::to_string(starts.front()) + ".." + std::to_string(starts.back()) + "/" + std::to_string(starts.size());
    const std::vector<WindowBatch> raw_batches = batch_windows(data.raw, starts, l, q, options.batch_size);
    const std::vector<WindowBatch> norm_batches = batch_windows(data.normalized, starts, l, q, options.batch_size);
    const TrainStats stats = compute_train_stats(data);

    MetricsReport report;
    report.k = options.k;
    report.draws = options.draws;
    report.dataset = options.dataset_label;
    report.backbone = runs.front().models->forecaster ? runs.front().models->forecaster->config().kind
                      : runs.front().models->reference ? runs.front().models->reference->config().kind
                                                        : "";
    for (const Setting& s : settings) report.settings.push_back(SettingReport{s.label(), {}, 0, 0, 0, 0, ""});

    NoGradGuard no_grad;
    for (const SeedModels& run : runs) {
        report.seeds.push_back(run.seed);
        const TrainedModels& m = *run.models;
        for (std::size_t draw = 0; draw < options.draws; ++draw) {
            const SubsetMask mask = eval_subset(run.seed, draw, n, options.k);
            for (std::size_t si = 0; si < settings.size(); ++si) {
                const Setting& s = settings[si];
                Rng fill_rng = Rng(run.seed).split("gaussian-fill").split(draw);
                ErrorSums sums;
                for (std::size_t bi = 0; bi < raw_batches.size(); ++bi) {
                    const WindowBatch& raw = raw_batches[bi];
                    const WindowBatch& norm = norm_batches[bi];
                    Tensor pred;
                    switch (s.mode) {
                        case SettingMode::Oracle: pred = m.reference->forward(norm.lookback); break;
                        case SettingMode::Partial: pred = m.reference->forward(apply_mask(norm, mask).inputs); break;
                        case SettingMode::Toi: pred = m.forecaster->forward(m.imputer->impute(apply_mask(norm, mask))); break;
                        case SettingMode::ImputedReference:
                            pred = m.reference->forward(m.imputer->impute(apply_mask(norm, mask)));
                            break;
                        case SettingMode::Baseline: {
                            Tensor filled = fill_baseline(s.baseline, raw.lookback, mask, stats, fill_rng);
                            pred = m.reference->forward(normalized_copy(filled, data.normalizer, n, l));
                            break;
                        }
                    }
                    Tensor denorm = pred.clone();
                    data.normalizer.invert_rows(denorm.mutable_values(), n, q);
                    sums.add(denorm.values(), raw.horizon.values(), &mask, q);
                }
                RunScore score{run.seed, draw, mask.indices(), sums.mae(), sums.rmse()};
                if (!(score.rmse >= score.mae)) {
                    throw NumericError("RMSE below MAE for setting " + s.label() + " seed " + std::to_string(run.seed));
                }
                SettingReport& rep = report.settings[si];
                rep.manifest += "seed=" + std::to_string(run.seed) + " draw=" + std::to_string(draw) + " subset=" +
                                join(score.subset, ',') + " windows=" + window_desc + "\n";
                rep.runs.push_back(std::move(score));
            }
        }
    }

    for (SettingReport& rep : report.settings) {
        std::vector<double> maes, rmses;
        for (const RunScore& r : rep.runs) {
            maes.push_back(r.mae);
            rmses.push_back(r.rmse);
        }
        mean_std(maes, rep.mae_mean, rep.mae_std);
        mean_std(rmses, rep.rmse_mean, rep.rmse_std);
    }

    auto find = [&](const char* label) -> const SettingReport* {
        for (const SettingReport& s : report.settings)
            if (s.setting == label) return &s;
        return nullptr;
    };
    if (const SettingReport* toi = find("toi")) {
        if (const SettingReport* p = find("partial")) {
            report.deltas.subset_mae = delta_subset(p->mae_mean, toi->mae_mean);
            report.deltas.subset_rmse = delta_subset(p->rmse_mean, toi->rmse_mean);
        }
        if (const SettingReport* o = find("oracle")) {
            report.deltas.improve_mae = delta_improve(o->mae_mean, toi->mae_mean);
            report.deltas.improve_rmse = delta_improve(o->rmse_mean, toi->rmse_mean);
        }
    }
    return report;
}

std::string MetricsReport::to_text() const {
    std::ostringstream out;
    out << "dataset " << dataset << "  backbone " << backbone << "  k " << fmt("%.3g", k) << "  seeds "
        << seeds.size() << "  draws " << draws << "\n";
    char line[256];
    std::snprintf(line, sizeof line, "%-32s %22s %22s\n", "setting", "MAE mean (std)", "RMSE mean (std)");
    out << line;
    for (const SettingReport& s : settings) {
        const std::string a = fmt("%.4f", s.mae_mean) + " (" + fmt("%.4f", s.mae_std) + ")";
        const std::string b = fmt("%.4f", s.rmse_mean) + " (" + fmt("%.4f", s.rmse_std) + ")";
        std::snprintf(line, sizeof line, "%-32s %22s %22s\n", s.setting.c_str(), a.c_str(), b.c_str());
        out << line;
    }
    auto put = [&](const char* name, const std::optional<double>& v) {
        if (v) out << name << " " << fmt("%.2f", *v) << "%\n";
    };
    put("delta_subset MAE", deltas.subset_mae);
    put("delta_subset RMSE", deltas.subset_rmse);
    put("delta_improve MAE", deltas.improve_mae);
    put("delta_improve RMSE", deltas.improve_rmse);
    return out.str();
}

Json MetricsReport::to_json() const {
    Json settings_json = Json::array();
    for (const SettingReport& s : settings) {
        Json runs_json = Json::array();
        for (const RunScore& r : s.runs) {
            runs_json.push_back(
                Json{{"seed", r.seed}, {"draw", r.draw}, {"subset", r.subset}, {"mae", r.mae}, {"rmse", r.rmse}});
        }
        settings_json.push_back(Json{{"setting", s.setting},
                                     {"mae_mean", s.mae_mean},
                                     {"mae_std", s.mae_std},
                                     {"rmse_mean", s.rmse_mean},
                                     {"rmse_std", s.rmse_std},
                                     {"runs", runs_json}});
    }
    Json d = Json::object();
    if (deltas.subset_mae) d["subset_mae"] = *deltas.subset_mae;
    if (deltas.subset_rmse) d["subset_rmse"] = *deltas.subset_rmse;
    if (deltas.improve_mae) d["improve_mae"] = *deltas.improve_mae;
    if (deltas.improve_rmse) d["improve_rmse"] = *deltas.improve_rmse;
    return Json{{"dataset", dataset}, {"backbone", backbone}, {"k", k},          {"seeds", seeds},
                {"draws", draws},     {"settings", settings_json}, {"deltas", d}};
}

std::string MetricsReport::to_csv(bool header) const {
    std::ostringstream out;
    if (header) out << "k,seed,setting,metric,value\n";
    for (const SettingReport& s : settings) {
        std::map<std::uint64_t, std::pair<double, double>> sums;
        std::map<std::uint64_t, std::size_t> counts;
        for (const RunScore& r : s.runs) {
            sums[r.seed].first += r.mae;
            sums[r.seed].second += r.rmse;
            ++counts[r.seed];
        }
        for (std::uint64_t seed : seeds) {
            const double c = double(counts[seed]);
            out << fmt("%.6g", k) << "," << seed << "," << s.setting << ",mae," << fmt("%.10g", sums[seed].first / c)
                << "\n";
            out << fmt("%.6g", k) << "," << seed << "," << s.setting << ",rmse," << fmt("%.10g", sums[seed].second / c)
                << "\n";
        }
    }
    return out.str();
}

std::vector<MetricsReport> k_sweep(const PreparedDataset& data, const std::vector<SeedModels>& runs,
                                   const std::vector<Setting>& settings, const std::vector<double>& k_values,
                                   EvalOptions options) {
    std::vector<MetricsReport> out;
    for (double k : k_values) {
        options.k = k;
        out.push_back(run_settings(data, runs, settings, options));
    }
    return out;
}

std::string sweep_table(const std::string& axis, const std::vector<double>& values,
                        const std::vector<MetricsReport>& reports) {
    if (values.size() != reports.size()) throw DimensionError("sweep values and reports differ in count");
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-8s %-32s %22s %22s\n", axis.c_str(), "setting", "MAE mean (std)",
                  "RMSE mean (std)");
    out << line;
    for (std::size_t i = 0; i < values.size(); ++i) {
        for (const SettingReport& s : reports[i].settings) {
            const std::string a = fmt("%.4f", s.mae_mean) + " (" + fmt("%.4f", s.mae_std) + ")";
            const std::string b = fmt("%.4f", s.rmse_mean) + " (" + fmt("%.4f", s.rmse_std) + ")";
            std::snprintf(line, sizeof line, "%-8s %-32s %22s %22s\n", fmt("%.3g", values[i]).c_str(),
                          s.setting.c_str(), a.c_str(), b.c_str());
            out << line;
        }
    }
    return out.str();
}

std::vector<WeightSweepRow> weight_sweep(const PreparedDataset& data, const TrainConfig& base,
                                         const std::vector<std::uint64_t>& seeds, const std::vector<double>& alphas,
                                         const EvalOptions& options) {
    std::vector<WeightSweepRow> rows;
    for (double a : alphas) {
        if (a < 0 || a > 1) throw ConfigError("alpha must lie in [0, 1], got " + std::to_string(a));
        std::vector<TrainedModels> trained;
        trained.reserve(seeds.size());
        for (std::uint64_t seed : seeds) {
            TrainConfig cfg = base;
            cfg.alpha = a;
            cfg.beta = 1.0 - a;
            cfg.seed = seed;
            trained.push_back(train_joint(data, cfg));
        }
        std::vector<SeedModels> runs;
        for (std::size_t i = 0; i < seeds.size(); ++i) runs.push_back({seeds[i], &trained[i]});
        rows.push_back({a, run_settings(data, runs, {Setting::parse("toi")}, options)});
    }
    return rows;
}

}  // namespace toivsf
