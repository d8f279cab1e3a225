#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "toivsf/config.hpp"
#include "toivsf/data.hpp"
#include "toivsf/subset.hpp"
#include "toivsf/trainer.hpp"

namespace toivsf {

// Mean absolute / root mean squared error over the rows flagged in `rows`.
// pred and truth are (B, N, Q) buffers; rows has N entries.
double subset_mae(std::span<const real> pred, std::span<const real> truth, const SubsetMask& rows, std::size_t horizon);
double subset_rmse(std::span<const real> pred, std::span<const real> truth, const SubsetMask& rows,
                   std::size_t horizon);
double mae(std::span<const real> pred, std::span<const real> truth);
double rmse(std::span<const real> pred, std::span<const real> truth);

// Percentage reductions; a non-positive reference error raises DomainError.
double delta_subset(double e_partial, double e_ours);
double delta_improve(double e_oracle, double e_ours);

enum class SettingMode { Partial, Oracle, Toi, ImputedReference, Baseline };

struct Setting {
    SettingMode mode = SettingMode::Partial;
    std::string baseline;  // filler name for Baseline

    // "partial", "oracle", "toi", "imputed_reference" or "baseline:<name>"
    static Setting parse(const std::string& text);
    std::string label() const;
};

const std::vector<std::string>& baseline_names();

// Per-variable statistics of the train split in original units.
struct TrainStats {
    std::vector<double> mean;
    std::vector<double> stddev;
    std::vector<std::vector<double>> corr;  // Pearson, N x N
};
TrainStats compute_train_stats(const PreparedDataset& data);

// Fills the unavailable rows of an original-units lookback (B, N, L).
// Only gaussian_fill consumes `rng`.
Tensor fill_baseline(const std::string& name, const Tensor& lookback, const SubsetMask& mask, const TrainStats& stats,
                     Rng& rng);

struct RunScore {
    std::uint64_t seed = 0;
    std::size_t draw = 0;
    std::vector<std::size_t> subset;
    double mae = 0;
    double rmse = 0;
};

struct SettingReport {
    std::string setting;
    std::vector<RunScore> runs;
    double mae_mean = 0, mae_std = 0;
    double rmse_mean = 0, rmse_std = 0;
    // One line per run: seed, draw, subset and the scored windows.
    std::string manifest;
};

struct Deltas {
    std::optional<double> subset_mae, subset_rmse;
    std::optional<double> improve_mae, improve_rmse;
};

struct MetricsReport {
    double k = 0;
    std::vector<std::uint64_t> seeds;
    std::size_t draws = 0;
    std::string dataset;
    std::string backbone;
    std::vector<SettingReport> settings;
    Deltas deltas;

    const SettingReport& at(const std::string& label) const;
    std::string to_text() const;
    Json to_json() const;
    // rows of k, seed, setting, metric, value with the value averaged over draws
    std::string to_csv(bool header = true) const;
};

struct SeedModels {
    std::uint64_t seed = 0;
    const TrainedModels* models = nullptr;
};

struct EvalOptions {
    double k = 0.15;
    std::size_t draws = 10;
    std::size_t test_stride = 1;
    std::size_t batch_size = 64;
    std::string dataset_label = "dataset";
};

// Every setting is scored on the same (seed, draw) subsets and test windows.
MetricsReport run_settings(const PreparedDataset& data, const std::vector<SeedModels>& runs,
                           const std::vector<Setting>& settings, const EvalOptions& options);

// Subset used for evaluation draw `draw` of `seed`.
SubsetMask eval_subset(std::uint64_t seed, std::size_t draw, std::size_t num_vars, double k);

std::vector<MetricsReport> k_sweep(const PreparedDataset& data, const std::vector<SeedModels>& runs,
                                   const std::vector<Setting>& settings, const std::vector<double>& k_values,
                                   EvalOptions options);
std::string sweep_table(const std::string& axis, const std::vector<double>& values,
                        const std::vector<MetricsReport>& reports);

struct WeightSweepRow {
    double alpha = 0;
    MetricsReport report;
};
// Trains one joint model per (alpha, seed) and scores TOI on the test split.
std::vector<WeightSweepRow> weight_sweep(const PreparedDataset& data, const TrainConfig& base,
                                         const std::vector<std::uint64_t>& seeds, const std::vector<double>& alphas,
                                         const EvalOptions& options);

}  // namespace toivsf
