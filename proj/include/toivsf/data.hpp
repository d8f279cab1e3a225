#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "toivsf/tensor.hpp"

namespace toivsf {

// Multivariate series with one feature per variable; values shaped (T, N).
struct RawSeries {
    Tensor values;
    std::vector<std::string> variable_names;
    std::string frequency;

    std::size_t length() const { return values.size(0); }
    std::size_t num_vars() const { return values.size(1); }
    real at(std::size_t t, std::size_t var) const { return values.values()[t * num_vars() + var]; }
};

RawSeries make_series(std::size_t length, std::size_t num_vars, std::vector<real> values,
                      std::vector<std::string> names = {});

// Rectangular numeric CSV, one row per timestep. `skip_cols` drops leading
// columns (timestamps) before parsing.
RawSeries load_csv(const std::filesystem::path& path, bool has_header, std::size_t skip_cols = 0);
RawSeries parse_csv(const std::string& text, bool has_header, std::size_t skip_cols = 0);
void write_csv(const std::filesystem::path& path, const RawSeries& series);
std::string to_csv(const RawSeries& series);

RawSeries scale_dataset(const RawSeries& raw, real factor);

struct IndexRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end > begin ? end - begin : 0; }
};

// Per-variable z-score statistics (population std).
struct Normalizer {
    std::vector<real> mean;
    std::vector<real> stddev;
    std::vector<std::string> warnings;

    real apply(std::size_t var, real x) const { return (x - mean[var]) / stddev[var]; }
    real invert(std::size_t var, real z) const { return z * stddev[var] + mean[var]; }
    RawSeries apply(const RawSeries& raw) const;
    RawSeries invert(const RawSeries& normalized) const;
    // In place over a (..., N, time) buffer laid out variable-major per batch row.
    void invert_rows(std::span<real> values, std::size_t num_vars, std::size_t time) const;
    void apply_rows(std::span<real> values, std::size_t num_vars, std::size_t time) const;
};

Normalizer fit_normalizer(const RawSeries& raw, IndexRange rows);

struct SplitFractions {
    double train = 0.7;
    double valid = 0.1;
    double test = 0.2;
};

// Disjoint chronological row ranges. Fractions are applied to window start
// positions; each range carries its own L + Q - 1 tail so that no window
// straddles a boundary.
struct DatasetSplits {
    IndexRange train;
    IndexRange valid;
    IndexRange test;
};

DatasetSplits make_splits(std::size_t total_length, std::size_t lookback, std::size_t horizon,
                          const SplitFractions& fractions = {});

struct WindowBatch {
    Tensor lookback;  // (B, N, L)
    Tensor horizon;   // (B, N, Q)
    std::vector<std::size_t> start_times;

    std::size_t batch_size() const { return start_times.size(); }
};

struct SplitWindows {
    std::vector<std::size_t> train;
    std::vector<std::size_t> valid;
    std::vector<std::size_t> test;
    std::vector<std::string> warnings;
};

// Start positions t with t + L + Q <= range end, for each split.
SplitWindows make_windows(const DatasetSplits& splits, std::size_t lookback, std::size_t horizon,
                          std::size_t stride = 1);

WindowBatch gather_windows(const RawSeries& series, std::span<const std::size_t> starts, std::size_t lookback,
                           std::size_t horizon);
std::vector<WindowBatch> batch_windows(const RawSeries& series, std::span<const std::size_t> starts,
                                       std::size_t lookback, std::size_t horizon, std::size_t batch_size);

struct SynthConfig {
    std::size_t n_vars = 20;
    std::size_t n_latents = 3;
    std::size_t length = 3000;
    real noise_std = real(0.1);
    real neg_fraction = real(0.3);
    std::uint64_t seed = 0;
};

// Sinusoidal latent factors mixed into n_vars noisy variables; a fraction of
// the variables carries negated mixing weights. Pure function of the config.
RawSeries synth_generate(const SynthConfig& cfg);
// The latent factors used by synth_generate, shaped (length, n_latents).
Tensor synth_latents(const SynthConfig& cfg);

// Everything the trainer and evaluator need from one series.
struct PreparedDataset {
    RawSeries raw;         // original units
    RawSeries normalized;  // model units
    Normalizer normalizer;
    DatasetSplits splits;
    SplitWindows windows;
    std::size_t lookback = 12;
    std::size_t horizon = 12;

    std::size_t num_vars() const { return raw.num_vars(); }
};

PreparedDataset prepare_dataset(RawSeries raw, std::size_t lookback, std::size_t horizon,
                                const SplitFractions& fractions = {});

}  // namespace toivsf
