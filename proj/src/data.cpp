#include "toivsf/data.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "toivsf/errors.hpp"
#include "toivsf/rng.hpp"

namespace toivsf {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(trim(field));
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

std::vector<std::string> default_names(std::size_t n) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n; ++i) names.push_back("v" + std::to_string(i));
    return names;
}

}  // namespace

RawSeries make_series(std::size_t length, std::size_t num_vars, std::vector<real> values, std::vector<std::string> names) {
    if (names.empty()) names = default_names(num_vars);
    if (names.size() != num_vars) throw DimensionError("variable name count does not match column count");
    RawSeries s;
    s.values = Tensor(Shape{length, num_vars}, std::move(values));
    s.variable_names = std::move(names);
    return s;
}

RawSeries parse_csv(const std::string& text, bool has_header, std::size_t skip_cols) {
    std::istringstream in(text);
    std::string line;
    std::size_t row = 0;
    std::vector<std::string> names;
    std::vector<real> values;
    std::size_t width = 0;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        std::vector<std::string> fields = split_fields(line);
        if (fields.size() <= skip_cols) throw ParseError("row has no columns after skipping " + std::to_string(skip_cols), row, fields.size());
        fields.erase(fields.begin(), fields.begin() + static_cast<long>(skip_cols));
        if (has_header && names.empty()) {
            names = fields;
            width = fields.size();
            continue;
        }
        if (width == 0) width = fields.size();
        if (fields.size() != width) {
            throw ParseError("ragged row: expected " + std::to_string(width) + " columns, found " + std::to_string(fields.size()),
                             row, std::min(fields.size(), width) + 1 + skip_cols);
        }
        for (std::size_t c = 0; c < fields.size(); ++c) {
            const std::string& f = fields[c];
            char* end = nullptr;
            errno = 0;
            const double v = std::strtod(f.c_str(), &end);
            if (f.empty() || end != f.c_str() + f.size() || errno == ERANGE || !std::isfinite(v)) {
                throw ParseError("non-numeric cell '" + f + "'", row, c + 1 + skip_cols);
            }
            values.push_back(static_cast<real>(v));
        }
        ++rows;
    }
    if (rows == 0) throw ParseError("no data rows", row, 0);
    return make_series(rows, width, std::move(values), has_header ? names : std::vector<std::string>{});
}

RawSeries load_csv(const std::filesystem::path& path, bool has_header, std::size_t skip_cols) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_csv(buffer.str(), has_header, skip_cols);
}

std::string to_csv(const RawSeries& series) {
    std::ostringstream out;
    out << std::setprecision(17);
    for (std::size_t i = 0; i < series.num_vars(); ++i) out << (i ? "," : "") << series.variable_names[i];
    out << '\n';
    for (std::size_t t = 0; t < series.length(); ++t) {
        for (std::size_t i = 0; i < series.num_vars(); ++i) out << (i ? "," : "") << series.at(t, i);
        out << '\n';
    }
    return out.str();
}

void write_csv(const std::filesystem::path& path, const RawSeries& series) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << to_csv(series);
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

RawSeries scale_dataset(const RawSeries& raw, real factor) {
    if (!(factor > 0)) throw ConfigError("scale factor must be positive");
    RawSeries out = raw;
    out.values = raw.values.clone();
    for (real& v : out.values.mutable_values()) v *= factor;
    return out;
}

Normalizer fit_normalizer(const RawSeries& raw, IndexRange rows) {
    if (rows.size() == 0 || rows.end > raw.length()) throw ConfigError("normalizer fit range is empty or out of bounds");
    const std::size_t n = raw.num_vars();
    Normalizer norm;
    norm.mean.assign(n, 0);
    norm.stddev.assign(n, 0);
    const real count = static_cast<real>(rows.size());
    for (std::size_t t = rows.begin; t < rows.end; ++t) {
        for (std::size_t i = 0; i < n; ++i) norm.mean[i] += raw.at(t, i);
    }
    for (real& m : norm.mean) m /= count;
    for (std::size_t t = rows.begin; t < rows.end; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            const real d = raw.at(t, i) - norm.mean[i];
            norm.stddev[i] += d * d;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        norm.stddev[i] = std::sqrt(norm.stddev[i] / count);
        if (!(norm.stddev[i] > 0)) {
            norm.stddev[i] = 1;
            norm.warnings.push_back("variable '" + raw.variable_names[i] + "' is constant on the train range; std clamped to 1");
        }
    }
    return norm;
}

RawSeries Normalizer::apply(const RawSeries& raw) const {
    RawSeries out = raw;
    out.values = raw.values.clone();
    auto v = out.values.mutable_values();
    const std::size_t n = raw.num_vars();
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = apply(k % n, v[k]);
    return out;
}

RawSeries Normalizer::invert(const RawSeries& normalized) const {
    RawSeries out = normalized;
    out.values = normalized.values.clone();
    auto v = out.values.mutable_values();
    const std::size_t n = normalized.num_vars();
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = invert(k % n, v[k]);
    return out;
}

void Normalizer::invert_rows(std::span<real> values, std::size_t num_vars, std::size_t time) const {
    for (std::size_t k = 0; k < values.size(); ++k) values[k] = invert((k / time) % num_vars, values[k]);
}

void Normalizer::apply_rows(std::span<real> values, std::size_t num_vars, std::size_t time) const {
    for (std::size_t k = 0; k < values.size(); ++k) values[k] = apply((k / time) % num_vars, values[k]);
}

DatasetSplits make_splits(std::size_t total_length, std::size_t lookback, std::size_t horizon,
                          const SplitFractions& fractions) {
    if (lookback < 1 || horizon < 1) throw ConfigError("lookback and horizon must be >= 1");
    const double total_fraction = fractions.train + fractions.valid + fractions.test;
    if (fractions.train <= 0 || fractions.valid < 0 || fractions.test <= 0 || std::abs(total_fraction - 1.0) > 1e-9) {
        throw ConfigError("split fractions must be non-negative, train/test positive, and sum to 1");
    }
    const std::size_t tail = lookback + horizon - 1;
    const std::size_t overhead = 3 * tail;
    const std::size_t starts = total_length > overhead ? total_length - overhead : 0;
    const auto n_train = static_cast<std::size_t>(std::llround(fractions.train * static_cast<double>(starts)));
    const auto n_valid = static_cast<std::size_t>(std::llround(fractions.valid * static_cast<double>(starts)));
    DatasetSplits s;
    s.train = {0, std::min(total_length, n_train + tail)};
    s.valid = {s.train.end, std::min(total_length, s.train.end + n_valid + tail)};
    s.test = {s.valid.end, total_length};
    return s;
}

SplitWindows make_windows(const DatasetSplits& splits, std::size_t lookback, std::size_t horizon, std::size_t stride) {
    if (lookback < 1 || horizon < 1) throw ConfigError("lookback and horizon must be >= 1");
    if (stride < 1) throw ConfigError("window stride must be >= 1");
    SplitWindows w;
    const std::size_t span = lookback + horizon;
    auto fill = [&](const IndexRange& range, std::vector<std::size_t>& out, const char* name) {
        if (range.size() < span) {
            w.warnings.push_back(std::string(name) + " range of " + std::to_string(range.size()) +
                                 " rows is shorter than L + Q; split is empty");
            return;
        }
        for (std::size_t t = range.begin; t + span <= range.end; t += stride) out.push_back(t);
    };
    fill(splits.train, w.train, "train");
    fill(splits.valid, w.valid, "valid");
    fill(splits.test, w.test, "test");
    return w;
}

WindowBatch gather_windows(const RawSeries& series, std::span<const std::size_t> starts, std::size_t lookback,
                           std::size_t horizon) {
    const std::size_t b = starts.size();
    const std::size_t n = series.num_vars();
    if (b == 0) throw DimensionError("gather_windows: empty start list");
    std::vector<real> look(b * n * lookback);
    std::vector<real> ahead(b * n * horizon);
    auto v = series.values.values();
    for (std::size_t r = 0; r < b; ++r) {
        const std::size_t t0 = starts[r];
        if (t0 + lookback + horizon > series.length()) throw DimensionError("window exceeds series length");
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t t = 0; t < lookback; ++t) look[(r * n + i) * lookback + t] = v[(t0 + t) * n + i];
            for (std::size_t t = 0; t < horizon; ++t) ahead[(r * n + i) * horizon + t] = v[(t0 + lookback + t) * n + i];
        }
    }
    WindowBatch batch;
    batch.lookback = Tensor(Shape{b, n, lookback}, std::move(look));
    batch.horizon = Tensor(Shape{b, n, horizon}, std::move(ahead));
    batch.start_times.assign(starts.begin(), starts.end());
    return batch;
}

std::vector<WindowBatch> batch_windows(const RawSeries& series, std::span<const std::size_t> starts, std::size_t lookback,
                                       std::size_t horizon, std::size_t batch_size) {
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    std::vector<WindowBatch> out;
    for (std::size_t i = 0; i < starts.size(); i += batch_size) {
        const std::size_t len = std::min(batch_size, starts.size() - i);
        out.push_back(gather_windows(series, starts.subspan(i, len), lookback, horizon));
    }
    return out;
}

namespace {

void validate_synth(const SynthConfig& cfg) {
    if (cfg.n_vars < 2) throw ConfigError("synth: need at least 2 variables");
    if (cfg.n_latents < 1 || cfg.n_latents >= cfg.n_vars) throw ConfigError("synth: need 1 <= latents < variables");
    if (cfg.length < 1) throw ConfigError("synth: length must be positive");
    if (cfg.noise_std < 0) throw ConfigError("synth: noise must be non-negative");
    if (cfg.neg_fraction < 0 || cfg.neg_fraction > 1) throw ConfigError("synth: neg_fraction must lie in [0, 1]");
}

}  // namespace

Tensor synth_latents(const SynthConfig& cfg) {
    validate_synth(cfg);
    Rng latent_rng = Rng(cfg.seed).split("latents");
    // Periods grow geometrically so no two latents share a frequency.
    std::vector<double> period(cfg.n_latents), phase(cfg.n_latents);
    for (std::size_t j = 0; j < cfg.n_latents; ++j) {
        period[j] = 12.0 * std::pow(1.6, static_cast<double>(j)) * latent_rng.uniform(0.9, 1.1);
        phase[j] = latent_rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    std::vector<real> values(cfg.length * cfg.n_latents);
    for (std::size_t t = 0; t < cfg.length; ++t) {
        for (std::size_t j = 0; j < cfg.n_latents; ++j) {
            values[t * cfg.n_latents + j] =
                static_cast<real>(std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period[j] + phase[j]));
        }
    }
    return Tensor(Shape{cfg.length, cfg.n_latents}, std::move(values));
}

RawSeries synth_generate(const SynthConfig& cfg) {
    const Tensor latents = synth_latents(cfg);
    Rng root(cfg.seed);
    Rng weight_rng = root.split("weights");
    Rng sign_rng = root.split("signs");
    Rng noise_rng = root.split("noise");

    std::vector<double> weight(cfg.n_vars * cfg.n_latents);
    for (double& w : weight) w = weight_rng.uniform(0.5, 1.5);

    std::vector<std::size_t> order(cfg.n_vars);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = 0; i + 1 < order.size(); ++i) std::swap(order[i], order[i + sign_rng.below(order.size() - i)]);
    const auto negated = static_cast<std::size_t>(std::llround(cfg.neg_fraction * static_cast<double>(cfg.n_vars)));
    for (std::size_t r = 0; r < negated; ++r) {
        for (std::size_t j = 0; j < cfg.n_latents; ++j) weight[order[r] * cfg.n_latents + j] *= -1.0;
    }

    auto lv = latents.values();
    std::vector<real> values(cfg.length * cfg.n_vars);
    for (std::size_t t = 0; t < cfg.length; ++t) {
        for (std::size_t i = 0; i < cfg.n_vars; ++i) {
            double x = 0;
            for (std::size_t j = 0; j < cfg.n_latents; ++j) x += weight[i * cfg.n_latents + j] * lv[t * cfg.n_latents + j];
            x += cfg.noise_std * noise_rng.normal();
            values[t * cfg.n_vars + i] = static_cast<real>(x);
        }
    }
    RawSeries s = make_series(cfg.length, cfg.n_vars, std::move(values));
    s.frequency = "synthetic";
    return s;
}

PreparedDataset prepare_dataset(RawSeries raw, std::size_t lookback, std::size_t horizon, const SplitFractions& fractions) {
    if (raw.num_vars() < 2) throw ConfigError("dataset needs at least 2 variables");
    if (raw.length() < lookback + horizon) throw ConfigError("dataset shorter than L + Q");
    PreparedDataset d;
    d.lookback = lookback;
    d.horizon = horizon;
    d.splits = make_splits(raw.length(), lookback, horizon, fractions);
    d.normalizer = fit_normalizer(raw, d.splits.train);
    d.normalized = d.normalizer.apply(raw);
    d.windows = make_windows(d.splits, lookback, horizon);
    d.raw = std::move(raw);
    return d;
}

}  // namespace toivsf
