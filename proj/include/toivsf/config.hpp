#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "toivsf/data.hpp"
#include "toivsf/trainer.hpp"

namespace toivsf {

using Json = nlohmann::ordered_json;

struct DatasetConfig {
    std::string path;  // CSV source; empty when synthesized
    bool has_header = true;
    std::size_t skip_cols = 0;
    std::optional<SynthConfig> synth;
    double scale = 1.0;
    std::size_t lookback = 12;
    std::size_t horizon = 12;
    SplitFractions split;
};

struct EvalConfig {
    std::vector<std::string> settings{"partial", "oracle", "toi"};
    std::vector<double> k_values{0.15};
    std::size_t subset_draws = 10;
};

struct RunConfig {
    DatasetConfig dataset;
    TrainConfig train;
    std::vector<std::uint64_t> seeds{0};
    EvalConfig eval;

    // Copies the dataset window sizes into the model blocks and validates everything.
    void finalize();
};

// Strict: unknown keys and wrong types raise ConfigError naming the key path.
RunConfig run_config_from_json(const Json& j);
RunConfig load_run_config(const std::filesystem::path& path);
Json to_json(const RunConfig& cfg);

Json to_json(const ImputerConfig& cfg);
Json to_json(const ForecasterConfig& cfg);
Json to_json(const TrainConfig& cfg);
Json to_json(const SynthConfig& cfg);
Json to_json(const RunRecord& record);

PreparedDataset load_dataset(const DatasetConfig& cfg);

}  // namespace toivsf
