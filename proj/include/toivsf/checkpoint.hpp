#pragma once

#include <filesystem>
#include <map>
#include <vector>

#include "toivsf/config.hpp"
#include "toivsf/optim.hpp"
#include "toivsf/trainer.hpp"

namespace toivsf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
    Shape shape;
    std::vector<double> values;
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    Json header;
    std::map<std::string, StoredTensor> tensors;
};

// Layout: "TOIVSFCK", u32 version, u64 header length, header JSON, u64 tensor
// count, then per tensor u32 name length, name, u32 rank, u64 extents and
// little-endian f64 values.
void save_checkpoint(const std::filesystem::path& path, const Json& header, const ParameterStore& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies stored values into `params`; names and shapes must match exactly.
void restore_parameters(const Checkpoint& ckpt, ParameterStore& params);

// One file per model under `dir`: imputer.ckpt, forecaster.ckpt and, when
// present, reference.ckpt. Headers record the module config and stage.
void save_models(const std::filesystem::path& dir, const TrainedModels& models, const TrainConfig& cfg,
                 std::size_t num_vars);
// Rebuilds models from `dir`; a header whose config differs from `cfg`
// raises CheckpointError.
TrainedModels load_models(const std::filesystem::path& dir, const TrainConfig& cfg, std::size_t num_vars);

}  // namespace toivsf
