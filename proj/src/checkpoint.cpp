#include "toivsf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "toivsf/errors.hpp"

namespace toivsf {

namespace {

constexpr char kMagic[8] = {'T', 'O', 'I', 'V', 'S', 'F', 'C', 'K'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T take(std::istream& in, const std::filesystem::path& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError("truncated checkpoint " + path.string());
    return v;
}

std::string take_string(std::istream& in, std::size_t n, const std::filesystem::path& path) {
    if (n > (std::size_t(1) << 32)) throw CheckpointError("corrupt length in checkpoint " + path.string());
    std::string s(n, '\0');
    if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) {
        throw CheckpointError("truncated checkpoint " + path.string());
    }
    return s;
}

Json module_header(const std::string& module, const Json& config, std::size_t num_vars) {
    return Json{{"module", module}, {"num_vars", num_vars}, {"config", config}};
}

void check_header(const Checkpoint& ckpt, const Json& expected, const std::filesystem::path& path) {
    if (ckpt.header != expected) {
        throw CheckpointError("checkpoint " + path.string() + " (format version " + std::to_string(ckpt.version) +
                              ") was written for a different configuration: stored " + ckpt.header.dump() +
                              ", expected " + expected.dump());
    }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Json& header, const ParameterStore& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    const std::string h = header.dump();
    put<std::uint64_t>(out, h.size());
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    put<std::uint64_t>(out, params.size());
    for (const Parameter& p : params.items()) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.dim()));
        for (std::size_t e : p.tensor.shape()) put<std::uint64_t>(out, e);
        for (real v : p.tensor.values()) put<double>(out, static_cast<double>(v));
    }
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw CheckpointError(path.string() + " is not a checkpoint file");
    }
    Checkpoint ckpt;
    ckpt.version = take<std::uint32_t>(in, path);
    if (ckpt.version != kCheckpointVersion) {
        throw CheckpointError("checkpoint " + path.string() + " has format version " + std::to_string(ckpt.version) +
                              "; this build reads version " + std::to_string(kCheckpointVersion));
    }
    const std::string h = take_string(in, take<std::uint64_t>(in, path), path);
    try {
        ckpt.header = Json::parse(h);
    } catch (const nlohmann::json::parse_error&) {
        throw CheckpointError("corrupt header in checkpoint " + path.string());
    }
    const auto count = take<std::uint64_t>(in, path);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = take_string(in, take<std::uint32_t>(in, path), path);
        StoredTensor t;
        const auto rank = take<std::uint32_t>(in, path);
        for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(take<std::uint64_t>(in, path));
        t.values.resize(shape_numel(t.shape));
        for (double& v : t.values) v = take<double>(in, path);
        ckpt.tensors.emplace(std::move(name), std::move(t));
    }
    return ckpt;
}

void restore_parameters(const Checkpoint& ckpt, ParameterStore& params) {
    if (ckpt.tensors.size() != params.size()) {
        throw CheckpointError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model has " +
                              std::to_string(params.size()));
    }
    for (Parameter& p : params.items()) {
        auto it = ckpt.tensors.find(p.name);
        if (it == ckpt.tensors.end()) throw CheckpointError("checkpoint lacks parameter '" + p.name + "'");
        if (it->second.shape != p.tensor.shape()) {
            throw CheckpointError("parameter '" + p.name + "' has shape " + shape_str(it->second.shape) +
                                  " in checkpoint, " + shape_str(p.tensor.shape()) + " in model");
        }
        auto dst = p.tensor.mutable_values();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<real>(it->second.values[j]);
    }
}

void save_models(const std::filesystem::path& dir, const TrainedModels& models, const TrainConfig& cfg,
                 std::size_t num_vars) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    if (models.imputer) {
        save_checkpoint(dir / "imputer.ckpt", module_header("imputer", to_json(cfg.imputer), num_vars),
                        models.imputer->params());
    }
    if (models.forecaster) {
        save_checkpoint(dir / "forecaster.ckpt", module_header("forecaster", to_json(cfg.forecaster), num_vars),
                        models.forecaster->params());
    }
    if (models.reference) {
        save_checkpoint(dir / "reference.ckpt", module_header("reference", to_json(cfg.forecaster), num_vars),
                        models.reference->params());
    }
}

TrainedModels load_models(const std::filesystem::path& dir, const TrainConfig& cfg, std::size_t num_vars) {
    TrainedModels models;
    Rng scratch(0);
    auto load_into = [&](const char* file, const char* module, const Json& config, ParameterStore& params) {
        const auto path = dir / file;
        Checkpoint ckpt = load_checkpoint(path);
        check_header(ckpt, module_header(module, config, num_vars), path);
        restore_parameters(ckpt, params);
    };
    if (std::filesystem::exists(dir / "imputer.ckpt")) {
        models.imputer = make_imputer(cfg, num_vars, scratch);
        load_into("imputer.ckpt", "imputer", to_json(cfg.imputer), models.imputer->params());
    }
    if (std::filesystem::exists(dir / "forecaster.ckpt")) {
        models.forecaster = make_forecaster(cfg, num_vars, scratch);
        load_into("forecaster.ckpt", "forecaster", to_json(cfg.forecaster), models.forecaster->params());
    }
    if (std::filesystem::exists(dir / "reference.ckpt")) {
        models.reference = make_forecaster(cfg, num_vars, scratch);
        load_into("reference.ckpt", "reference", to_json(cfg.forecaster), models.reference->params());
    }
    if (!models.imputer && !models.forecaster && !models.reference) {
        throw IoError("no checkpoints found in " + dir.string());
    }
    return models;
}

}  // namespace toivsf
