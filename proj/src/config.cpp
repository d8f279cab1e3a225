#include "toivsf/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "toivsf/errors.hpp"

namespace toivsf {

namespace {

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported as typos.
class ObjectReader {
public:
    ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + "expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    const Json* raw(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void read(const std::string& key, double& out) {
        if (const Json* v = raw(key)) {
            if (!v->is_number()) throw ConfigError(where(key) + "expected a number");
            out = v->get<double>();
        }
    }
    void read(const std::string& key, std::size_t& out) {
        if (const Json* v = raw(key)) out = as_count(*v, key);
    }
    void read(const std::string& key, bool& out) {
        if (const Json* v = raw(key)) {
            if (!v->is_boolean()) throw ConfigError(where(key) + "expected true or false");
            out = v->get<bool>();
        }
    }
    void read(const std::string& key, std::string& out) {
        if (const Json* v = raw(key)) {
            if (!v->is_string()) throw ConfigError(where(key) + "expected a string");
            out = v->get<std::string>();
        }
    }
    template <class T>
    void read_list(const std::string& key, std::vector<T>& out) {
        const Json* v = raw(key);
        if (!v) return;
        if (!v->is_array()) throw ConfigError(where(key) + "expected an array");
        out.clear();
        for (const Json& e : *v) {
            if constexpr (std::is_same_v<T, std::string>) {
                if (!e.is_string()) throw ConfigError(where(key) + "expected strings");
                out.push_back(e.get<std::string>());
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!e.is_number()) throw ConfigError(where(key) + "expected numbers");
                out.push_back(e.get<T>());
            } else {
                out.push_back(static_cast<T>(as_count(e, key)));
            }
        }
    }

    ObjectReader child(const std::string& key) {
        seen_.insert(key);
        return ObjectReader(j_.at(key), path_.empty() ? key : path_ + "." + key);
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) throw ConfigError(where(it.key()) + "unknown key");
        }
    }

private:
    std::uint64_t as_count(const Json& v, const std::string& key) const {
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
            throw ConfigError(where(key) + "expected a non-negative integer");
        }
        return v.get<std::uint64_t>();
    }
    std::string where(const std::string& key = "") const {
        std::string p = path_;
        if (!key.empty()) p = p.empty() ? key : p + "." + key;
        return p.empty() ? "config: " : "config key '" + p + "': ";
    }

    const Json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

SynthConfig read_synth(ObjectReader r) {
    SynthConfig s;
    r.read("n_vars", s.n_vars);
    r.read("latents", s.n_latents);
    r.read("length", s.length);
    double noise = s.noise_std, neg = s.neg_fraction;
    r.read("noise", noise);
    r.read("neg_frac", neg);
    s.noise_std = real(noise);
    s.neg_fraction = real(neg);
    r.read("seed", s.seed);
    r.finish();
    return s;
}

}  // namespace

void RunConfig::finalize() {
    train.imputer.lookback = dataset.lookback;
    train.forecaster.lookback = dataset.lookback;
    train.forecaster.horizon = dataset.horizon;
    if (dataset.path.empty() == !dataset.synth.has_value()) {
        throw ConfigError("config: dataset needs exactly one of 'path' or 'synth'");
    }
    if (!(dataset.scale > 0)) throw ConfigError("config key 'dataset.scale': must be > 0");
    if (dataset.lookback < 1 || dataset.horizon < 1) throw ConfigError("config: lookback and horizon must be >= 1");
    if (seeds.empty()) throw ConfigError("config key 'train.seeds': at least one seed required");
    if (eval.subset_draws < 1) throw ConfigError("config key 'eval.subset_draws': must be >= 1");
    for (double k : eval.k_values) {
        if (!(k > 0) || k > 1) throw ConfigError("config key 'eval.k_values': each k must lie in (0, 1]");
    }
    train.validate();
}

RunConfig run_config_from_json(const Json& j) {
    RunConfig cfg;
    ObjectReader root(j, "");
    if (root.has("dataset")) {
        ObjectReader d = root.child("dataset");
        d.read("path", cfg.dataset.path);
        d.read("has_header", cfg.dataset.has_header);
        d.read("skip_cols", cfg.dataset.skip_cols);
        if (d.has("synth")) cfg.dataset.synth = read_synth(d.child("synth"));
        d.read("scale", cfg.dataset.scale);
        d.read("lookback", cfg.dataset.lookback);
        d.read("horizon", cfg.dataset.horizon);
        std::vector<double> split;
        d.read_list("split", split);
        if (!split.empty()) {
            if (split.size() != 3) throw ConfigError("config key 'dataset.split': expected [train, valid, test]");
            cfg.dataset.split = {split[0], split[1], split[2]};
        }
        d.finish();
    }
    if (root.has("imputer")) {
        ObjectReader r = root.child("imputer");
        ImputerConfig& ic = cfg.train.imputer;
        r.read("patches", ic.patches);
        r.read("embed_dim", ic.embed_dim);
        r.read("heads", ic.heads);
        r.read("mlp_hidden", ic.mlp_hidden);
        r.read("tcn_kernel", ic.tcn_kernel);
        std::vector<std::size_t> dil;
        r.read_list("tcn_dilations", dil);
        if (!dil.empty()) {
            if (dil.size() != 2) throw ConfigError("config key 'imputer.tcn_dilations': expected two values");
            ic.tcn_dilations = {dil[0], dil[1]};
        }
        r.read("tcn_channels", ic.tcn_channels);
        r.read("mix_variables", ic.mix_variables);
        r.finish();
    }
    if (root.has("forecaster")) {
        ObjectReader r = root.child("forecaster");
        r.read("backbone", cfg.train.forecaster.kind);
        r.read("hidden", cfg.train.forecaster.hidden);
        r.finish();
    }
    if (root.has("train")) {
        ObjectReader r = root.child("train");
        TrainConfig& t = cfg.train;
        r.read("alpha", t.alpha);
        r.read("beta", t.beta);
        // a lone alpha implies its complement
        if (r.has("alpha") && !r.has("beta")) t.beta = 1.0 - t.alpha;
        if (r.has("beta") && !r.has("alpha")) t.alpha = 1.0 - t.beta;
        r.read("k", t.k);
        r.read("epochs", t.epochs);
        r.read("batch_size", t.batch_size);
        r.read("lr", t.lr);
        r.read_list("seeds", cfg.seeds);
        r.read("grad_clip", t.grad_clip);
        r.read("patience", t.patience);
        r.read("window_stride", t.window_stride);
        r.read("valid_draws", t.valid_draws);
        r.read("resample_per_batch", t.resample_per_batch);
        r.read("subset_encoding", t.subset_encoding);
        r.finish();
    }
    if (root.has("eval")) {
        ObjectReader r = root.child("eval");
        r.read_list("settings", cfg.eval.settings);
        r.read_list("k_values", cfg.eval.k_values);
        r.read("subset_draws", cfg.eval.subset_draws);
        r.finish();
    }
    root.finish();
    cfg.train.seed = cfg.seeds.front();
    cfg.finalize();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    Json j;
    try {
        j = Json::parse(buf.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

Json to_json(const SynthConfig& s) {
    return Json{{"n_vars", s.n_vars}, {"latents", s.n_latents}, {"length", s.length},
                {"noise", s.noise_std}, {"neg_frac", s.neg_fraction}, {"seed", s.seed}};
}

Json to_json(const ImputerConfig& c) {
    return Json{{"patches", c.patches},
                {"embed_dim", c.embed_dim},
                {"heads", c.heads},
                {"mlp_hidden", c.mlp_hidden},
                {"tcn_kernel", c.tcn_kernel},
                {"tcn_dilations", {c.tcn_dilations[0], c.tcn_dilations[1]}},
                {"tcn_channels", c.tcn_channels},
                {"mix_variables", c.mix_variables}};
}

Json to_json(const ForecasterConfig& c) { return Json{{"backbone", c.kind}, {"hidden", c.hidden}}; }

Json to_json(const TrainConfig& t) {
    return Json{{"alpha", t.alpha},
                {"beta", t.beta},
                {"k", t.k},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"lr", t.lr},
                {"grad_clip", t.grad_clip},
                {"patience", t.patience},
                {"window_stride", t.window_stride},
                {"valid_draws", t.valid_draws},
                {"resample_per_batch", t.resample_per_batch},
                {"subset_encoding", t.subset_encoding}};
}

Json to_json(const RunConfig& cfg) {
    Json d{{"has_header", cfg.dataset.has_header},
           {"skip_cols", cfg.dataset.skip_cols},
           {"scale", cfg.dataset.scale},
           {"lookback", cfg.dataset.lookback},
           {"horizon", cfg.dataset.horizon},
           {"split", {cfg.dataset.split.train, cfg.dataset.split.valid, cfg.dataset.split.test}}};
    if (!cfg.dataset.path.empty()) d["path"] = cfg.dataset.path;
    if (cfg.dataset.synth) d["synth"] = to_json(*cfg.dataset.synth);
    Json train = to_json(cfg.train);
    train["seeds"] = cfg.seeds;
    return Json{{"dataset", d},
                {"imputer", to_json(cfg.train.imputer)},
                {"forecaster", to_json(cfg.train.forecaster)},
                {"train", train},
                {"eval", Json{{"settings", cfg.eval.settings},
                              {"k_values", cfg.eval.k_values},
                              {"subset_draws", cfg.eval.subset_draws}}}};
}

Json to_json(const RunRecord& r) {
    Json epochs = Json::array();
    for (const EpochRecord& e : r.epochs) {
        epochs.push_back(Json{{"epoch", e.epoch},
                              {"train_imputation", e.train.imputation},
                              {"train_forecast", e.train.forecast},
                              {"train_total", e.train.total},
                              {"valid_loss", e.valid_loss},
                              {"subset", e.subset},
                              {"subset_tag", e.subset_tag}});
    }
    return Json{{"stage", r.stage},
                {"seed", r.seed},
                {"best_epoch", r.best_epoch},
                {"best_valid", r.best_valid},
                {"stopped_early", r.stopped_early},
                {"epochs", epochs}};
}

PreparedDataset load_dataset(const DatasetConfig& cfg) {
    RawSeries raw = cfg.synth ? synth_generate(*cfg.synth) : load_csv(cfg.path, cfg.has_header, cfg.skip_cols);
    if (cfg.scale != 1.0) raw = scale_dataset(raw, real(cfg.scale));
    return prepare_dataset(std::move(raw), cfg.lookback, cfg.horizon, cfg.split);
}

}  // namespace toivsf
