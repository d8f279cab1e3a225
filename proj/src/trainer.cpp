#include "toivsf/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "toivsf/errors.hpp"
#include "toivsf/ops.hpp"

namespace toivsf {

void TrainConfig::validate() const {
    if (!(alpha >= 0 && alpha <= 1) || !(beta >= 0 && beta <= 1)) {
        throw ConfigError("alpha and beta must lie in [0, 1]");
    }
    if (std::abs(alpha + beta - 1.0) > 1e-12) throw ConfigError("alpha + beta must equal 1");
    if (!(k > 0) || k > 1) throw ConfigError("subset fraction k must lie in (0, 1]");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0)) throw ConfigError("lr must be > 0");
    if (subset_encoding != "zero_fill") {
        throw ConfigError("subset_encoding '" + subset_encoding + "' is not supported (only zero_fill)");
    }
    if (!(grad_clip >= 0)) throw ConfigError("grad_clip must be >= 0");
    if (window_stride < 1) throw ConfigError("window_stride must be >= 1");
    if (valid_draws < 1) throw ConfigError("valid_draws must be >= 1");
    ImputerConfig ic = imputer;
    ic.num_vars = std::max<std::size_t>(ic.num_vars, 1);
    ic.validate();
    ForecasterConfig fc = forecaster;
    fc.num_vars = std::max<std::size_t>(fc.num_vars, 1);
    fc.validate();
}

std::unique_ptr<Imputer> make_imputer(const TrainConfig& cfg, std::size_t num_vars, Rng& rng) {
    ImputerConfig ic = cfg.imputer;
    ic.num_vars = num_vars;
    return std::make_unique<Imputer>(ic, rng);
}

std::unique_ptr<Forecaster> make_forecaster(const TrainConfig& cfg, std::size_t num_vars, Rng& rng) {
    ForecasterConfig fc = cfg.forecaster;
    fc.num_vars = num_vars;
    return make_forecaster(fc, rng);
}

void check_finite_grads(const std::vector<Parameter*>& params) {
    for (const Parameter* p : params) {
        if (!p->tensor.has_grad()) continue;
        for (real g : p->tensor.grad()) {
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p->name + "'");
        }
    }
}

Tensor joint_loss(const WindowBatch& batch, const SubsetMask& mask, const Imputer& imputer,
                  const Forecaster& forecaster, double alpha, double beta, LossTriple* parts) {
    SubsetBatch sb = apply_mask(batch, mask);
    Tensor recon = imputer.impute(sb);
    Tensor imp_loss = imputation_loss(recon, sb.target_full);
    Tensor total;
    double forecast_value;
    if (beta == 0) {
        {
            NoGradGuard guard;
            forecast_value = forecast_loss(forecaster.forward(recon.detach()), batch.horizon).item();
        }
        total = scale(imp_loss, real(alpha));
    } else {
        Tensor fc_loss = forecast_loss(forecaster.forward(recon), batch.horizon);
        forecast_value = fc_loss.item();
        total = alpha == 0 ? scale(fc_loss, real(beta)) : add(scale(imp_loss, real(alpha)), scale(fc_loss, real(beta)));
    }
    if (parts) {
        parts->imputation = imp_loss.item();
        parts->forecast = forecast_value;
        parts->total = total.item();
    }
    if (!std::isfinite(total.item())) throw NumericError("non-finite joint loss");
    return total;
}

LossTriple joint_step(const WindowBatch& batch, const SubsetMask& mask, Imputer& imputer, Forecaster& forecaster,
                      Adam& optimizer, const TrainConfig& cfg) {
    optimizer.zero_grad();
    LossTriple parts;
    Tensor loss = joint_loss(batch, mask, imputer, forecaster, cfg.alpha, cfg.beta, &parts);
    backward(loss);
    check_finite_grads(optimizer.params());
    if (cfg.grad_clip > 0) clip_grad_norm(optimizer.params(), real(cfg.grad_clip));
    optimizer.step();
    return parts;
}

namespace {

std::vector<std::size_t> strided(const std::vector<std::size_t>& starts, std::size_t stride) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < starts.size(); i += stride) out.push_back(starts[i]);
    return out;
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::vector<WindowBatch> valid_batches(const PreparedDataset& data, const TrainConfig& cfg) {
    return batch_windows(data.normalized, strided(data.windows.valid, cfg.window_stride), data.lookback, data.horizon,
                         cfg.batch_size);
}

double valid_reconstruction(const PreparedDataset& data, const TrainConfig& cfg, const Imputer& imputer) {
    NoGradGuard guard;
    double total = 0;
    std::size_t count = 0;
    for (const SubsetMask& mask : validation_masks(cfg, data.num_vars())) {
        for (const WindowBatch& b : valid_batches(data, cfg)) {
            SubsetBatch sb = apply_mask(b, mask);
            total += imputation_loss(imputer.impute(sb), sb.target_full).item() * static_cast<double>(b.lookback.numel());
            count += b.lookback.numel();
        }
    }
    return count ? total / static_cast<double>(count) : std::numeric_limits<double>::infinity();
}

struct StageSpec {
    std::string stage;
    std::vector<ParameterStore*> stores;
    bool draw_subsets = true;
    std::function<LossTriple(const WindowBatch&, const SubsetMask&, Adam&)> step;
    std::function<double()> validate;
};

// Shared epoch loop: per-epoch subset, shuffled batches, best-validation
// snapshot (ties keep the earlier epoch), optional early stop.
RunRecord run_stage(const PreparedDataset& data, const TrainConfig& cfg, StageSpec spec,
                    const EpochCallback& on_epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t n = data.num_vars();
    Rng root(cfg.seed);
    Rng subset_rng = root.split("subsets");
    Rng order_rng = root.split("order/" + spec.stage);
    std::vector<Parameter*> params;
    for (ParameterStore* s : spec.stores) {
        for (Parameter& p : s->items()) params.push_back(&p);
    }
    AdamConfig ac;
    ac.lr = real(cfg.lr);
    Adam optimizer(params, ac);

    std::vector<std::size_t> starts = strided(data.windows.train, cfg.window_stride);
    if (starts.empty()) throw ConfigError("training split has no windows");

    RunRecord record;
    record.stage = spec.stage;
    record.seed = cfg.seed;
    record.best_valid = std::numeric_limits<double>::infinity();
    std::vector<ParameterStore> best;
    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        EpochRecord er;
        er.epoch = epoch;
        SubsetMask mask = spec.draw_subsets ? sample_subset(n, cfg.k, subset_rng) : full_mask(n);
        er.subset = mask.indices();
        er.subset_tag = mask.seed_tag;
        shuffle(starts, order_rng);
        double weight = 0;
        for (std::size_t lo = 0; lo < starts.size(); lo += cfg.batch_size) {
            const std::size_t hi = std::min(starts.size(), lo + cfg.batch_size);
            WindowBatch batch = gather_windows(data.normalized, std::span<const std::size_t>(starts).subspan(lo, hi - lo),
                                               data.lookback, data.horizon);
            if (spec.draw_subsets && cfg.resample_per_batch && lo > 0) mask = sample_subset(n, cfg.k, subset_rng);
            LossTriple l = spec.step(batch, mask, optimizer);
            const double w = static_cast<double>(hi - lo);
            er.train.imputation += l.imputation * w;
            er.train.forecast += l.forecast * w;
            er.train.total += l.total * w;
            weight += w;
        }
        er.train.imputation /= weight;
        er.train.forecast /= weight;
        er.train.total /= weight;
        er.valid_loss = spec.validate();
        if (!std::isfinite(er.valid_loss)) throw NumericError("non-finite validation loss in epoch " + std::to_string(epoch));
        if (er.valid_loss < record.best_valid) {
            record.best_valid = er.valid_loss;
            record.best_epoch = epoch;
            best.clear();
            for (ParameterStore* s : spec.stores) best.push_back(s->clone());
            since_best = 0;
        } else {
            ++since_best;
        }
        record.epochs.push_back(er);
        if (on_epoch) on_epoch(er);
        if (cfg.patience > 0 && since_best >= cfg.patience) {
            record.stopped_early = true;
            break;
        }
    }
    for (std::size_t i = 0; i < spec.stores.size(); ++i) spec.stores[i]->assign(best[i]);
    record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return record;
}

void fit_step(Adam& optimizer, const TrainConfig& cfg, const Tensor& loss) {
    backward(loss);
    check_finite_grads(optimizer.params());
    if (cfg.grad_clip > 0) clip_grad_norm(optimizer.params(), real(cfg.grad_clip));
    optimizer.step();
}

}  // namespace

std::vector<SubsetMask> validation_masks(const TrainConfig& cfg, std::size_t num_vars) {
    Rng rng = Rng(cfg.seed).split("validation-subsets");
    std::vector<SubsetMask> masks;
    for (std::size_t d = 0; d < cfg.valid_draws; ++d) masks.push_back(sample_subset(num_vars, cfg.k, rng));
    return masks;
}

double validation_loss(const PreparedDataset& data, const TrainConfig& cfg, const Imputer* imputer,
                       const Forecaster& forecaster) {
    NoGradGuard guard;
    std::vector<SubsetMask> masks = imputer ? validation_masks(cfg, data.num_vars()) : std::vector<SubsetMask>{full_mask(data.num_vars())};
    double total = 0;
    std::size_t count = 0;
    for (const SubsetMask& mask : masks) {
        for (const WindowBatch& b : valid_batches(data, cfg)) {
            Tensor input = imputer ? imputer->impute(apply_mask(b, mask)) : b.lookback;
            total += forecast_loss(forecaster.forward(input), b.horizon).item() * static_cast<double>(b.horizon.numel());
            count += b.horizon.numel();
        }
    }
    return count ? total / static_cast<double>(count) : std::numeric_limits<double>::infinity();
}

TrainedModels train_joint(const PreparedDataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    Rng root(cfg.seed);
    Rng init_imp = root.split("init/imputer");
    Rng init_fc = root.split("init/forecaster");
    TrainedModels models;
    models.imputer = make_imputer(cfg, data.num_vars(), init_imp);
    models.forecaster = make_forecaster(cfg, data.num_vars(), init_fc);
    Imputer& imp = *models.imputer;
    Forecaster& fc = *models.forecaster;
    StageSpec spec;
    spec.stage = "joint";
    spec.stores = {&imp.params(), &fc.params()};
    spec.step = [&](const WindowBatch& b, const SubsetMask& m, Adam& opt) { return joint_step(b, m, imp, fc, opt, cfg); };
    spec.validate = [&] { return validation_loss(data, cfg, &imp, fc); };
    models.records.push_back(run_stage(data, cfg, std::move(spec), on_epoch));
    return models;
}

RunRecord train_reference(const PreparedDataset& data, const TrainConfig& cfg, Forecaster& forecaster,
                          const EpochCallback& on_epoch) {
    cfg.validate();
    StageSpec spec;
    spec.stage = "reference";
    spec.stores = {&forecaster.params()};
    spec.draw_subsets = false;
    spec.step = [&](const WindowBatch& b, const SubsetMask&, Adam& opt) {
        opt.zero_grad();
        Tensor loss = forecast_loss(forecaster.forward(b.lookback), b.horizon);
        LossTriple l;
        l.forecast = l.total = loss.item();
        fit_step(opt, cfg, loss);
        return l;
    };
    spec.validate = [&] { return validation_loss(data, cfg, nullptr, forecaster); };
    return run_stage(data, cfg, std::move(spec), on_epoch);
}

void add_reference(TrainedModels& models, const PreparedDataset& data, const TrainConfig& cfg,
                   const EpochCallback& on_epoch) {
    Rng init = Rng(cfg.seed).split("init/reference");
    models.reference = make_forecaster(cfg, data.num_vars(), init);
    models.records.push_back(train_reference(data, cfg, *models.reference, on_epoch));
}

RunRecord pretrain_imputer(const PreparedDataset& data, const TrainConfig& cfg, Imputer& imputer,
                           const EpochCallback& on_epoch) {
    cfg.validate();
    StageSpec spec;
    spec.stage = "pretrain";
    spec.stores = {&imputer.params()};
    spec.step = [&](const WindowBatch& b, const SubsetMask& m, Adam& opt) {
        opt.zero_grad();
        SubsetBatch sb = apply_mask(b, m);
        Tensor loss = imputation_loss(imputer.impute(sb), sb.target_full);
        LossTriple l;
        l.imputation = l.total = loss.item();
        fit_step(opt, cfg, loss);
        return l;
    };
    spec.validate = [&] { return valid_reconstruction(data, cfg, imputer); };
    return run_stage(data, cfg, std::move(spec), on_epoch);
}

RunRecord train_on_frozen(const PreparedDataset& data, const TrainConfig& cfg, const Imputer& imputer,
                          Forecaster& forecaster, const EpochCallback& on_epoch) {
    cfg.validate();
    StageSpec spec;
    spec.stage = "frozen";
    spec.stores = {&forecaster.params()};
    spec.step = [&](const WindowBatch& b, const SubsetMask& m, Adam& opt) {
        opt.zero_grad();
        Tensor recon;
        {
            NoGradGuard guard;
            recon = imputer.impute(apply_mask(b, m));
        }
        Tensor loss = forecast_loss(forecaster.forward(recon.detach()), b.horizon);
        LossTriple l;
        l.forecast = l.total = loss.item();
        fit_step(opt, cfg, loss);
        return l;
    };
    spec.validate = [&] { return validation_loss(data, cfg, &imputer, forecaster); };
    return run_stage(data, cfg, std::move(spec), on_epoch);
}

TrainedModels pretrain_then_freeze(const PreparedDataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    Rng root(cfg.seed);
    Rng init_imp = root.split("init/imputer");
    Rng init_fc = root.split("init/forecaster");
    TrainedModels models;
    models.imputer = make_imputer(cfg, data.num_vars(), init_imp);
    models.forecaster = make_forecaster(cfg, data.num_vars(), init_fc);
    models.records.push_back(pretrain_imputer(data, cfg, *models.imputer, on_epoch));
    models.records.push_back(train_on_frozen(data, cfg, *models.imputer, *models.forecaster, on_epoch));
    return models;
}

}  // namespace toivsf
