#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "toivsf/data.hpp"
#include "toivsf/forecaster.hpp"
#include "toivsf/imputer.hpp"
#include "toivsf/optim.hpp"
#include "toivsf/subset.hpp"

namespace toivsf {

struct TrainConfig {
    double alpha = 0.5;
    double beta = 0.5;
    double k = 0.15;
    std::size_t epochs = 100;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    // Missing rows are presented as zeros; no other encoding is implemented.
    std::string subset_encoding = "zero_fill";
    bool resample_per_batch = false;
    // Epochs without validation improvement before stopping; 0 disables.
    std::size_t patience = 0;
    double grad_clip = 5.0;
    // Spacing between consecutive training window starts.
    std::size_t window_stride = 1;
    // Fixed subset draws used to score validation batches.
    std::size_t valid_draws = 3;
    ImputerConfig imputer;
    ForecasterConfig forecaster;

    void validate() const;
};

struct LossTriple {
    double imputation = 0;
    double forecast = 0;
    double total = 0;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    LossTriple train;
    // validation forecast loss, or reconstruction loss for imputer pretraining
    double valid_loss = 0;
    std::vector<std::size_t> subset;
    std::uint64_t subset_tag = 0;
};

struct RunRecord {
    std::string stage;
    std::uint64_t seed = 0;
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_valid = 0;
    bool stopped_early = false;
    double wall_seconds = 0;
};

// The trainable pieces of one pipeline. `reference` is a forecaster trained on
// complete inputs; it serves the settings that bypass the imputer.
struct TrainedModels {
    std::unique_ptr<Imputer> imputer;
    std::unique_ptr<Forecaster> forecaster;
    std::unique_ptr<Forecaster> reference;
    std::vector<RunRecord> records;
};

// Builds freshly initialized models for the dataset's variable count.
std::unique_ptr<Imputer> make_imputer(const TrainConfig& cfg, std::size_t num_vars, Rng& rng);
std::unique_ptr<Forecaster> make_forecaster(const TrainConfig& cfg, std::size_t num_vars, Rng& rng);

// Combined loss on one batch without touching parameters. The returned tensor
// is the weighted total; `parts` receives the individual values.
Tensor joint_loss(const WindowBatch& batch, const SubsetMask& mask, const Imputer& imputer,
                  const Forecaster& forecaster, double alpha, double beta, LossTriple* parts = nullptr);

// One update of both models on the combined loss. With beta = 0 the forecaster
// is left out of the graph; its parameters keep their values.
LossTriple joint_step(const WindowBatch& batch, const SubsetMask& mask, Imputer& imputer, Forecaster& forecaster,
                      Adam& optimizer, const TrainConfig& cfg);

using EpochCallback = std::function<void(const EpochRecord&)>;

// Joint training. The best-validation parameters are restored before return.
TrainedModels train_joint(const PreparedDataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Forecaster alone on complete inputs.
RunRecord train_reference(const PreparedDataset& data, const TrainConfig& cfg, Forecaster& forecaster,
                          const EpochCallback& on_epoch = {});
// Initializes and trains models.reference, appending its record.
void add_reference(TrainedModels& models, const PreparedDataset& data, const TrainConfig& cfg,
                   const EpochCallback& on_epoch = {});

// Imputer alone on the reconstruction loss with per-epoch subsets.
RunRecord pretrain_imputer(const PreparedDataset& data, const TrainConfig& cfg, Imputer& imputer,
                           const EpochCallback& on_epoch = {});

// Forecaster alone on imputed inputs from a frozen imputer.
RunRecord train_on_frozen(const PreparedDataset& data, const TrainConfig& cfg, const Imputer& imputer,
                          Forecaster& forecaster, const EpochCallback& on_epoch = {});

// Two-stage pipeline without joint learning: pretrain, freeze, then train the
// forecaster on imputed inputs.
TrainedModels pretrain_then_freeze(const PreparedDataset& data, const TrainConfig& cfg,
                                   const EpochCallback& on_epoch = {});

// Validation forecast loss of the imputer + forecaster pipeline over all N
// variables, averaged over the fixed validation draws.
double validation_loss(const PreparedDataset& data, const TrainConfig& cfg, const Imputer* imputer,
                       const Forecaster& forecaster);

// Subset masks used to score validation windows for a given seed.
std::vector<SubsetMask> validation_masks(const TrainConfig& cfg, std::size_t num_vars);

// Throws NumericError naming the first parameter whose gradient is not finite.
void check_finite_grads(const std::vector<Parameter*>& params);

}  // namespace toivsf
