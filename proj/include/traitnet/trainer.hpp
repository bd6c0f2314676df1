#pragma once

#include "traitnet/core.hpp"
#include "traitnet/dataset.hpp"
#include "traitnet/losses.hpp"
#include "traitnet/network.hpp"
#include "traitnet/weak_labels.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace traitnet {

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 256;
    double lr_init = 1e-5;
    double lr_min = 5e-6;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 5e-5;
    double clip_max_norm = 1.0;
    std::uint64_t seed = 0;
    std::size_t eval_every = 1;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

// Per-trait linear map fitted min -> 0, max -> 1. Values outside the fitted
// range map linearly outside [0, 1]; nothing is clamped.
class MinMaxScaler {
public:
    MinMaxScaler() = default;
    MinMaxScaler(PerTrait<double> min, PerTrait<double> max);

    // Each trait needs at least two distinct values.
    static MinMaxScaler fit(std::span<const PerTrait<double>> values,
                            std::span<const PerTrait<bool>> mask);

    double transform(TraitId t, double v) const;
    double inverse(TraitId t, double v) const;
    double min(TraitId t) const { return min_[index(t)]; }
    double max(TraitId t) const { return max_[index(t)]; }
    double range(TraitId t) const { return max_[index(t)] - min_[index(t)]; }

private:
    PerTrait<double> min_{0.0, 0.0, 0.0, 0.0};
    PerTrait<double> max_{1.0, 1.0, 1.0, 1.0};
};

void to_json(nlohmann::json& j, const MinMaxScaler& s);
void from_json(const nlohmann::json& j, MinMaxScaler& s);

// Scaler fitted on the species means behind every training sample's labels.
MinMaxScaler fit_label_scaler(const Dataset& dataset, std::span<const std::size_t> train,
                              const SpeciesStatsTable& stats);

struct StratumMember {
    std::size_t sample = 0;  // dataset index
    GrowthForm form = GrowthForm::Tree;
};

// Growth-form balanced batches: every batch holds floor(b/3) or ceil(b/3)
// samples of each form; ceil(3 * largest_stratum / b) batches per epoch.
std::vector<std::vector<std::size_t>> make_stratified_batches(std::span<const StratumMember> members,
                                                              std::size_t batch_size, std::uint64_t seed,
                                                              std::uint64_t epoch);

// Quota of `form` in batch `batch_index` for the given batch size.
std::size_t batch_quota(std::size_t batch_size, std::size_t batch_index, GrowthForm form);

double cosine_lr(double epoch, double total, double lr_init, double lr_min);

// Scales every gradient by max_norm / norm when the global L2 norm exceeds
// max_norm. Returns the norm observed before scaling.
double clip_grad_norm(std::span<ParamBlock> blocks, double max_norm);

class AdamW {
public:
    AdamW() = default;
    AdamW(double beta1, double beta2, double eps, double weight_decay)
        : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

    void step(std::span<ParamBlock> blocks, double lr);
    std::size_t steps() const { return t_; }

private:
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    double weight_decay_ = 0.0;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

BatchInputs make_batch_inputs(const Dataset& dataset, std::span<const std::size_t> samples,
                              const ModelConfig& cfg);

// Inference in fixed-size chunks; results do not depend on the worker count.
std::vector<Prediction> predict_samples(const FusionNetwork& net, const Dataset& dataset,
                                        std::span<const std::size_t> samples,
                                        std::size_t threads = 1);

// Coefficient of determination; nullopt when fewer than two points or the
// observations have zero variance.
std::optional<double> r_squared(std::span<const double> observed, std::span<const double> predicted);

struct EpochMetrics {
    std::size_t epoch = 0;  // completed epochs, 1-based
    double lr = 0.0;
    LossBreakdown loss;     // mean over batches
    double max_grad_norm = 0.0;
    std::size_t train_samples = 0;
    PerTrait<std::optional<double>> val_r2{};
    PerTrait<std::optional<double>> reference_r2{};
};

void to_json(nlohmann::json& j, const EpochMetrics& m);
EpochMetrics epoch_metrics_from_json(const nlohmann::json& j);

// Per-trait R^2 of inverse-scaled predictions against species medians.
PerTrait<std::optional<double>> median_r2(const FusionNetwork& net, const MinMaxScaler& scaler,
                                          const Dataset& dataset, const SpeciesStatsTable& stats,
                                          std::span<const std::size_t> samples);
// Per-trait R^2 against the observed trait values of reference samples.
PerTrait<std::optional<double>> observed_r2(const FusionNetwork& net, const MinMaxScaler& scaler,
                                            const Dataset& dataset, std::span<const std::size_t> samples);

class Trainer {
public:
    Trainer(const Dataset& dataset, const SpeciesStatsTable& stats, ModelConfig model, TrainConfig train,
            MinMaxScaler scaler, std::vector<std::size_t> train_samples, std::vector<std::size_t> val_samples,
            std::vector<std::size_t> reference_samples = {});

    // One pass over stratified batches followed by evaluation of the
    // float32-rounded parameters.
    EpochMetrics run_epoch();

    void set_train_samples(std::vector<std::size_t> samples);
    const std::vector<std::size_t>& train_samples() const { return train_; }

    std::size_t epochs_completed() const { return epoch_; }
    const FusionNetwork& network() const { return net_; }
    FusionNetwork& network() { return net_; }
    // Parameters as a checkpoint would store them.
    const FusionNetwork& snapshot() const { return snapshot_; }
    const MinMaxScaler& scaler() const { return scaler_; }
    const TrainConfig& train_config() const { return train_cfg_; }
    const ModelConfig& model_config() const { return net_.config(); }

    // Stratified batches for a given epoch of the current training set.
    std::vector<std::vector<std::size_t>> batches_for_epoch(std::uint64_t epoch) const;

private:
    const Dataset& dataset_;
    const SpeciesStatsTable& stats_;
    TrainConfig train_cfg_;
    MinMaxScaler scaler_;
    FusionNetwork net_;
    FusionNetwork snapshot_;
    AdamW optimizer_;
    std::vector<std::size_t> train_;
    std::vector<std::size_t> val_;
    std::vector<std::size_t> reference_;
    std::size_t epoch_ = 0;
};

using EpochCallback = std::function<void(const EpochMetrics&, const Trainer&)>;

// Trains for train.epochs epochs from a fresh initialization. The callback
// sees every epoch after evaluation (checkpoint writing hooks in here).
std::vector<EpochMetrics> train(const Dataset& dataset, const SpeciesStatsTable& stats,
                                const ModelConfig& model, const TrainConfig& train,
                                const EpochCallback& on_epoch = {});

}  // namespace traitnet
