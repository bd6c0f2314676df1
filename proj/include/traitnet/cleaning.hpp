#pragma once

#include "traitnet/core.hpp"
#include "traitnet/dataset.hpp"
#include "traitnet/network.hpp"
#include "traitnet/trainer.hpp"
#include "traitnet/weak_labels.hpp"

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace traitnet {

struct CleaningConfig {
    double stage1_top_fraction = 0.05;
    std::size_t stage1_max_iterations = 2;
    // nullopt: 0.5% of the stage's input training set, rounded.
    std::optional<std::size_t> stage1_stop_count;
    // Epochs trained before each stage-1 filter pass.
    std::size_t stage1_warmup_epochs = 1;
    double stage2_uncertainty_percentile = 0.95;
    double stage2_residual_threshold = 0.5;
    std::size_t stage2_iterations = 4;
    std::size_t turning_point_patience = 2;

    void validate() const;
    std::size_t resolved_stop_count(std::size_t train_size) const;
};

void to_json(nlohmann::json& j, const CleaningConfig& cfg);
void from_json(const nlohmann::json& j, CleaningConfig& cfg);

struct ResidualSummary {
    std::size_t evaluated = 0;        // samples whose species has the trait median
    std::size_t above_uncertainty = 0;
    std::size_t above_residual = 0;
    std::size_t above_both = 0;
    double mean_residual = 0.0;
    double max_residual = 0.0;
};

struct FilterReport {
    int stage = 1;
    std::size_t iteration = 0;  // 1-based
    std::size_t input_size = 0;
    std::vector<std::string> removed;
    PerTrait<double> uncertainty_thresholds{};
    PerTrait<std::optional<std::size_t>> turning_points{};  // stage 2, 1-based epochs
    PerTrait<ResidualSummary> residuals{};                  // stage 2
    std::size_t remaining = 0;
};

void to_json(nlohmann::json& j, const FilterReport& r);

struct JointFilterResult {
    std::vector<std::string> removed;
    PerTrait<double> thresholds{};
};

// Per-trait threshold at the (1 - top_fraction) quantile of the log-scales;
// a sample is removed when it exceeds every trait's threshold.
JointFilterResult joint_uncertainty_filter(std::span<const std::string> sample_ids,
                                           std::span<const Prediction> predictions, double top_fraction);

// 0-based index of the running maximum followed by `patience` strictly
// lower values; the first argmax when no such index exists.
std::size_t detect_turning_point(std::span<const double> series, std::size_t patience);

struct ResidualInput {
    std::string sample_id;
    std::string species_id;
    PerTrait<double> mu{};         // original units
    PerTrait<double> log_scale{};
};

struct ResidualFilterResult {
    std::vector<std::string> removed;
    PerTrait<double> thresholds{};
    PerTrait<ResidualSummary> summary{};
};

// Removes a sample when some trait has log-scale above that trait's
// uncertainty percentile and |mu - species median| / range above the
// residual threshold.
ResidualFilterResult residual_filter(std::span<const ResidualInput> inputs, const SpeciesStatsTable& stats,
                                     const PerTrait<double>& trait_range, const CleaningConfig& cfg);

std::vector<SampleRecord> remove_samples(std::span<const SampleRecord> records,
                                         std::span<const std::string> removed);

struct Stage1Result {
    std::vector<SampleRecord> records;
    FusionNetwork network;  // float32-rounded parameters
    MinMaxScaler scaler;
    std::size_t epochs = 0;
    std::vector<EpochMetrics> history;
    std::vector<FilterReport> reports;
};

Stage1Result run_stage1(const Dataset& dataset, const SpeciesStatsTable& stats, const ModelConfig& model,
                        const TrainConfig& train, const CleaningConfig& cleaning);

struct Stage2Result {
    std::vector<SampleRecord> records;
    std::vector<FilterReport> reports;
    std::vector<std::vector<EpochMetrics>> histories;  // one per iteration
};

Stage2Result run_stage2(const Dataset& dataset, const SpeciesStatsTable& stats, const ModelConfig& model,
                        const TrainConfig& train, const CleaningConfig& cleaning);

}  // namespace traitnet
