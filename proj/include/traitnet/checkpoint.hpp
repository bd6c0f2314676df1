#pragma once

#include "traitnet/dataset.hpp"
#include "traitnet/network.hpp"
#include "traitnet/trainer.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace traitnet {

// A checkpoint is a JSON manifest (config, epoch, seed, scaler, block
// shapes and byte offsets) next to a raw f32le parameter blob named after
// the manifest with a ".bin" extension.
struct Checkpoint {
    FusionNetwork network;
    MinMaxScaler scaler;
    std::size_t epoch = 0;
    std::uint64_t seed = 0;
};

void save_checkpoint(const std::filesystem::path& manifest_path, const FusionNetwork& net,
                     const MinMaxScaler& scaler, std::size_t epoch, std::uint64_t seed);
Checkpoint load_checkpoint(const std::filesystem::path& manifest_path);

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t epoch);

inline constexpr std::string_view kPredictionsHeader =
    "sample_id,lat,lon,mu_H,s_H,mu_LA,s_LA,mu_SLA,s_SLA,mu_LN,s_LN";

// mu in original trait units, s the scaled-space log-scale.
struct PredictionRow {
    std::string sample_id;
    double lat = 0.0;
    double lon = 0.0;
    PerTrait<double> mu{};
    PerTrait<double> log_scale{};
};

std::vector<PredictionRow> make_prediction_rows(const Dataset& dataset, std::span<const std::size_t> samples,
                                                std::span<const Prediction> predictions,
                                                const MinMaxScaler& scaler);
std::string format_predictions(std::span<const PredictionRow> rows);
std::vector<PredictionRow> parse_predictions(std::string_view csv_text);
std::vector<PredictionRow> load_predictions(const std::filesystem::path& path);

}  // namespace traitnet
