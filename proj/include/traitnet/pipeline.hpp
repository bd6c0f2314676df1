#pragma once

#include "traitnet/cleaning.hpp"
#include "traitnet/dataset.hpp"
#include "traitnet/fixtures.hpp"
#include "traitnet/network.hpp"
#include "traitnet/selection.hpp"
#include "traitnet/trainer.hpp"
#include "traitnet/weak_labels.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace traitnet {

inline constexpr std::string_view kToolVersion = "traitnet 0.1.0";

struct EvalConfig {
    std::size_t min_count = 20;
    SelectionObjective objective = SelectionObjective::ValR2;
};

void to_json(nlohmann::json& j, const EvalConfig& cfg);
void from_json(const nlohmann::json& j, EvalConfig& cfg);

// One JSON document with "model", "train", "cleaning" and "eval" sections.
struct PipelineConfig {
    ModelConfig model;
    TrainConfig train;
    CleaningConfig cleaning;
    EvalConfig eval;
};

void to_json(nlohmann::json& j, const PipelineConfig& cfg);
void from_json(const nlohmann::json& j, PipelineConfig& cfg);

// Small model and schedule sized for the synthetic fixtures on one core.
PipelineConfig desk_config(const FixtureSpec& spec);

// Applies "section.key=value" overrides; the value is parsed as JSON when
// possible and taken as a string otherwise.
void apply_overrides(nlohmann::json& config, const std::vector<std::string>& overrides);

PipelineConfig load_config(const std::optional<std::filesystem::path>& path,
                           const std::vector<std::string>& overrides, std::optional<std::uint64_t> seed);

struct RunManifest {
    std::string command;
    std::string config_path;
    nlohmann::json config;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> inputs;
    std::vector<std::pair<std::string, std::string>> outputs;
    double wall_clock_seconds = 0.0;
};

inline constexpr std::string_view kManifestName = "run_manifest.json";
void write_run_manifest(const std::filesystem::path& out_dir, const RunManifest& manifest);

struct DataPaths {
    std::filesystem::path data_dir;               // embeddings (and metadata.csv by default)
    std::optional<std::filesystem::path> metadata;
    std::optional<std::filesystem::path> stats;   // species_stats.csv
};

struct LoadedData {
    SpeciesStatsTable stats;
    Dataset dataset;
};

LoadedData load_data(const DataPaths& paths, const ModelConfig& model);
Dataset rebuild_dataset(const Dataset& base, std::vector<SampleRecord> records, const SpeciesStatsTable& stats);

// Each run_* writes its outputs (and nothing else) under out_dir and returns
// the written paths.
using Outputs = std::vector<std::pair<std::string, std::string>>;

Outputs run_make_fixtures(const FixtureSpec& spec, const std::filesystem::path& out_dir);
Outputs run_prepare_labels(const std::filesystem::path& observations, const std::filesystem::path& claims,
                           const std::filesystem::path& out_dir, std::size_t* species_kept = nullptr);
Outputs run_train(const LoadedData& data, const PipelineConfig& cfg, const std::filesystem::path& out_dir);

enum class CleanStage { One, Two, All };
Outputs run_clean(const LoadedData& data, const PipelineConfig& cfg, CleanStage stage,
                  const std::filesystem::path& out_dir);

Outputs run_infer(const std::filesystem::path& checkpoint, const DataPaths& paths, std::optional<Split> split,
                  const std::filesystem::path& out_dir);
Outputs run_aggregate(const std::filesystem::path& predictions, std::size_t min_count,
                      const std::filesystem::path& out_dir);
Outputs run_benchmark(const std::vector<std::pair<std::string, std::filesystem::path>>& maps,
                      const std::filesystem::path& observed, const std::filesystem::path& out_dir);
Outputs run_select(const std::filesystem::path& metrics, SelectionObjective objective,
                   const std::filesystem::path& out_dir);

std::vector<EpochMetrics> load_metrics(const std::filesystem::path& path);

}  // namespace traitnet
