#pragma once

#include "traitnet/core.hpp"
#include "traitnet/dataset.hpp"
#include "traitnet/weak_labels.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace traitnet {

// Synthetic corpus. Species sit in twin pairs (2j, 2j+1) whose latent codes
// differ only in the last coordinate, which alone drives LA. Trait means are
// linear in the latent code; the noise scale is a smooth function of it.
// Feature corruption replaces image and depth tokens with wide noise.
// Label corruption models misidentification between confusable twins: the
// record names the twin species, optionally with extra token noise.
struct FixtureSpec {
    std::uint64_t seed = 1;
    std::size_t num_species = 60;            // even
    std::size_t samples = 900;               // Train + Val
    double train_fraction = 0.8;
    std::size_t reference_samples = 120;
    std::size_t inference_samples = 1200;
    std::size_t observations_per_species = 12;
    std::size_t latent_dim = 16;
    std::size_t image_tokens = 16;
    std::size_t image_dim = 16;
    std::size_t depth_tokens = 16;
    std::size_t depth_dim = 16;
    std::size_t geo_dim = 16;
    double token_noise = 0.1;
    double rel_std_min = 0.03;
    double rel_std_max = 0.3;
    double feature_corruption_fraction = 0.0;  // of Train samples
    double feature_corruption_std = 5.0;
    double label_corruption_fraction = 0.0;    // of Train samples
    double label_corruption_token_noise = 0.0;
    double label_confusion_share = 0.4;        // of a confused species' Train samples
    double lat_origin = 45.0;
    double lon_origin = 5.0;
    std::size_t grid_rows = 4;
    std::size_t grid_cols = 4;
    double cwm_noise = 0.03;                   // relative noise on observed CWMs

    void validate() const;
};

void to_json(nlohmann::json& j, const FixtureSpec& s);
void from_json(const nlohmann::json& j, FixtureSpec& s);

struct SpeciesTruth {
    GrowthForm growth_form = GrowthForm::Tree;
    PerTrait<double> mean{};
    PerTrait<double> std{};
};

struct FixtureTruth {
    std::map<std::string, SpeciesTruth> species;
    std::map<std::string, std::string> true_species;  // sample id -> species behind the photo
    std::vector<std::string> feature_corrupted;
    std::vector<std::string> label_corrupted;
};

void to_json(nlohmann::json& j, const FixtureTruth& t);
FixtureTruth fixture_truth_from_json(const nlohmann::json& j);

struct Fixture {
    FixtureSpec spec;
    std::vector<SampleRecord> records;
    std::map<Modality, EmbeddingStore> stores;
    std::vector<TraitObservation> observations;
    std::vector<GrowthFormClaim> claims;
    std::string observed_cwm_csv;  // grid map over Inference samples
    FixtureTruth truth;
};

Fixture make_fixture(const FixtureSpec& spec);

// File names inside a data directory.
std::filesystem::path metadata_file(const std::filesystem::path& dir);
std::filesystem::path embedding_file(const std::filesystem::path& dir, Modality m);

// Writes metadata.csv, the three embedding pairs, observations.csv,
// growth_form_claims.csv, observed_cwm.csv and truth.json.
void write_fixture(const Fixture& fixture, const std::filesystem::path& dir);

}  // namespace traitnet
