#pragma once

#include "traitnet/core.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace traitnet {

class Dataset;

// Phi^{-1}(0.75): half-width of the interquartile range of a unit normal.
inline constexpr double kNormalQuartileZ = 0.6744897501960817;

inline constexpr std::size_t kMinTraitObservations = 3;

struct TraitStats {
    double mean = 0.0;
    double std = 0.0;  // population std of the trimmed observations
    double median = 0.0;
    std::size_t count = 0;
};

struct TraitObservation {
    std::string species_id;
    TraitId trait = TraitId::H;
    double value = 0.0;
};

class SpeciesStatsTable {
public:
    void set(const std::string& species_id, TraitId trait, TraitStats stats);
    const TraitStats* find(const std::string& species_id, TraitId trait) const;

    std::size_t num_species() const { return table_.size(); }
    std::size_t num_entries() const;
    bool empty() const { return table_.empty(); }

    const std::map<std::string, PerTrait<std::optional<TraitStats>>>& entries() const {
        return table_;
    }

private:
    std::map<std::string, PerTrait<std::optional<TraitStats>>> table_;
};

// Drops observations below the 5th / above the 99th percentile of each
// species-trait sample, then keeps entries with at least three survivors.
SpeciesStatsTable compute_species_stats(std::span<const TraitObservation> observations);

std::vector<TraitObservation> load_observations(const std::filesystem::path& path);
std::vector<TraitObservation> parse_observations(std::string_view csv_text);

std::string format_species_stats(const SpeciesStatsTable& table);
void save_species_stats(const std::filesystem::path& path, const SpeciesStatsTable& table);
SpeciesStatsTable parse_species_stats(std::string_view csv_text);
SpeciesStatsTable load_species_stats(const std::filesystem::path& path);

struct GrowthFormClaim {
    std::string species_id;
    std::string raw_form;
};

// Maps free-text growth forms (tree, graminoid, herb, ...) onto the three
// classes. Returns nullopt for strings outside the synonym map.
std::optional<GrowthForm> normalize_growth_form(std::string_view raw);

// Majority vote per species; ties go to Tree, then Shrub, then Grass.
std::map<std::string, GrowthForm> resolve_growth_form(std::span<const GrowthFormClaim> claims);

std::vector<GrowthFormClaim> parse_growth_form_claims(std::string_view csv_text);
std::vector<GrowthFormClaim> load_growth_form_claims(const std::filesystem::path& path);
std::string format_growth_forms(const std::map<std::string, GrowthForm>& forms);

// One draw from Normal(mean, std) truncated to mean +/- kNormalQuartileZ*std.
// Deterministic in (seed, epoch, sample_id, trait).
double sample_label(const TraitStats& stats, std::uint64_t seed, std::uint64_t epoch,
                    std::string_view sample_id, TraitId trait);

struct LabelTable {
    std::uint64_t epoch = 0;
    std::vector<std::size_t> samples;      // dataset indices, aligned with labels
    std::vector<PerTrait<double>> values;  // original units; masked entries are 0
    std::vector<PerTrait<bool>> mask;
};

LabelTable assign_epoch_labels(const Dataset& dataset, std::span<const std::size_t> samples,
                               const SpeciesStatsTable& stats, std::uint64_t seed,
                               std::uint64_t epoch);

}  // namespace traitnet
