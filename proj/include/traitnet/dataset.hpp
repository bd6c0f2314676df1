#pragma once

#include "traitnet/core.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace traitnet {

struct SampleRecord {
    std::string sample_id;
    std::string species_id;
    double lat = 0.0;
    double lon = 0.0;
    GrowthForm growth_form = GrowthForm::Tree;
    Split split = Split::Train;
    PerTrait<std::optional<double>> observed{};  // Reference samples only
};

inline constexpr std::string_view kMetadataHeader =
    "sample_id,species_id,lat,lon,growth_form,split,obs_H,obs_LA,obs_SLA,obs_LN";

std::vector<SampleRecord> parse_metadata(std::string_view csv_text);
std::vector<SampleRecord> load_metadata(const std::filesystem::path& path);
std::string format_metadata(std::span<const SampleRecord> records);
void save_metadata(const std::filesystem::path& path, std::span<const SampleRecord> records);

// Row-major token matrix borrowed from an EmbeddingStore.
struct TokenView {
    std::span<const float> values;
    std::size_t tokens = 0;
    std::size_t dim = 0;

    float at(std::size_t token, std::size_t channel) const { return values[token * dim + channel]; }
};

// Frozen-encoder outputs for one modality: num_samples x tokens x dim floats.
class EmbeddingStore {
public:
    EmbeddingStore() = default;
    EmbeddingStore(Modality modality, std::size_t tokens, std::size_t dim,
                   std::vector<std::string> sample_ids, std::vector<float> values);

    Modality modality() const { return modality_; }
    std::size_t num_samples() const { return sample_ids_.size(); }
    std::size_t tokens() const { return tokens_; }
    std::size_t dim() const { return dim_; }
    const std::vector<std::string>& sample_ids() const { return sample_ids_; }
    std::span<const float> values() const { return values_; }

    std::optional<std::size_t> find(const std::string& sample_id) const;
    TokenView row(std::size_t i) const;

private:
    Modality modality_ = Modality::ImageTokens;
    std::size_t tokens_ = 0;
    std::size_t dim_ = 0;
    std::vector<std::string> sample_ids_;
    std::vector<float> values_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Sidecar path convention: "<blob>.bin" pairs with "<blob>.json".
std::filesystem::path sidecar_path_for(const std::filesystem::path& bin_path);

EmbeddingStore load_embeddings(const std::filesystem::path& bin_path,
                               const std::filesystem::path& sidecar_path);
// Decodes an in-memory blob against sidecar JSON text.
EmbeddingStore decode_embeddings(std::span<const char> blob, std::string_view sidecar_json);
void save_embeddings(const EmbeddingStore& store, const std::filesystem::path& bin_path,
                     const std::filesystem::path& sidecar_path);

class SpeciesStatsTable;

// Immutable view of one dataset: records plus the embedding rows that back
// them and the per-(sample, trait) label availability mask.
class Dataset {
public:
    Dataset(std::vector<SampleRecord> records, std::map<Modality, EmbeddingStore> stores,
            const SpeciesStatsTable& stats);

    std::size_t size() const { return records_.size(); }
    const std::vector<SampleRecord>& records() const { return records_; }
    const SampleRecord& record(std::size_t i) const { return records_[i]; }
    const PerTrait<bool>& mask(std::size_t i) const { return mask_[i]; }

    bool has(Modality m) const { return stores_.contains(m); }
    const EmbeddingStore& store(Modality m) const;
    TokenView tokens(Modality m, std::size_t sample) const;

    std::optional<std::size_t> find(const std::string& sample_id) const;
    std::vector<std::size_t> indices_with_split(Split s) const;

private:
    std::vector<SampleRecord> records_;
    std::map<Modality, EmbeddingStore> stores_;
    std::map<Modality, std::vector<std::size_t>> rows_;
    std::vector<PerTrait<bool>> mask_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct SplitResult {
    std::vector<std::string> train;
    std::vector<std::string> val;
};

// Per-growth-form split: records are sorted by sample_id inside each stratum
// and shuffled with a generator seeded from (seed, growth-form index).
SplitResult stratified_split(std::span<const SampleRecord> records, double train_fraction,
                             std::uint64_t seed);

}  // namespace traitnet
