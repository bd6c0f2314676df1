#include "traitnet/dataset.hpp"

#include "traitnet/util.hpp"
#include "traitnet/weak_labels.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace traitnet {

namespace {

constexpr std::size_t kMetadataColumns = 10;
constexpr std::array<std::string_view, kMetadataColumns> kMetadataColumnNames{
    "sample_id", "species_id", "lat", "lon", "growth_form", "split",
    "obs_H",     "obs_LA",     "obs_SLA", "obs_LN"};

[[noreturn]] void metadata_error(std::size_t line, std::size_t column, const std::string& what) {
    throw ValidationError(fmt::format("metadata line {}, column {} ({}): {}", line, column + 1,
                                      kMetadataColumnNames[std::min(column, kMetadataColumns - 1)],
                                      what));
}

float read_f32le(const char* p) {
    std::uint32_t bits = 0;
    std::memcpy(&bits, p, sizeof(bits));
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    float f = 0.0f;
    std::memcpy(&f, &bits, sizeof(f));
    return f;
}

void write_f32le(char* p, float f) {
    std::uint32_t bits = 0;
    std::memcpy(&bits, &f, sizeof(bits));
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    std::memcpy(p, &bits, sizeof(bits));
}

}  // namespace

std::vector<SampleRecord> parse_metadata(std::string_view text) {
    std::vector<SampleRecord> records;
    std::set<std::string> seen;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool header_seen = false;
    while (pos <= text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        std::string_view line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (trim(line).empty()) {
            if (eol == text.size()) break;
            continue;
        }
        if (!header_seen) {
            if (trim(line) != kMetadataHeader) {
                throw ValidationError(fmt::format(
                    "metadata line {}: expected header '{}'", line_no, kMetadataHeader));
            }
            header_seen = true;
            continue;
        }
        auto fields = split_csv_line(line);
        if (fields.size() < kMetadataColumns) {
            metadata_error(line_no, fields.size(),
                           fmt::format("expected {} columns, found {}", kMetadataColumns,
                                       fields.size()));
        }
        // Trailing empty columns are tolerated (spreadsheet exports pad rows).
        for (std::size_t c = kMetadataColumns; c < fields.size(); ++c) {
            if (!trim(fields[c]).empty()) {
                metadata_error(line_no, c, "unexpected extra column");
            }
        }
        SampleRecord r;
        r.sample_id = std::string(trim(fields[0]));
        r.species_id = std::string(trim(fields[1]));
        if (r.sample_id.empty()) metadata_error(line_no, 0, "empty sample_id");
        if (r.species_id.empty()) metadata_error(line_no, 1, "empty species_id");
        if (!parse_double(fields[2], r.lat) || !std::isfinite(r.lat)) {
            metadata_error(line_no, 2, fmt::format("not a number: '{}'", fields[2]));
        }
        if (!parse_double(fields[3], r.lon) || !std::isfinite(r.lon)) {
            metadata_error(line_no, 3, fmt::format("not a number: '{}'", fields[3]));
        }
        if (r.lat < -90.0 || r.lat > 90.0) {
            metadata_error(line_no, 2, fmt::format("lat out of range: {}", r.lat));
        }
        if (r.lon < -180.0 || r.lon >= 180.0) {
            metadata_error(line_no, 3, fmt::format("lon out of range: {}", r.lon));
        }
        auto form = parse_growth_form(trim(fields[4]));
        if (!form) metadata_error(line_no, 4, fmt::format("unknown growth form '{}'", fields[4]));
        r.growth_form = *form;
        auto split = parse_split(trim(fields[5]));
        if (!split) metadata_error(line_no, 5, fmt::format("unknown split '{}'", fields[5]));
        r.split = *split;
        bool any_observed = false;
        for (std::size_t t = 0; t < kNumTraits; ++t) {
            auto field = trim(fields[6 + t]);
            if (field.empty()) continue;
            double v = 0.0;
            if (!parse_double(field, v) || !std::isfinite(v)) {
                metadata_error(line_no, 6 + t, fmt::format("not a number: '{}'", field));
            }
            r.observed[t] = v;
            any_observed = true;
        }
        if (r.split == Split::Reference && !any_observed) {
            metadata_error(line_no, 6, "reference sample without observed traits");
        }
        if (!seen.insert(r.sample_id).second) {
            throw ValidationError(
                fmt::format("metadata line {}: duplicate sample_id {}", line_no, r.sample_id));
        }
        records.push_back(std::move(r));
    }
    if (!header_seen) throw ValidationError("metadata: missing header");
    return records;
}

std::vector<SampleRecord> load_metadata(const std::filesystem::path& path) {
    try {
        return parse_metadata(read_text_file(path));
    } catch (const ValidationError& e) {
        throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

std::string format_metadata(std::span<const SampleRecord> records) {
    std::string out(kMetadataHeader);
    out += '\n';
    for (const auto& r : records) {
        out += fmt::format("{},{},{},{},{},{}", r.sample_id, r.species_id, format_double(r.lat),
                           format_double(r.lon), growth_form_name(r.growth_form),
                           split_name(r.split));
        for (const auto& v : r.observed) {
            out += ',';
            if (v) out += format_double(*v);
        }
        out += '\n';
    }
    return out;
}

void save_metadata(const std::filesystem::path& path, std::span<const SampleRecord> records) {
    write_text_file(path, format_metadata(records));
}

EmbeddingStore::EmbeddingStore(Modality modality, std::size_t tokens, std::size_t dim,
                               std::vector<std::string> sample_ids, std::vector<float> values)
    : modality_(modality),
      tokens_(tokens),
      dim_(dim),
      sample_ids_(std::move(sample_ids)),
      values_(std::move(values)) {
    if (tokens_ == 0 || dim_ == 0) throw ValidationError("embedding store: tokens and dim must be >= 1");
    if (modality_ == Modality::GeoVector && tokens_ != 1) {
        throw ValidationError("embedding store: GeoVector requires tokens = 1");
    }
    if (values_.size() != sample_ids_.size() * tokens_ * dim_) {
        throw ValidationError(fmt::format("embedding store: {} values for {} x {} x {}",
                                          values_.size(), sample_ids_.size(), tokens_, dim_));
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!std::isfinite(values_[i])) {
            throw ValidationError(fmt::format("non-finite value at index {}", i));
        }
    }
    index_.reserve(sample_ids_.size());
    for (std::size_t i = 0; i < sample_ids_.size(); ++i) {
        if (!index_.emplace(sample_ids_[i], i).second) {
            throw ValidationError(
                fmt::format("embedding store: duplicate sample id {}", sample_ids_[i]));
        }
    }
}

std::optional<std::size_t> EmbeddingStore::find(const std::string& sample_id) const {
    auto it = index_.find(sample_id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

TokenView EmbeddingStore::row(std::size_t i) const {
    const std::size_t stride = tokens_ * dim_;
    return TokenView{std::span<const float>(values_).subspan(i * stride, stride), tokens_, dim_};
}

std::filesystem::path sidecar_path_for(const std::filesystem::path& bin_path) {
    auto p = bin_path;
    p.replace_extension(".json");
    return p;
}

EmbeddingStore decode_embeddings(std::span<const char> blob, std::string_view sidecar_json) {
    nlohmann::json side;
    try {
        side = nlohmann::json::parse(sidecar_json);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(fmt::format("embedding sidecar: {}", e.what()));
    }
    auto require = [&](const char* key) -> const nlohmann::json& {
        if (!side.contains(key)) throw ValidationError(fmt::format("embedding sidecar: missing '{}'", key));
        return side.at(key);
    };
    try {
        const auto modality_str = require("modality").get<std::string>();
        const auto modality = parse_modality(modality_str);
        if (!modality) throw ValidationError(fmt::format("embedding sidecar: unknown modality '{}'", modality_str));
        const auto num_samples = require("num_samples").get<std::size_t>();
        const auto tokens = require("tokens").get<std::size_t>();
        const auto dim = require("dim").get<std::size_t>();
        if (require("dtype").get<std::string>() != "f32le") {
            throw ValidationError("embedding sidecar: dtype must be f32le");
        }
        if (require("order").get<std::string>() != "row-major") {
            throw ValidationError("embedding sidecar: order must be row-major");
        }
        auto ids = require("sample_ids").get<std::vector<std::string>>();
        if (ids.size() != num_samples) {
            throw ValidationError(fmt::format("embedding sidecar: num_samples {} but {} sample_ids",
                                              num_samples, ids.size()));
        }
        const std::size_t count = num_samples * tokens * dim;
        const std::size_t expected = count * sizeof(float);
        if (blob.size() != expected) {
            throw ValidationError(fmt::format("embedding blob length mismatch: expected {} bytes, got {}",
                                              expected, blob.size()));
        }
        std::vector<float> values(count);
        for (std::size_t i = 0; i < count; ++i) {
            values[i] = read_f32le(blob.data() + i * sizeof(float));
            if (!std::isfinite(values[i])) {
                throw ValidationError(fmt::format("non-finite value at index {}", i));
            }
        }
        return EmbeddingStore(*modality, tokens, dim, std::move(ids), std::move(values));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(fmt::format("embedding sidecar: {}", e.what()));
    }
}

EmbeddingStore load_embeddings(const std::filesystem::path& bin_path,
                               const std::filesystem::path& sidecar_path) {
    const auto blob = read_binary_file(bin_path);
    const auto side = read_text_file(sidecar_path);
    try {
        return decode_embeddings(blob, side);
    } catch (const ValidationError& e) {
        throw ValidationError(fmt::format("{}: {}", bin_path.string(), e.what()));
    }
}

void save_embeddings(const EmbeddingStore& store, const std::filesystem::path& bin_path,
                     const std::filesystem::path& sidecar_path) {
    const auto values = store.values();
    std::vector<char> blob(values.size() * sizeof(float));
    for (std::size_t i = 0; i < values.size(); ++i) write_f32le(blob.data() + i * sizeof(float), values[i]);
    write_binary_file(bin_path, blob);
    nlohmann::json side = {
        {"modality", std::string(modality_name(store.modality()))},
        {"num_samples", store.num_samples()},
        {"tokens", store.tokens()},
        {"dim", store.dim()},
        {"dtype", "f32le"},
        {"order", "row-major"},
        {"sample_ids", store.sample_ids()},
    };
    write_text_file(sidecar_path, side.dump(1) + "\n");
}

Dataset::Dataset(std::vector<SampleRecord> records, std::map<Modality, EmbeddingStore> stores,
                 const SpeciesStatsTable& stats)
    : records_(std::move(records)), stores_(std::move(stores)) {
    if (!stores_.contains(Modality::ImageTokens)) {
        throw ValidationError("dataset: image token store is required");
    }
    index_.reserve(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
        if (!index_.emplace(records_[i].sample_id, i).second) {
            throw ValidationError(fmt::format("dataset: duplicate sample_id {}", records_[i].sample_id));
        }
    }
    for (const auto& [modality, store] : stores_) {
        if (store.modality() != modality) {
            throw ValidationError(fmt::format("dataset: store registered as {} declares {}",
                                              modality_name(modality), modality_name(store.modality())));
        }
        auto& rows = rows_[modality];
        rows.resize(records_.size());
        for (std::size_t i = 0; i < records_.size(); ++i) {
            auto row = store.find(records_[i].sample_id);
            if (!row) {
                throw ValidationError(fmt::format("dataset: sample {} missing from {} store",
                                                  records_[i].sample_id, modality_name(modality)));
            }
            rows[i] = *row;
        }
    }
    mask_.resize(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
        for (auto t : kAllTraits) {
            mask_[i][index(t)] = stats.find(records_[i].species_id, t) != nullptr;
        }
    }
}

const EmbeddingStore& Dataset::store(Modality m) const {
    auto it = stores_.find(m);
    if (it == stores_.end()) {
        throw ValidationError(fmt::format("dataset has no {} store", modality_name(m)));
    }
    return it->second;
}

TokenView Dataset::tokens(Modality m, std::size_t sample) const {
    return store(m).row(rows_.at(m)[sample]);
}

std::optional<std::size_t> Dataset::find(const std::string& sample_id) const {
    auto it = index_.find(sample_id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::vector<std::size_t> Dataset::indices_with_split(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records_.size(); ++i) {
        if (records_[i].split == s) out.push_back(i);
    }
    return out;
}

SplitResult stratified_split(std::span<const SampleRecord> records, double train_fraction,
                             std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw std::invalid_argument(fmt::format("train_fraction must be in (0,1), got {}", train_fraction));
    }
    std::array<std::vector<std::string>, kNumGrowthForms> strata;
    for (const auto& r : records) strata[index(r.growth_form)].push_back(r.sample_id);

    SplitResult out;
    for (auto form : kAllGrowthForms) {
        auto& ids = strata[index(form)];
        if (ids.empty()) continue;
        if (ids.size() < 2) {
            throw ValidationError(fmt::format("stratified split: stratum {} has fewer than 2 records",
                                              growth_form_name(form)));
        }
        std::sort(ids.begin(), ids.end());
        Rng rng(mix_seed({seed, static_cast<std::uint64_t>(index(form))}));
        rng.shuffle(ids);
        const double n = static_cast<double>(ids.size());
        auto n_train = static_cast<std::size_t>(std::llround(train_fraction * n));
        n_train = std::clamp<std::size_t>(n_train, 1, ids.size() - 1);
        out.train.insert(out.train.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
        out.val.insert(out.val.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
    }
    return out;
}

}  // namespace traitnet
