#include "traitnet/weak_labels.hpp"

#include "traitnet/dataset.hpp"
#include "traitnet/util.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include <fmt/format.h>

namespace traitnet {

void SpeciesStatsTable::set(const std::string& species_id, TraitId trait, TraitStats stats) {
    table_[species_id][index(trait)] = stats;
}

const TraitStats* SpeciesStatsTable::find(const std::string& species_id, TraitId trait) const {
    auto it = table_.find(species_id);
    if (it == table_.end()) return nullptr;
    const auto& entry = it->second[index(trait)];
    return entry ? &*entry : nullptr;
}

std::size_t SpeciesStatsTable::num_entries() const {
    std::size_t n = 0;
    for (const auto& [_, per_trait] : table_) {
        for (const auto& e : per_trait) n += e.has_value() ? 1 : 0;
    }
    return n;
}

SpeciesStatsTable compute_species_stats(std::span<const TraitObservation> observations) {
    std::map<std::string, PerTrait<std::vector<double>>> grouped;
    for (const auto& obs : observations) {
        if (!std::isfinite(obs.value)) {
            throw ValidationError(fmt::format("non-finite {} observation for species {}",
                                              trait_name(obs.trait), obs.species_id));
        }
        if (obs.value < 0.0) {
            throw ValidationError(fmt::format("negative {} observation ({}) for species {}",
                                              trait_name(obs.trait), obs.value, obs.species_id));
        }
        grouped[obs.species_id][index(obs.trait)].push_back(obs.value);
    }

    SpeciesStatsTable table;
    for (auto& [species, per_trait] : grouped) {
        for (auto t : kAllTraits) {
            auto& values = per_trait[index(t)];
            if (values.size() < kMinTraitObservations) continue;
            // Sorting first makes every downstream sum independent of input order.
            std::sort(values.begin(), values.end());
            const double lo = percentile_sorted(values, 0.05);
            const double hi = percentile_sorted(values, 0.99);
            std::vector<double> kept;
            kept.reserve(values.size());
            for (double v : values) {
                if (v >= lo && v <= hi) kept.push_back(v);
            }
            if (kept.size() < kMinTraitObservations) continue;
            const double n = static_cast<double>(kept.size());
            const double mean = std::accumulate(kept.begin(), kept.end(), 0.0) / n;
            double ss = 0.0;
            for (double v : kept) ss += (v - mean) * (v - mean);
            TraitStats s;
            s.mean = mean;
            s.std = std::sqrt(ss / n);
            s.median = percentile_sorted(kept, 0.5);
            s.count = kept.size();
            table.set(species, t, s);
        }
    }
    return table;
}

namespace {

template <typename Fn>
void for_each_csv_row(std::string_view text, std::string_view expected_header, std::string_view what,
                      Fn&& fn) {
    std::size_t pos = 0;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        auto line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (trim(line).empty()) continue;
        if (!header_seen) {
            if (trim(line) != expected_header) {
                throw ValidationError(fmt::format("{} line {}: expected header '{}'", what, line_no,
                                                  expected_header));
            }
            header_seen = true;
            continue;
        }
        fn(line_no, split_csv_line(line));
    }
    if (!header_seen) throw ValidationError(fmt::format("{}: missing header", what));
}

constexpr std::string_view kObservationsHeader = "species_id,trait,value";
constexpr std::string_view kStatsHeader = "species_id,trait,mean,std,median,count";
constexpr std::string_view kClaimsHeader = "species_id,growth_form";

TraitId require_trait(std::string_view field, std::string_view what, std::size_t line_no) {
    auto t = parse_trait(trim(field));
    if (!t) throw ValidationError(fmt::format("{} line {}, column 2: unknown trait '{}'", what, line_no, field));
    return *t;
}

double require_number(std::string_view field, std::string_view what, std::size_t line_no,
                      std::size_t column) {
    double v = 0.0;
    if (!parse_double(field, v) || !std::isfinite(v)) {
        throw ValidationError(
            fmt::format("{} line {}, column {}: not a number: '{}'", what, line_no, column, field));
    }
    return v;
}

}  // namespace

std::vector<TraitObservation> parse_observations(std::string_view text) {
    std::vector<TraitObservation> out;
    for_each_csv_row(text, kObservationsHeader, "observations", [&](std::size_t line_no, auto fields) {
        if (fields.size() != 3) {
            throw ValidationError(fmt::format("observations line {}: expected 3 columns, found {}",
                                              line_no, fields.size()));
        }
        TraitObservation obs;
        obs.species_id = std::string(trim(fields[0]));
        if (obs.species_id.empty()) {
            throw ValidationError(fmt::format("observations line {}, column 1: empty species_id", line_no));
        }
        obs.trait = require_trait(fields[1], "observations", line_no);
        obs.value = require_number(fields[2], "observations", line_no, 3);
        out.push_back(std::move(obs));
    });
    return out;
}

std::vector<TraitObservation> load_observations(const std::filesystem::path& path) {
    return parse_observations(read_text_file(path));
}

std::string format_species_stats(const SpeciesStatsTable& table) {
    std::string out(kStatsHeader);
    out += '\n';
    for (const auto& [species, per_trait] : table.entries()) {
        for (auto t : kAllTraits) {
            const auto& e = per_trait[index(t)];
            if (!e) continue;
            out += fmt::format("{},{},{},{},{},{}\n", species, trait_name(t), format_double(e->mean),
                               format_double(e->std), format_double(e->median), e->count);
        }
    }
    return out;
}

void save_species_stats(const std::filesystem::path& path, const SpeciesStatsTable& table) {
    write_text_file(path, format_species_stats(table));
}

SpeciesStatsTable parse_species_stats(std::string_view text) {
    SpeciesStatsTable table;
    for_each_csv_row(text, kStatsHeader, "species stats", [&](std::size_t line_no, auto fields) {
        if (fields.size() != 6) {
            throw ValidationError(fmt::format("species stats line {}: expected 6 columns, found {}",
                                              line_no, fields.size()));
        }
        TraitStats s;
        const auto trait = require_trait(fields[1], "species stats", line_no);
        s.mean = require_number(fields[2], "species stats", line_no, 3);
        s.std = require_number(fields[3], "species stats", line_no, 4);
        s.median = require_number(fields[4], "species stats", line_no, 5);
        if (!parse_size(fields[5], s.count)) {
            throw ValidationError(fmt::format("species stats line {}, column 6: bad count '{}'", line_no,
                                              fields[5]));
        }
        if (s.std < 0.0) {
            throw ValidationError(fmt::format("species stats line {}: negative std", line_no));
        }
        table.set(std::string(trim(fields[0])), trait, s);
    });
    return table;
}

SpeciesStatsTable load_species_stats(const std::filesystem::path& path) {
    return parse_species_stats(read_text_file(path));
}

std::optional<GrowthForm> normalize_growth_form(std::string_view raw) {
    std::string key;
    for (char c : trim(raw)) key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    static const std::unordered_map<std::string, GrowthForm> kSynonyms{
        {"tree", GrowthForm::Tree},         {"trees", GrowthForm::Tree},
        {"woody tree", GrowthForm::Tree},   {"t", GrowthForm::Tree},
        {"shrub", GrowthForm::Shrub},       {"shrubs", GrowthForm::Shrub},
        {"subshrub", GrowthForm::Shrub},    {"dwarf shrub", GrowthForm::Shrub},
        {"bush", GrowthForm::Shrub},        {"s", GrowthForm::Shrub},
        {"grass", GrowthForm::Grass},       {"grasses", GrowthForm::Grass},
        {"grassland", GrowthForm::Grass},   {"graminoid", GrowthForm::Grass},
        {"herb", GrowthForm::Grass},        {"herbaceous", GrowthForm::Grass},
        {"forb", GrowthForm::Grass},        {"g", GrowthForm::Grass},
    };
    auto it = kSynonyms.find(key);
    if (it == kSynonyms.end()) return std::nullopt;
    return it->second;
}

std::map<std::string, GrowthForm> resolve_growth_form(std::span<const GrowthFormClaim> claims) {
    std::map<std::string, std::array<std::size_t, kNumGrowthForms>> votes;
    for (const auto& c : claims) {
        auto form = normalize_growth_form(c.raw_form);
        if (!form) {
            throw ValidationError(
                fmt::format("unmappable growth form '{}' for species {}", c.raw_form, c.species_id));
        }
        votes[c.species_id][index(*form)] += 1;
    }
    std::map<std::string, GrowthForm> out;
    for (const auto& [species, counts] : votes) {
        // kAllGrowthForms is ordered Tree, Shrub, Grass; strict '>' keeps the
        // earlier class on ties.
        GrowthForm best = GrowthForm::Tree;
        std::size_t best_count = 0;
        for (auto g : kAllGrowthForms) {
            if (counts[index(g)] > best_count) {
                best = g;
                best_count = counts[index(g)];
            }
        }
        out.emplace(species, best);
    }
    return out;
}

std::vector<GrowthFormClaim> parse_growth_form_claims(std::string_view text) {
    std::vector<GrowthFormClaim> out;
    for_each_csv_row(text, kClaimsHeader, "growth-form claims", [&](std::size_t line_no, auto fields) {
        if (fields.size() != 2) {
            throw ValidationError(fmt::format("growth-form claims line {}: expected 2 columns, found {}",
                                              line_no, fields.size()));
        }
        out.push_back({std::string(trim(fields[0])), std::string(trim(fields[1]))});
    });
    return out;
}

std::vector<GrowthFormClaim> load_growth_form_claims(const std::filesystem::path& path) {
    return parse_growth_form_claims(read_text_file(path));
}

std::string format_growth_forms(const std::map<std::string, GrowthForm>& forms) {
    std::string out(kClaimsHeader);
    out += '\n';
    for (const auto& [species, form] : forms) {
        out += fmt::format("{},{}\n", species, growth_form_name(form));
    }
    return out;
}

double sample_label(const TraitStats& stats, std::uint64_t seed, std::uint64_t epoch,
                    std::string_view sample_id, TraitId trait) {
    if (stats.std <= 0.0) return stats.mean;
    Rng rng(mix_seed({seed, epoch, hash_string(sample_id), static_cast<std::uint64_t>(index(trait))}));
    const double half_width = kNormalQuartileZ * stats.std;
    while (true) {
        const double z = rng.normal();
        const double v = stats.mean + stats.std * z;
        if (v >= stats.mean - half_width && v <= stats.mean + half_width) return v;
    }
}

LabelTable assign_epoch_labels(const Dataset& dataset, std::span<const std::size_t> samples,
                               const SpeciesStatsTable& stats, std::uint64_t seed,
                               std::uint64_t epoch) {
    LabelTable table;
    table.epoch = epoch;
    table.samples.assign(samples.begin(), samples.end());
    table.values.resize(samples.size());
    table.mask.resize(samples.size());
    for (std::size_t k = 0; k < samples.size(); ++k) {
        const auto& rec = dataset.record(samples[k]);
        const auto& mask = dataset.mask(samples[k]);
        for (auto t : kAllTraits) {
            table.values[k][index(t)] = 0.0;
            table.mask[k][index(t)] = mask[index(t)];
            if (!mask[index(t)]) continue;
            const auto* s = stats.find(rec.species_id, t);
            if (s == nullptr) {
                throw ValidationError(fmt::format("no {} stats for species {} (sample {})", trait_name(t),
                                                  rec.species_id, rec.sample_id));
            }
            table.values[k][index(t)] = sample_label(*s, seed, epoch, rec.sample_id, t);
        }
    }
    return table;
}

}  // namespace traitnet
