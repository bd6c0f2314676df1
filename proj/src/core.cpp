#include "traitnet/core.hpp"

#include <algorithm>
#include <cctype>

namespace traitnet {

namespace {

bool iequals(std::string_view a, std::string_view b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
               return std::tolower(static_cast<unsigned char>(x)) ==
                      std::tolower(static_cast<unsigned char>(y));
           });
}

constexpr std::array<std::string_view, kNumTraits> kTraitNames{"H", "LA", "SLA", "LN"};
constexpr std::array<std::string_view, kNumTraits> kTraitUnits{"m", "cm2", "mm2/mg", "mg/g"};
constexpr std::array<std::string_view, kNumGrowthForms> kFormNames{"Tree", "Shrub", "Grass"};
constexpr std::array<std::string_view, 4> kSplitNames{"Train", "Val", "Reference", "Inference"};
constexpr std::array<std::string_view, 3> kModalityNames{"ImageTokens", "DepthTokens", "GeoVector"};

}  // namespace

std::string_view trait_name(TraitId t) { return kTraitNames[index(t)]; }
std::string_view trait_unit(TraitId t) { return kTraitUnits[index(t)]; }

std::optional<TraitId> parse_trait(std::string_view name) {
    for (auto t : kAllTraits) {
        if (iequals(name, trait_name(t))) return t;
    }
    return std::nullopt;
}

std::string_view growth_form_name(GrowthForm g) { return kFormNames[index(g)]; }

std::optional<GrowthForm> parse_growth_form(std::string_view name) {
    for (auto g : kAllGrowthForms) {
        if (iequals(name, growth_form_name(g))) return g;
    }
    return std::nullopt;
}

std::string_view split_name(Split s) { return kSplitNames[static_cast<std::size_t>(s)]; }

std::optional<Split> parse_split(std::string_view name) {
    for (std::size_t i = 0; i < kSplitNames.size(); ++i) {
        if (iequals(name, kSplitNames[i])) return static_cast<Split>(i);
    }
    return std::nullopt;
}

std::string_view modality_name(Modality m) { return kModalityNames[static_cast<std::size_t>(m)]; }

std::optional<Modality> parse_modality(std::string_view name) {
    for (std::size_t i = 0; i < kModalityNames.size(); ++i) {
        if (iequals(name, kModalityNames[i])) return static_cast<Modality>(i);
    }
    return std::nullopt;
}

}  // namespace traitnet
