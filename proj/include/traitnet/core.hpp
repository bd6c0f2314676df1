#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace traitnet {

// Input that fails validation: malformed files, out-of-range values, missing
// upstream artifacts. The CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised when training produces a non-finite loss or parameter. Exit code 3.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class TraitId : std::uint8_t { H = 0, LA = 1, SLA = 2, LN = 3 };

inline constexpr std::size_t kNumTraits = 4;
inline constexpr std::array<TraitId, kNumTraits> kAllTraits{TraitId::H, TraitId::LA, TraitId::SLA,
                                                           TraitId::LN};

template <typename T>
using PerTrait = std::array<T, kNumTraits>;

constexpr std::size_t index(TraitId t) { return static_cast<std::size_t>(t); }

std::string_view trait_name(TraitId t);
std::string_view trait_unit(TraitId t);
std::optional<TraitId> parse_trait(std::string_view name);

enum class GrowthForm : std::uint8_t { Tree = 0, Shrub = 1, Grass = 2 };

inline constexpr std::size_t kNumGrowthForms = 3;
inline constexpr std::array<GrowthForm, kNumGrowthForms> kAllGrowthForms{
    GrowthForm::Tree, GrowthForm::Shrub, GrowthForm::Grass};

constexpr std::size_t index(GrowthForm g) { return static_cast<std::size_t>(g); }

std::string_view growth_form_name(GrowthForm g);
std::optional<GrowthForm> parse_growth_form(std::string_view name);

enum class Split : std::uint8_t { Train, Val, Reference, Inference };

std::string_view split_name(Split s);
std::optional<Split> parse_split(std::string_view name);

enum class Modality : std::uint8_t { ImageTokens = 0, DepthTokens = 1, GeoVector = 2 };

std::string_view modality_name(Modality m);
std::optional<Modality> parse_modality(std::string_view name);

}  // namespace traitnet
