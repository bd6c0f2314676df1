#pragma once

#include "traitnet/checkpoint.hpp"
#include "traitnet/core.hpp"

#include <compare>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace traitnet {

struct GridCellId {
    int lat_cell = 0;
    int lon_cell = 0;

    auto operator<=>(const GridCellId&) const = default;
};

// floor on both axes; lon 180 wraps to -180 and lat 90 joins the 89 row.
GridCellId to_grid_cell(double lat, double lon);

// cos of the cell-centre latitude.
double cell_area_weight(GridCellId cell);

struct CellValues {
    std::size_t count = 0;
    PerTrait<std::optional<double>> value{};
};

using TraitMap = std::map<GridCellId, CellValues>;

inline constexpr std::size_t kDefaultMinCount = 20;

// Per-cell arithmetic mean of each trait; cells with fewer than min_count
// rows are dropped.
TraitMap aggregate(std::span<const PredictionRow> rows, std::size_t min_count = kDefaultMinCount);

inline constexpr std::string_view kGridMapHeader = "lat_cell,lon_cell,count,H,LA,SLA,LN";

std::string format_trait_map(const TraitMap& map);
// Columns are matched by header name; lat_cell and lon_cell are required,
// count and any trait column may be missing.
TraitMap parse_trait_map(std::string_view csv_text);
TraitMap load_trait_map(const std::filesystem::path& path);

struct TraitMetrics {
    double r2 = 0.0;
    double nmae = 0.0;
    std::optional<double> pearson_log_r;  // nullopt when a log series is constant
    std::size_t cells = 0;
    std::size_t clamped = 0;  // values <= 0 raised to 1e-6 before the log
};

inline constexpr double kLogClamp = 1e-6;

// Weighted mean absolute error over the observed range; needs one cell and a
// non-degenerate observed range.
double weighted_nmae(std::span<const double> predicted, std::span<const double> observed,
                     std::span<const double> weights);

double weighted_pearson(std::span<const double> x, std::span<const double> y, std::span<const double> weights);

TraitMetrics weighted_metrics(std::span<const double> predicted, std::span<const double> observed,
                              std::span<const double> weights);

struct BenchmarkResult {
    PerTrait<std::optional<TraitMetrics>> traits{};
    PerTrait<std::size_t> cells_compared{};
};

// Compares every trait over cells that carry a value in both maps; a trait
// with fewer than three such cells is reported absent.
BenchmarkResult benchmark_maps(const TraitMap& predicted, const TraitMap& observed);

enum class MetricKind { R2, NMAE, PearsonLogR };

struct BenchmarkReport {
    std::vector<std::string> methods;
    std::vector<BenchmarkResult> results;
    // (trait, metric) -> method indices; ties share a mark.
    std::map<std::pair<TraitId, MetricKind>, std::vector<std::size_t>> best;
    std::map<std::pair<TraitId, MetricKind>, std::vector<std::size_t>> second;
};

BenchmarkReport benchmark_report(std::span<const std::pair<std::string, TraitMap>> methods,
                                 const TraitMap& observed);

void to_json(nlohmann::json& j, const BenchmarkReport& report);
std::string render_benchmark_text(const BenchmarkReport& report);

}  // namespace traitnet
