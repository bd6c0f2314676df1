#include "traitnet/geo_eval.hpp"

#include "traitnet/util.hpp"

#include <algorithm>
#include <charconv>
#include <limits>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace traitnet {

GridCellId to_grid_cell(double lat, double lon) {
    if (!(lat >= -90.0 && lat <= 90.0) || !(lon >= -180.0 && lon <= 180.0)) {
        throw ValidationError(fmt::format("coordinates out of range: lat={}, lon={}", lat, lon));
    }
    if (lon == 180.0) lon = -180.0;
    const int lat_cell = std::min(static_cast<int>(std::floor(lat)), 89);
    return {lat_cell, static_cast<int>(std::floor(lon))};
}

double cell_area_weight(GridCellId cell) {
    const double centre = static_cast<double>(cell.lat_cell) + 0.5;
    return std::cos(centre * std::numbers::pi / 180.0);
}

TraitMap aggregate(std::span<const PredictionRow> rows, std::size_t min_count) {
    std::map<GridCellId, std::vector<const PredictionRow*>> cells;
    for (const auto& r : rows) cells[to_grid_cell(r.lat, r.lon)].push_back(&r);
    TraitMap out;
    std::vector<double> values;
    for (const auto& [cell, members] : cells) {
        if (members.size() < min_count) continue;
        CellValues cv;
        cv.count = members.size();
        for (auto t : kAllTraits) {
            values.clear();
            for (const auto* r : members) values.push_back(r->mu[index(t)]);
            // Summing in sorted order makes the mean independent of row order.
            std::sort(values.begin(), values.end());
            double sum = 0.0;
            for (double v : values) sum += v;
            cv.value[index(t)] = sum / static_cast<double>(values.size());
        }
        out.emplace(cell, cv);
    }
    return out;
}

std::string format_trait_map(const TraitMap& map) {
    std::string out(kGridMapHeader);
    out += '\n';
    for (const auto& [cell, cv] : map) {
        out += fmt::format("{},{},{}", cell.lat_cell, cell.lon_cell, cv.count);
        for (auto t : kAllTraits) {
            out += ',';
            if (cv.value[index(t)]) out += format_double(*cv.value[index(t)]);
        }
        out += '\n';
    }
    return out;
}

TraitMap parse_trait_map(std::string_view text) {
    TraitMap out;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    std::optional<std::size_t> lat_col, lon_col, count_col;
    PerTrait<std::optional<std::size_t>> trait_col{};
    std::size_t columns = 0;
    bool header_seen = false;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        const auto line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split_csv_line(line);
        if (!header_seen) {
            header_seen = true;
            columns = fields.size();
            for (std::size_t c = 0; c < fields.size(); ++c) {
                const auto name = trim(fields[c]);
                if (name == "lat_cell") lat_col = c;
                else if (name == "lon_cell") lon_col = c;
                else if (name == "count") count_col = c;
                else if (auto t = parse_trait(name)) trait_col[index(*t)] = c;
                else throw ValidationError(fmt::format("grid map line 1: unknown column '{}'", name));
            }
            if (!lat_col || !lon_col) throw ValidationError("grid map line 1: lat_cell and lon_cell columns are required");
            continue;
        }
        if (fields.size() != columns) {
            throw ValidationError(fmt::format("grid map line {}: expected {} columns, found {}", line_no, columns,
                                              fields.size()));
        }
        auto integer = [&](std::size_t col, long lo, long hi) {
            const auto f = trim(fields[col]);
            long v = 0;
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
            if (ec != std::errc() || ptr != f.data() + f.size() || f.empty() || v < lo || v > hi) {
                throw ValidationError(
                    fmt::format("grid map line {}, column {}: invalid value '{}'", line_no, col + 1, f));
            }
            return v;
        };
        const GridCellId cell{static_cast<int>(integer(*lat_col, -90, 89)),
                              static_cast<int>(integer(*lon_col, -180, 179))};
        CellValues cv;
        cv.count = count_col ? static_cast<std::size_t>(integer(*count_col, 0, std::numeric_limits<long>::max())) : 0;
        for (auto t : kAllTraits) {
            if (!trait_col[index(t)]) continue;
            const auto f = trim(fields[*trait_col[index(t)]]);
            if (f.empty()) continue;
            double v = 0.0;
            if (!parse_double(f, v) || !std::isfinite(v)) {
                throw ValidationError(fmt::format("grid map line {}, column {}: not a number: '{}'", line_no,
                                                  *trait_col[index(t)] + 1, f));
            }
            cv.value[index(t)] = v;
        }
        if (!out.emplace(cell, cv).second) {
            throw ValidationError(
                fmt::format("grid map line {}: duplicate cell ({}, {})", line_no, cell.lat_cell, cell.lon_cell));
        }
    }
    return out;
}

TraitMap load_trait_map(const std::filesystem::path& path) {
    try {
        return parse_trait_map(read_text_file(path));
    } catch (const ValidationError& e) {
        throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

namespace {

void check_lengths(std::size_t a, std::size_t b, std::size_t c, const char* what) {
    if (a != b || a != c) throw std::invalid_argument(fmt::format("{}: input lengths differ", what));
}

double weighted_mean(std::span<const double> x, std::span<const double> w) {
    double sw = 0.0, sx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sw += w[i];
        sx += w[i] * x[i];
    }
    return sx / sw;
}

}  // namespace

double weighted_nmae(std::span<const double> predicted, std::span<const double> observed,
                     std::span<const double> weights) {
    check_lengths(predicted.size(), observed.size(), weights.size(), "weighted_nmae");
    if (observed.empty()) throw ValidationError("nMAE: no cells");
    const auto [lo, hi] = std::minmax_element(observed.begin(), observed.end());
    const double range = *hi - *lo;
    if (!(range > 0.0)) throw ValidationError("nMAE: observed range is zero");
    double sw = 0.0, sa = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        sw += weights[i];
        sa += weights[i] * std::abs(observed[i] - predicted[i]);
    }
    return sa / sw / range;
}

double weighted_pearson(std::span<const double> x, std::span<const double> y, std::span<const double> w) {
    check_lengths(x.size(), y.size(), w.size(), "weighted_pearson");
    const double mx = weighted_mean(x, w);
    const double my = weighted_mean(y, w);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += w[i] * dx * dy;
        sxx += w[i] * dx * dx;
        syy += w[i] * dy * dy;
    }
    return sxy / std::sqrt(sxx * syy);
}

TraitMetrics weighted_metrics(std::span<const double> predicted, std::span<const double> observed,
                              std::span<const double> weights) {
    check_lengths(predicted.size(), observed.size(), weights.size(), "weighted_metrics");
    if (observed.size() < 3) {
        throw ValidationError(fmt::format("weighted metrics need at least 3 common cells, got {}", observed.size()));
    }
    for (double w : weights) {
        if (!(w > 0.0)) throw ValidationError("weighted metrics: weights must be positive");
    }
    TraitMetrics m;
    m.cells = observed.size();
    const double mean_o = weighted_mean(observed, weights);
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        ss_res += weights[i] * (observed[i] - predicted[i]) * (observed[i] - predicted[i]);
        ss_tot += weights[i] * (observed[i] - mean_o) * (observed[i] - mean_o);
    }
    if (!(ss_tot > 0.0)) throw ValidationError("weighted R2 undefined: observed values have zero variance");
    m.r2 = 1.0 - ss_res / ss_tot;
    m.nmae = weighted_nmae(predicted, observed, weights);

    std::vector<double> lp(observed.size()), lo(observed.size());
    auto safe_log = [&](double v) {
        if (v <= 0.0) {
            ++m.clamped;
            v = kLogClamp;
        }
        return std::log(v);
    };
    for (std::size_t i = 0; i < observed.size(); ++i) {
        lp[i] = safe_log(predicted[i]);
        lo[i] = safe_log(observed[i]);
    }
    const double r = weighted_pearson(lp, lo, weights);
    if (std::isfinite(r)) m.pearson_log_r = std::clamp(r, -1.0, 1.0);
    return m;
}

BenchmarkResult benchmark_maps(const TraitMap& predicted, const TraitMap& observed) {
    BenchmarkResult out;
    for (auto t : kAllTraits) {
        std::vector<double> p, o, w;
        for (const auto& [cell, obs] : observed) {
            const auto found = predicted.find(cell);
            if (found == predicted.end()) continue;
            const auto& pv = found->second.value[index(t)];
            const auto& ov = obs.value[index(t)];
            if (!pv || !ov) continue;
            p.push_back(*pv);
            o.push_back(*ov);
            w.push_back(cell_area_weight(cell));
        }
        out.cells_compared[index(t)] = o.size();
        if (o.size() >= 3) out.traits[index(t)] = weighted_metrics(p, o, w);
    }
    return out;
}

namespace {

constexpr MetricKind kMetricKinds[] = {MetricKind::R2, MetricKind::NMAE, MetricKind::PearsonLogR};

std::string_view metric_label(MetricKind k) {
    switch (k) {
        case MetricKind::R2: return "R²";
        case MetricKind::NMAE: return "nMAE";
        case MetricKind::PearsonLogR: return "r";
    }
    return "?";
}

std::string_view metric_key(MetricKind k) {
    switch (k) {
        case MetricKind::R2: return "r2";
        case MetricKind::NMAE: return "nmae";
        case MetricKind::PearsonLogR: return "pearson_log_r";
    }
    return "?";
}

std::optional<double> metric_value(const BenchmarkResult& r, TraitId t, MetricKind k) {
    const auto& m = r.traits[index(t)];
    if (!m) return std::nullopt;
    switch (k) {
        case MetricKind::R2: return m->r2;
        case MetricKind::NMAE: return m->nmae;
        case MetricKind::PearsonLogR: return m->pearson_log_r;
    }
    return std::nullopt;
}

}  // namespace

BenchmarkReport benchmark_report(std::span<const std::pair<std::string, TraitMap>> methods,
                                 const TraitMap& observed) {
    BenchmarkReport report;
    for (const auto& [name, map] : methods) {
        report.methods.push_back(name);
        report.results.push_back(benchmark_maps(map, observed));
    }
    for (auto t : kAllTraits) {
        for (auto k : kMetricKinds) {
            // Orient so that larger is better.
            const double sign = k == MetricKind::NMAE ? -1.0 : 1.0;
            std::vector<double> distinct;
            for (const auto& r : report.results) {
                if (auto v = metric_value(r, t, k)) distinct.push_back(sign * *v);
            }
            std::sort(distinct.begin(), distinct.end(), std::greater<>());
            distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
            for (std::size_t m = 0; m < report.results.size(); ++m) {
                const auto v = metric_value(report.results[m], t, k);
                if (!v) continue;
                if (sign * *v == distinct[0]) report.best[{t, k}].push_back(m);
                else if (distinct.size() > 1 && sign * *v == distinct[1]) report.second[{t, k}].push_back(m);
            }
        }
    }
    return report;
}

void to_json(nlohmann::json& j, const BenchmarkReport& report) {
    j = nlohmann::json::object();
    nlohmann::json methods = nlohmann::json::array();
    for (std::size_t m = 0; m < report.methods.size(); ++m) {
        nlohmann::json traits = nlohmann::json::object();
        for (auto t : kAllTraits) {
            const auto& r = report.results[m];
            const auto& tm = r.traits[index(t)];
            nlohmann::json entry = {{"cells_compared", r.cells_compared[index(t)]}};
            if (tm) {
                entry["r2"] = tm->r2;
                entry["nmae"] = tm->nmae;
                entry["pearson_log_r"] = tm->pearson_log_r ? nlohmann::json(*tm->pearson_log_r) : nlohmann::json(nullptr);
                entry["log_clamped"] = tm->clamped;
            } else {
                entry["r2"] = nullptr;
                entry["nmae"] = nullptr;
                entry["pearson_log_r"] = nullptr;
            }
            nlohmann::json marks = nlohmann::json::object();
            for (auto k : kMetricKinds) {
                const auto key = std::make_pair(t, k);
                auto has = [&](const auto& table) {
                    const auto it = table.find(key);
                    return it != table.end() && std::find(it->second.begin(), it->second.end(), m) != it->second.end();
                };
                if (has(report.best)) marks[std::string(metric_key(k))] = "best";
                else if (has(report.second)) marks[std::string(metric_key(k))] = "second";
            }
            entry["marks"] = marks;
            traits[std::string(trait_name(t))] = entry;
        }
        methods.push_back({{"name", report.methods[m]}, {"traits", traits}});
    }
    j["methods"] = methods;
}

std::string render_benchmark_text(const BenchmarkReport& report) {
    std::string out;
    for (std::size_t m = 0; m < report.methods.size(); ++m) {
        out += report.methods[m];
        out += ':';
        for (auto t : kAllTraits) {
            if (t != TraitId::H) out += ';';
            const auto& tm = report.results[m].traits[index(t)];
            if (!tm) {
                out += fmt::format(" {} --", trait_name(t));
                continue;
            }
            const std::string r = tm->pearson_log_r ? fmt::format("{:.2f}", *tm->pearson_log_r) : "--";
            out += fmt::format(" {} R²={:.2f}, nMAE={:.2f}, r={}", trait_name(t), tm->r2, tm->nmae, r);
        }
        out += '\n';
    }
    auto names = [&](const std::vector<std::size_t>& idx) {
        std::string s;
        for (std::size_t i = 0; i < idx.size(); ++i) s += (i ? ", " : "") + report.methods[idx[i]];
        return s;
    };
    for (auto t : kAllTraits) {
        for (auto k : kMetricKinds) {
            const auto key = std::make_pair(t, k);
            const auto b = report.best.find(key);
            if (b == report.best.end()) continue;
            out += fmt::format("best {} {}: {}", trait_name(t), metric_label(k), names(b->second));
            const auto s = report.second.find(key);
            if (s != report.second.end()) out += fmt::format("; second: {}", names(s->second));
            out += '\n';
        }
    }
    return out;
}

}  // namespace traitnet
