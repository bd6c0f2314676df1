#include "traitnet/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <nlohmann/json.hpp>

namespace traitnet {

bool dominates(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument(fmt::format("dominates: lengths {} and {} differ", a.size(), b.size()));
    }
    bool strict = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] < b[i]) return false;
        if (a[i] > b[i]) strict = true;
    }
    return strict;
}

std::vector<std::vector<std::size_t>> non_dominated_sort(std::span<const std::vector<double>> points) {
    const std::size_t n = points.size();
    std::vector<std::vector<std::size_t>> dominated_by_me(n);
    std::vector<std::size_t> dominators(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (dominates(points[i], points[j])) {
                dominated_by_me[i].push_back(j);
                ++dominators[j];
            } else if (dominates(points[j], points[i])) {
                dominated_by_me[j].push_back(i);
                ++dominators[i];
            }
        }
    }
    std::vector<std::vector<std::size_t>> fronts;
    std::vector<std::size_t> current;
    for (std::size_t i = 0; i < n; ++i) {
        if (dominators[i] == 0) current.push_back(i);
    }
    while (!current.empty()) {
        std::vector<std::size_t> next;
        for (auto i : current) {
            for (auto j : dominated_by_me[i]) {
                if (--dominators[j] == 0) next.push_back(j);
            }
        }
        std::sort(next.begin(), next.end());
        fronts.push_back(std::move(current));
        current = std::move(next);
    }
    return fronts;
}

namespace {

constexpr double kTieTolerance = 1e-12;

// Points given as pointers; `dims` leading coordinates are active.
double sweep(std::vector<const double*> pts, const double* ref, std::size_t dims) {
    if (pts.empty()) return 0.0;
    const std::size_t axis = dims - 1;
    if (dims == 1) {
        double best = ref[0];
        for (const auto* p : pts) best = std::max(best, p[0]);
        return best - ref[0];
    }
    std::sort(pts.begin(), pts.end(), [axis](const double* a, const double* b) { return a[axis] > b[axis]; });
    double volume = 0.0;
    std::vector<const double*> active;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        active.push_back(pts[i]);
        const double top = pts[i][axis];
        const double bottom = i + 1 < pts.size() ? pts[i + 1][axis] : ref[axis];
        if (top > bottom) volume += sweep(active, ref, dims - 1) * (top - bottom);
    }
    return volume;
}

}  // namespace

double hypervolume(std::span<const std::vector<double>> points, std::span<const double> reference) {
    if (reference.empty()) throw std::invalid_argument("hypervolume: empty reference");
    std::vector<const double*> pts;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        if (p.size() != reference.size()) {
            throw std::invalid_argument(fmt::format("hypervolume: point {} has {} objectives, reference has {}", i,
                                                    p.size(), reference.size()));
        }
        for (std::size_t d = 0; d < p.size(); ++d) {
            if (!(p[d] > reference[d])) {
                throw ValidationError(fmt::format("hypervolume: point {} ({}) does not dominate the reference ({})",
                                                  i, fmt::join(p, ", "), fmt::join(reference, ", ")));
            }
        }
        pts.push_back(p.data());
    }
    return sweep(std::move(pts), reference.data(), reference.size());
}

SelectionResult select_checkpoint(std::span<const CandidatePoint> candidates) {
    if (candidates.empty()) throw ValidationError("select_checkpoint: no candidates");
    std::vector<std::vector<double>> points;
    for (const auto& c : candidates) {
        for (double v : c.objectives) {
            if (!std::isfinite(v)) {
                throw ValidationError(fmt::format("select_checkpoint: checkpoint {} has a non-finite objective",
                                                  c.checkpoint_id));
            }
        }
        points.push_back(c.objectives);
    }
    const auto fronts = non_dominated_sort(points);
    const auto& front = fronts.front();
    const std::size_t dims = points[front.front()].size();

    SelectionResult out;
    out.reference.assign(dims, std::numeric_limits<double>::infinity());
    for (auto i : front) {
        for (std::size_t d = 0; d < dims; ++d) out.reference[d] = std::min(out.reference[d], points[i][d]);
    }
    for (auto& r : out.reference) r -= 1e-6;

    double best = 0.0;
    std::size_t best_pos = candidates.size();
    for (auto i : front) {
        const double hv = hypervolume(std::span(&points[i], 1), out.reference);
        out.front.push_back(candidates[i].checkpoint_id);
        out.hypervolumes[candidates[i].checkpoint_id] = hv;
        // Volumes equal up to rounding count as ties, which go to the earlier candidate.
        if (best_pos == candidates.size() || hv > best * (1.0 + kTieTolerance)) {
            best = hv;
            best_pos = i;
        }
    }
    out.selected = candidates[best_pos].checkpoint_id;
    return out;
}

std::vector<CandidatePoint> candidates_from_metrics(std::span<const EpochMetrics> history,
                                                    SelectionObjective objective) {
    std::vector<CandidatePoint> out;
    for (const auto& m : history) {
        const auto& values = objective == SelectionObjective::ValR2 ? m.val_r2 : m.reference_r2;
        CandidatePoint c{m.epoch, {}};
        for (const auto& v : values) {
            if (v && std::isfinite(*v)) c.objectives.push_back(*v);
        }
        if (c.objectives.size() == kNumTraits) out.push_back(std::move(c));
    }
    return out;
}

void to_json(nlohmann::json& j, const SelectionResult& r) {
    nlohmann::json hv = nlohmann::json::object();
    for (const auto& [id, v] : r.hypervolumes) hv[std::to_string(id)] = v;
    j = nlohmann::json{{"selected_epoch", r.selected}, {"front", r.front}, {"reference", r.reference},
                       {"hypervolumes", hv}};
}

}  // namespace traitnet
