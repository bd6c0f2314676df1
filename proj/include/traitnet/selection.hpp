#pragma once

#include "traitnet/trainer.hpp"

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace traitnet {

// All objectives are maximised.
bool dominates(std::span<const double> a, std::span<const double> b);

// Fronts of point indices, rank 0 first; indices inside a front ascend.
std::vector<std::vector<std::size_t>> non_dominated_sort(std::span<const std::vector<double>> points);

// Exact measure of the union of boxes [reference, p] by recursive sweep over
// the last axis. Every point must exceed the reference on every axis.
double hypervolume(std::span<const std::vector<double>> points, std::span<const double> reference);

struct CandidatePoint {
    std::size_t checkpoint_id = 0;  // epoch
    std::vector<double> objectives;
};

struct SelectionResult {
    std::size_t selected = 0;
    std::vector<std::size_t> front;  // checkpoint ids on front 0
    std::vector<double> reference;
    std::map<std::size_t, double> hypervolumes;
};

// Front-0 candidate with the largest singleton hypervolume against the
// front's componentwise minimum minus 1e-6; ties (within 1e-12 relative) go
// to the earlier entry.
SelectionResult select_checkpoint(std::span<const CandidatePoint> candidates);

enum class SelectionObjective { ValR2, ReferenceR2 };

// Epochs lacking a value for any trait are skipped.
std::vector<CandidatePoint> candidates_from_metrics(std::span<const EpochMetrics> history,
                                                    SelectionObjective objective = SelectionObjective::ValR2);

void to_json(nlohmann::json& j, const SelectionResult& r);

}  // namespace traitnet
