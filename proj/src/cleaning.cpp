#include "traitnet/cleaning.hpp"

#include "traitnet/util.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace traitnet {

void CleaningConfig::validate() const {
    auto fraction = [](const char* name, double v) {
        if (!(v > 0.0 && v < 1.0)) throw ValidationError(fmt::format("cleaning config: {} must be in (0, 1)", name));
    };
    fraction("stage1_top_fraction", stage1_top_fraction);
    fraction("stage2_uncertainty_percentile", stage2_uncertainty_percentile);
    if (!(std::isfinite(stage2_residual_threshold) && stage2_residual_threshold >= 0.0)) {
        throw ValidationError("cleaning config: stage2_residual_threshold must be finite and >= 0");
    }
    if (stage1_max_iterations == 0 || stage2_iterations == 0 || stage1_warmup_epochs == 0) {
        throw ValidationError("cleaning config: iteration counts must be >= 1");
    }
}

std::size_t CleaningConfig::resolved_stop_count(std::size_t train_size) const {
    if (stage1_stop_count) return *stage1_stop_count;
    return static_cast<std::size_t>(std::llround(0.005 * static_cast<double>(train_size)));
}

void to_json(nlohmann::json& j, const CleaningConfig& c) {
    j = nlohmann::json{
        {"stage1_top_fraction", c.stage1_top_fraction},
        {"stage1_max_iterations", c.stage1_max_iterations},
        {"stage1_stop_count", nullptr},
        {"stage1_warmup_epochs", c.stage1_warmup_epochs},
        {"stage2_uncertainty_percentile", c.stage2_uncertainty_percentile},
        {"stage2_residual_threshold", c.stage2_residual_threshold},
        {"stage2_iterations", c.stage2_iterations},
        {"turning_point_patience", c.turning_point_patience},
    };
    if (c.stage1_stop_count) j["stage1_stop_count"] = *c.stage1_stop_count;
}

void from_json(const nlohmann::json& j, CleaningConfig& c) {
    static const std::set<std::string> known = {
        "stage1_top_fraction",           "stage1_max_iterations",     "stage1_stop_count",
        "stage1_warmup_epochs",          "stage2_uncertainty_percentile", "stage2_residual_threshold",
        "stage2_iterations",             "turning_point_patience"};
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) throw ValidationError(fmt::format("cleaning config: unknown key '{}'", key));
    }
    c.stage1_top_fraction = j.value("stage1_top_fraction", c.stage1_top_fraction);
    c.stage1_max_iterations = j.value("stage1_max_iterations", c.stage1_max_iterations);
    if (j.contains("stage1_stop_count")) {
        const auto& v = j.at("stage1_stop_count");
        c.stage1_stop_count = v.is_null() ? std::nullopt : std::optional<std::size_t>(v.get<std::size_t>());
    }
    c.stage1_warmup_epochs = j.value("stage1_warmup_epochs", c.stage1_warmup_epochs);
    c.stage2_uncertainty_percentile = j.value("stage2_uncertainty_percentile", c.stage2_uncertainty_percentile);
    c.stage2_residual_threshold = j.value("stage2_residual_threshold", c.stage2_residual_threshold);
    c.stage2_iterations = j.value("stage2_iterations", c.stage2_iterations);
    c.turning_point_patience = j.value("turning_point_patience", c.turning_point_patience);
}

void to_json(nlohmann::json& j, const FilterReport& r) {
    nlohmann::json thresholds, turning, residuals;
    for (auto t : kAllTraits) {
        const std::string name(trait_name(t));
        thresholds[name] = r.uncertainty_thresholds[index(t)];
        if (r.stage == 2) {
            const auto& tp = r.turning_points[index(t)];
            turning[name] = tp ? nlohmann::json(*tp) : nlohmann::json(nullptr);
            const auto& s = r.residuals[index(t)];
            residuals[name] = {{"evaluated", s.evaluated},
                               {"above_uncertainty", s.above_uncertainty},
                               {"above_residual", s.above_residual},
                               {"above_both", s.above_both},
                               {"mean_residual", s.mean_residual},
                               {"max_residual", s.max_residual}};
        }
    }
    j = nlohmann::json{{"stage", r.stage},
                       {"iteration", r.iteration},
                       {"input_size", r.input_size},
                       {"removed_count", r.removed.size()},
                       {"remaining", r.remaining},
                       {"uncertainty_thresholds", thresholds}};
    if (r.stage == 2) {
        j["turning_points"] = turning;
        j["residuals"] = residuals;
    }
    j["removed"] = r.removed;
}

JointFilterResult joint_uncertainty_filter(std::span<const std::string> sample_ids,
                                           std::span<const Prediction> predictions, double top_fraction) {
    if (sample_ids.size() != predictions.size()) {
        throw std::invalid_argument("joint_uncertainty_filter: ids and predictions differ in length");
    }
    if (predictions.size() < 20) {
        throw ValidationError(fmt::format(
            "joint uncertainty filter needs at least 20 samples, got {}", predictions.size()));
    }
    if (!(top_fraction > 0.0 && top_fraction < 1.0)) {
        throw ValidationError("joint uncertainty filter: top_fraction must be in (0, 1)");
    }
    JointFilterResult out;
    std::vector<double> column(predictions.size());
    for (auto t : kAllTraits) {
        for (std::size_t k = 0; k < predictions.size(); ++k) column[k] = predictions[k][index(t)].log_scale;
        out.thresholds[index(t)] = percentile(column, 1.0 - top_fraction);
    }
    for (std::size_t k = 0; k < predictions.size(); ++k) {
        bool all = true;
        for (auto t : kAllTraits) all = all && predictions[k][index(t)].log_scale > out.thresholds[index(t)];
        if (all) out.removed.push_back(sample_ids[k]);
    }
    return out;
}

std::size_t detect_turning_point(std::span<const double> series, std::size_t patience) {
    if (series.empty()) throw ValidationError("turning point: empty series");
    double running = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < series.size(); ++i) {
        if (!(series[i] > running)) continue;
        running = series[i];
        if (i + patience >= series.size()) continue;
        bool declines = true;
        for (std::size_t k = 1; k <= patience; ++k) declines = declines && series[i + k] < series[i];
        if (declines) return i;
    }
    return static_cast<std::size_t>(std::max_element(series.begin(), series.end()) - series.begin());
}

ResidualFilterResult residual_filter(std::span<const ResidualInput> inputs, const SpeciesStatsTable& stats,
                                     const PerTrait<double>& trait_range, const CleaningConfig& cfg) {
    ResidualFilterResult out;
    if (inputs.empty()) return out;
    std::vector<double> column(inputs.size());
    for (auto t : kAllTraits) {
        for (std::size_t k = 0; k < inputs.size(); ++k) column[k] = inputs[k].log_scale[index(t)];
        out.thresholds[index(t)] = percentile(column, cfg.stage2_uncertainty_percentile);
        if (!(trait_range[index(t)] > 0.0)) {
            throw ValidationError(fmt::format("residual filter: trait range for {} must be positive", trait_name(t)));
        }
    }
    for (const auto& in : inputs) {
        bool remove = false;
        for (auto t : kAllTraits) {
            const auto ti = index(t);
            const auto* s = stats.find(in.species_id, t);
            if (s == nullptr) continue;
            const double r = std::abs(in.mu[ti] - s->median) / trait_range[ti];
            const bool uncertain = in.log_scale[ti] > out.thresholds[ti];
            const bool far = r > cfg.stage2_residual_threshold;
            auto& sum = out.summary[ti];
            ++sum.evaluated;
            sum.mean_residual += r;
            sum.max_residual = std::max(sum.max_residual, r);
            sum.above_uncertainty += uncertain ? 1 : 0;
            sum.above_residual += far ? 1 : 0;
            sum.above_both += (uncertain && far) ? 1 : 0;
            remove = remove || (uncertain && far);
        }
        if (remove) out.removed.push_back(in.sample_id);
    }
    for (auto& s : out.summary) {
        if (s.evaluated > 0) s.mean_residual /= static_cast<double>(s.evaluated);
    }
    return out;
}

std::vector<SampleRecord> remove_samples(std::span<const SampleRecord> records,
                                         std::span<const std::string> removed) {
    const std::set<std::string_view> drop(removed.begin(), removed.end());
    std::vector<SampleRecord> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        if (!drop.contains(r.sample_id)) out.push_back(r);
    }
    return out;
}

namespace {

std::map<Modality, EmbeddingStore> stores_of(const Dataset& dataset) {
    std::map<Modality, EmbeddingStore> stores;
    for (auto m : {Modality::ImageTokens, Modality::DepthTokens, Modality::GeoVector}) {
        if (dataset.has(m)) stores.emplace(m, dataset.store(m));
    }
    return stores;
}

std::vector<std::string> ids_of(const Dataset& dataset, std::span<const std::size_t> samples) {
    std::vector<std::string> ids;
    ids.reserve(samples.size());
    for (auto s : samples) ids.push_back(dataset.record(s).sample_id);
    return ids;
}

}  // namespace

Stage1Result run_stage1(const Dataset& dataset, const SpeciesStatsTable& stats, const ModelConfig& model,
                        const TrainConfig& train, const CleaningConfig& cleaning) {
    cleaning.validate();
    auto train_idx = dataset.indices_with_split(Split::Train);
    if (train_idx.empty()) throw ValidationError("stage 1: dataset has no Train samples");
    const std::size_t stop_count = cleaning.resolved_stop_count(train_idx.size());
    const auto scaler = fit_label_scaler(dataset, train_idx, stats);
    Trainer trainer(dataset, stats, model, train, scaler, train_idx, dataset.indices_with_split(Split::Val),
                    dataset.indices_with_split(Split::Reference));

    Stage1Result result{{}, FusionNetwork(model), scaler, 0, {}, {}};
    std::vector<std::string> removed_all;
    for (std::size_t it = 1; it <= cleaning.stage1_max_iterations; ++it) {
        for (std::size_t e = 0; e < cleaning.stage1_warmup_epochs; ++e) result.history.push_back(trainer.run_epoch());
        const auto& current = trainer.train_samples();
        const auto preds = predict_samples(trainer.snapshot(), dataset, current, worker_threads());
        const auto ids = ids_of(dataset, current);
        auto filtered = joint_uncertainty_filter(ids, preds, cleaning.stage1_top_fraction);

        FilterReport report;
        report.stage = 1;
        report.iteration = it;
        report.input_size = current.size();
        report.uncertainty_thresholds = filtered.thresholds;
        report.removed = filtered.removed;

        const std::set<std::string_view> drop(filtered.removed.begin(), filtered.removed.end());
        std::vector<std::size_t> kept;
        for (auto s : current) {
            if (!drop.contains(dataset.record(s).sample_id)) kept.push_back(s);
        }
        report.remaining = kept.size();
        removed_all.insert(removed_all.end(), filtered.removed.begin(), filtered.removed.end());
        const bool stop = filtered.removed.size() < stop_count;
        trainer.set_train_samples(std::move(kept));
        result.reports.push_back(std::move(report));
        if (stop) break;
    }
    // Training continues from the current state on the filtered set.
    result.history.push_back(trainer.run_epoch());
    result.epochs = trainer.epochs_completed();
    result.network = trainer.snapshot();
    result.records = remove_samples(dataset.records(), removed_all);
    return result;
}

Stage2Result run_stage2(const Dataset& dataset, const SpeciesStatsTable& stats, const ModelConfig& model,
                        const TrainConfig& train, const CleaningConfig& cleaning) {
    cleaning.validate();
    if (dataset.indices_with_split(Split::Reference).empty()) {
        throw ValidationError("stage 2: reference set is empty, turning points are undefined");
    }
    const std::size_t stop_count =
        cleaning.resolved_stop_count(dataset.indices_with_split(Split::Train).size());
    const auto stores = stores_of(dataset);

    Stage2Result result;
    result.records = dataset.records();
    for (std::size_t it = 1; it <= cleaning.stage2_iterations; ++it) {
        const Dataset current(result.records, stores, stats);
        const auto train_idx = current.indices_with_split(Split::Train);
        if (train_idx.empty()) throw ValidationError("stage 2: no Train samples left");
        const auto scaler = fit_label_scaler(current, train_idx, stats);
        Trainer trainer(current, stats, model, train, scaler, train_idx, current.indices_with_split(Split::Val),
                        current.indices_with_split(Split::Reference));
        std::vector<FusionNetwork> snapshots;
        std::vector<EpochMetrics> history;
        for (std::size_t e = 0; e < train.epochs; ++e) {
            history.push_back(trainer.run_epoch());
            snapshots.push_back(trainer.snapshot());
        }

        FilterReport report;
        report.stage = 2;
        report.iteration = it;
        report.input_size = train_idx.size();
        std::map<std::size_t, std::vector<Prediction>> by_epoch;
        std::vector<ResidualInput> inputs(train_idx.size());
        for (auto t : kAllTraits) {
            std::vector<double> series;
            std::vector<std::size_t> epochs;
            for (const auto& m : history) {
                if (m.reference_r2[index(t)]) {
                    series.push_back(*m.reference_r2[index(t)]);
                    epochs.push_back(m.epoch);
                }
            }
            const std::size_t epoch =
                series.empty() ? history.back().epoch : epochs[detect_turning_point(series, cleaning.turning_point_patience)];
            report.turning_points[index(t)] = epoch;
            auto found = by_epoch.find(epoch);
            if (found == by_epoch.end()) {
                found = by_epoch.emplace(epoch, predict_samples(snapshots[epoch - 1], current, train_idx,
                                                                worker_threads()))
                            .first;
            }
            for (std::size_t k = 0; k < train_idx.size(); ++k) {
                const auto& p = found->second[k][index(t)];
                inputs[k].mu[index(t)] = scaler.inverse(t, p.mu);
                inputs[k].log_scale[index(t)] = p.log_scale;
            }
        }
        PerTrait<double> range{};
        for (std::size_t k = 0; k < train_idx.size(); ++k) {
            const auto& rec = current.record(train_idx[k]);
            inputs[k].sample_id = rec.sample_id;
            inputs[k].species_id = rec.species_id;
        }
        for (auto t : kAllTraits) range[index(t)] = scaler.range(t);
        auto filtered = residual_filter(inputs, stats, range, cleaning);
        report.uncertainty_thresholds = filtered.thresholds;
        report.residuals = filtered.summary;
        report.removed = filtered.removed;
        report.remaining = train_idx.size() - filtered.removed.size();
        result.records = remove_samples(result.records, filtered.removed);
        const bool stop = filtered.removed.size() <= stop_count;
        result.reports.push_back(std::move(report));
        result.histories.push_back(std::move(history));
        if (stop) break;
    }
    return result;
}

}  // namespace traitnet
