#include "traitnet/pipeline.hpp"

#include "traitnet/checkpoint.hpp"
#include "traitnet/geo_eval.hpp"
#include "traitnet/util.hpp"

#include <algorithm>
#include <iostream>

#include <fmt/format.h>

namespace traitnet {

namespace {

std::string_view objective_name(SelectionObjective o) {
    return o == SelectionObjective::ValR2 ? "val_r2" : "reference_r2";
}

// Rejects keys that the section's default serialisation does not know.
void check_section_keys(const nlohmann::json& given, const nlohmann::json& defaults, std::string_view section) {
    if (!given.is_object()) throw ValidationError(fmt::format("config: section '{}' must be an object", section));
    for (const auto& [key, _] : given.items()) {
        if (!defaults.contains(key)) throw ValidationError(fmt::format("config: unknown key '{}.{}'", section, key));
    }
}

std::string metrics_lines(const std::vector<EpochMetrics>& history) {
    std::string out;
    for (const auto& m : history) out += nlohmann::json(m).dump() + "\n";
    return out;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text_file(path, j.dump(1) + "\n"); }

}  // namespace

void to_json(nlohmann::json& j, const EvalConfig& c) {
    j = nlohmann::json{{"min_count", c.min_count}, {"objective", objective_name(c.objective)}};
}

void from_json(const nlohmann::json& j, EvalConfig& c) {
    if (j.contains("min_count")) c.min_count = j.at("min_count").get<std::size_t>();
    if (j.contains("objective")) {
        const auto name = j.at("objective").get<std::string>();
        if (name == "val_r2") c.objective = SelectionObjective::ValR2;
        else if (name == "reference_r2") c.objective = SelectionObjective::ReferenceR2;
        else throw ValidationError(fmt::format("config: eval.objective must be val_r2 or reference_r2, got '{}'", name));
    }
}

void to_json(nlohmann::json& j, const PipelineConfig& c) {
    j = nlohmann::json{{"model", c.model}, {"train", c.train}, {"cleaning", c.cleaning}, {"eval", c.eval}};
}

void from_json(const nlohmann::json& j, PipelineConfig& c) {
    if (!j.is_object()) throw ValidationError("config: top level must be an object");
    const nlohmann::json defaults = PipelineConfig{};
    for (const auto& [key, value] : j.items()) {
        if (!defaults.contains(key)) throw ValidationError(fmt::format("config: unknown section '{}'", key));
        check_section_keys(value, defaults.at(key), key);
    }
    try {
        if (j.contains("model")) j.at("model").get_to(c.model);
        if (j.contains("train")) j.at("train").get_to(c.train);
        if (j.contains("cleaning")) j.at("cleaning").get_to(c.cleaning);
        if (j.contains("eval")) j.at("eval").get_to(c.eval);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(fmt::format("config: {}", e.what()));
    }
}

PipelineConfig desk_config(const FixtureSpec& spec) {
    PipelineConfig c;
    c.model.image_token_dim = spec.image_dim;
    c.model.depth_token_dim = spec.depth_dim;
    c.model.image_tokens_pooled = std::min<std::size_t>(4, spec.image_tokens);
    c.model.depth_tokens_pooled = std::min<std::size_t>(4, spec.depth_tokens);
    c.model.mlp_hidden_dim = 64;
    c.model.image_embed_dim = 32;
    c.model.depth_embed_dim = 32;
    c.model.geo_in_dim = spec.geo_dim;
    c.model.geo_proj_dim = 8;
    c.model.backbone_dim = 32;
    c.train.epochs = 30;
    c.train.batch_size = 32;
    c.train.lr_init = 1e-3;
    c.train.lr_min = 1e-5;
    c.train.seed = 7;
    return c;
}

void apply_overrides(nlohmann::json& config, const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        const auto dot = o.find('.');
        if (eq == std::string::npos || dot == std::string::npos || dot > eq || dot == 0 || dot + 1 == eq) {
            throw ValidationError(fmt::format("--set expects section.key=value, got '{}'", o));
        }
        const std::string section = o.substr(0, dot);
        const std::string key = o.substr(dot + 1, eq - dot - 1);
        const std::string raw = o.substr(eq + 1);
        nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
        if (value.is_discarded()) value = raw;
        config[section][key] = value;
    }
}

PipelineConfig load_config(const std::optional<std::filesystem::path>& path,
                           const std::vector<std::string>& overrides, std::optional<std::uint64_t> seed) {
    nlohmann::json j = nlohmann::json::object();
    if (path) {
        try {
            j = nlohmann::json::parse(read_text_file(*path));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(fmt::format("{}: {}", path->string(), e.what()));
        }
    }
    apply_overrides(j, overrides);
    PipelineConfig cfg = j.get<PipelineConfig>();
    if (seed) cfg.train.seed = *seed;
    cfg.model.validate();
    cfg.train.validate();
    cfg.cleaning.validate();
    return cfg;
}

void write_run_manifest(const std::filesystem::path& out_dir, const RunManifest& m) {
    auto pairs = [](const std::vector<std::pair<std::string, std::string>>& v) {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [k, p] : v) j[k] = p;
        return j;
    };
    write_json(out_dir / kManifestName, {{"command", m.command},
                                         {"config_path", m.config_path},
                                         {"config", m.config},
                                         {"seed", m.seed},
                                         {"inputs", pairs(m.inputs)},
                                         {"outputs", pairs(m.outputs)},
                                         {"tool_version", kToolVersion},
                                         {"wall_clock_seconds", m.wall_clock_seconds}});
}

LoadedData load_data(const DataPaths& paths, const ModelConfig& model) {
    SpeciesStatsTable stats;
    if (paths.stats) stats = load_species_stats(*paths.stats);
    auto records = load_metadata(paths.metadata.value_or(metadata_file(paths.data_dir)));
    std::map<Modality, EmbeddingStore> stores;
    std::vector<Modality> needed{Modality::ImageTokens};
    if (model.use_depth) needed.push_back(Modality::DepthTokens);
    if (model.use_geo) needed.push_back(Modality::GeoVector);
    for (auto m : needed) {
        const auto bin = embedding_file(paths.data_dir, m);
        stores.emplace(m, load_embeddings(bin, sidecar_path_for(bin)));
    }
    Dataset dataset(std::move(records), std::move(stores), stats);
    return {std::move(stats), std::move(dataset)};
}

Dataset rebuild_dataset(const Dataset& base, std::vector<SampleRecord> records, const SpeciesStatsTable& stats) {
    std::map<Modality, EmbeddingStore> stores;
    for (auto m : {Modality::ImageTokens, Modality::DepthTokens, Modality::GeoVector}) {
        if (base.has(m)) stores.emplace(m, base.store(m));
    }
    return Dataset(std::move(records), std::move(stores), stats);
}

Outputs run_make_fixtures(const FixtureSpec& spec, const std::filesystem::path& out_dir) {
    const auto fx = make_fixture(spec);
    write_fixture(fx, out_dir);
    write_json(out_dir / "config.json", desk_config(spec));
    Outputs out{{"metadata", metadata_file(out_dir).string()},
                {"observations", (out_dir / "observations.csv").string()},
                {"growth_form_claims", (out_dir / "growth_form_claims.csv").string()},
                {"observed_cwm", (out_dir / "observed_cwm.csv").string()},
                {"truth", (out_dir / "truth.json").string()},
                {"config", (out_dir / "config.json").string()}};
    for (const auto& [m, _] : fx.stores) out.emplace_back(std::string(modality_name(m)), embedding_file(out_dir, m).string());
    return out;
}

Outputs run_prepare_labels(const std::filesystem::path& observations, const std::filesystem::path& claims,
                           const std::filesystem::path& out_dir, std::size_t* species_kept) {
    const auto obs = load_observations(observations);
    const auto stats = compute_species_stats(obs);
    const auto forms = resolve_growth_form(load_growth_form_claims(claims));
    if (stats.empty()) {
        std::cerr << "warning: no species has at least " << kMinTraitObservations
                  << " observations for any trait; species_stats.csv is empty\n";
    }
    if (species_kept != nullptr) *species_kept = stats.num_species();
    const auto stats_path = out_dir / "species_stats.csv";
    const auto forms_path = out_dir / "growth_forms.csv";
    save_species_stats(stats_path, stats);
    write_text_file(forms_path, format_growth_forms(forms));
    return {{"species_stats", stats_path.string()}, {"growth_forms", forms_path.string()}};
}

Outputs run_train(const LoadedData& data, const PipelineConfig& cfg, const std::filesystem::path& out_dir) {
    const auto ck_dir = out_dir / "checkpoints";
    const auto history = train(data.dataset, data.stats, cfg.model, cfg.train,
                               [&](const EpochMetrics& m, const Trainer& trainer) {
                                   save_checkpoint(checkpoint_path(ck_dir, m.epoch), trainer.snapshot(),
                                                   trainer.scaler(), m.epoch, cfg.train.seed);
                               });
    const auto metrics_path = out_dir / "metrics.jsonl";
    write_text_file(metrics_path, metrics_lines(history));
    return {{"metrics", metrics_path.string()}, {"checkpoints", ck_dir.string()}};
}

namespace {

void write_reports(const std::filesystem::path& dir, const std::vector<FilterReport>& reports, Outputs& out) {
    for (const auto& r : reports) {
        const auto path = dir / fmt::format("filter_report_{}.json", r.iteration);
        write_json(path, r);
        out.emplace_back(fmt::format("stage{}_report_{}", r.stage, r.iteration), path.string());
    }
}

}  // namespace

Outputs run_clean(const LoadedData& data, const PipelineConfig& cfg, CleanStage stage,
                  const std::filesystem::path& out_dir) {
    Outputs out;
    std::optional<Dataset> refined;
    const Dataset* stage2_input = &data.dataset;
    if (stage != CleanStage::Two) {
        const auto dir = out_dir / "stage1";
        auto s1 = run_stage1(data.dataset, data.stats, cfg.model, cfg.train, cfg.cleaning);
        save_metadata(metadata_file(dir), s1.records);
        save_checkpoint(dir / "checkpoint.json", s1.network, s1.scaler, s1.epochs, cfg.train.seed);
        write_text_file(dir / "metrics.jsonl", metrics_lines(s1.history));
        out.emplace_back("stage1_metadata", metadata_file(dir).string());
        out.emplace_back("stage1_checkpoint", (dir / "checkpoint.json").string());
        write_reports(dir, s1.reports, out);
        if (stage == CleanStage::All) {
            refined.emplace(rebuild_dataset(data.dataset, std::move(s1.records), data.stats));
            stage2_input = &*refined;
        }
    }
    if (stage != CleanStage::One) {
        const auto dir = out_dir / "stage2";
        const auto s2 = run_stage2(*stage2_input, data.stats, cfg.model, cfg.train, cfg.cleaning);
        save_metadata(metadata_file(dir), s2.records);
        out.emplace_back("stage2_metadata", metadata_file(dir).string());
        for (std::size_t i = 0; i < s2.histories.size(); ++i) {
            const auto path = dir / fmt::format("metrics_{}.jsonl", i + 1);
            write_text_file(path, metrics_lines(s2.histories[i]));
        }
        write_reports(dir, s2.reports, out);
    }
    return out;
}

Outputs run_infer(const std::filesystem::path& checkpoint, const DataPaths& paths, std::optional<Split> split,
                  const std::filesystem::path& out_dir) {
    const auto ck = load_checkpoint(checkpoint);
    DataPaths no_stats = paths;
    no_stats.stats.reset();
    const auto data = load_data(no_stats, ck.network.config());
    std::vector<std::size_t> samples;
    for (std::size_t i = 0; i < data.dataset.size(); ++i) {
        if (!split || data.dataset.record(i).split == *split) samples.push_back(i);
    }
    const auto preds = predict_samples(ck.network, data.dataset, samples, worker_threads());
    const auto rows = make_prediction_rows(data.dataset, samples, preds, ck.scaler);
    const auto path = out_dir / "predictions.csv";
    write_text_file(path, format_predictions(rows));
    return {{"predictions", path.string()}};
}

Outputs run_aggregate(const std::filesystem::path& predictions, std::size_t min_count,
                      const std::filesystem::path& out_dir) {
    const auto map = aggregate(load_predictions(predictions), min_count);
    const auto path = out_dir / "grid_map.csv";
    write_text_file(path, format_trait_map(map));
    return {{"grid_map", path.string()}};
}

Outputs run_benchmark(const std::vector<std::pair<std::string, std::filesystem::path>>& maps,
                      const std::filesystem::path& observed, const std::filesystem::path& out_dir) {
    if (maps.empty()) throw ValidationError("benchmark: no maps given");
    std::vector<std::pair<std::string, TraitMap>> methods;
    for (const auto& [name, path] : maps) methods.emplace_back(name, load_trait_map(path));
    const auto report = benchmark_report(methods, load_trait_map(observed));
    const auto json_path = out_dir / "benchmark.json";
    const auto text_path = out_dir / "benchmark.txt";
    write_json(json_path, report);
    write_text_file(text_path, render_benchmark_text(report));
    return {{"benchmark_json", json_path.string()}, {"benchmark_text", text_path.string()}};
}

std::vector<EpochMetrics> load_metrics(const std::filesystem::path& path) {
    const auto text = read_text_file(path);
    std::vector<EpochMetrics> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        const auto line = std::string_view(text).substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            out.push_back(epoch_metrics_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(fmt::format("{} line {}: {}", path.string(), line_no, e.what()));
        }
    }
    return out;
}

Outputs run_select(const std::filesystem::path& metrics, SelectionObjective objective,
                   const std::filesystem::path& out_dir) {
    const auto candidates = candidates_from_metrics(load_metrics(metrics), objective);
    if (candidates.empty()) {
        throw ValidationError(fmt::format("{}: no epoch has {} for all four traits", metrics.string(),
                                          objective_name(objective)));
    }
    const auto result = select_checkpoint(candidates);
    const auto path = out_dir / "selection.json";
    write_json(path, result);
    return {{"selection", path.string()}};
}

}  // namespace traitnet
