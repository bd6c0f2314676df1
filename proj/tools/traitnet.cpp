#include "traitnet/pipeline.hpp"
#include "traitnet/util.hpp"

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using namespace traitnet;

namespace {

struct Globals {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::string out_dir = ".";
    std::vector<std::string> overrides;
};

struct DataArgs {
    std::string data_dir;
    std::optional<std::string> metadata;
    std::optional<std::string> stats;

    DataPaths paths() const {
        DataPaths p{data_dir, std::nullopt, std::nullopt};
        if (metadata) p.metadata = *metadata;
        if (stats) p.stats = *stats;
        return p;
    }

    void add_inputs(Outputs& inputs) const {
        inputs.emplace_back("data_dir", data_dir);
        if (metadata) inputs.emplace_back("metadata", *metadata);
        if (stats) inputs.emplace_back("stats", *stats);
    }
};

void add_data_options(CLI::App* cmd, DataArgs& args, bool stats_required) {
    cmd->add_option("--data", args.data_dir, "Directory holding the embedding files (and metadata.csv)")->required();
    cmd->add_option("--metadata", args.metadata, "Metadata CSV to use instead of <data>/metadata.csv");
    auto* stats = cmd->add_option("--stats", args.stats, "species_stats.csv from prepare-labels");
    if (stats_required) stats->required();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Plant trait regression from precomputed embeddings"};
    app.set_version_flag("--version", std::string(kToolVersion));
    app.require_subcommand(1);

    Globals g;
    app.add_option("--config", g.config, "Pipeline config JSON");
    app.add_option("--seed", g.seed, "Seed overriding train.seed (fixture seed for make-fixtures)");
    app.add_option("--out-dir", g.out_dir, "Output directory")->capture_default_str();
    app.add_option("--set", g.overrides, "Config override section.key=value (repeatable)");

    auto* fixtures = app.add_subcommand("make-fixtures", "Write a synthetic dataset");
    std::optional<std::string> fixture_spec;
    fixtures->add_option("--spec", fixture_spec, "Fixture spec JSON (defaults apply when omitted)");

    auto* prepare = app.add_subcommand("prepare-labels", "Per-species trait statistics and growth forms");
    std::string observations, claims;
    prepare->add_option("--observations", observations, "Trait observations CSV")->required();
    prepare->add_option("--claims", claims, "Growth-form claims CSV")->required();

    auto* train_cmd = app.add_subcommand("train", "Train and checkpoint every epoch");
    DataArgs train_data;
    add_data_options(train_cmd, train_data, true);

    auto* clean = app.add_subcommand("clean", "Two-stage data cleaning");
    DataArgs clean_data;
    add_data_options(clean, clean_data, true);
    std::string stage = "all";
    clean->add_option("--stage", stage, "1, 2 or all")->check(CLI::IsMember({"1", "2", "all"}))->capture_default_str();

    auto* infer = app.add_subcommand("infer", "Predict trait means and log-scales");
    DataArgs infer_data;
    add_data_options(infer, infer_data, false);
    std::string checkpoint;
    std::string split = "Inference";
    infer->add_option("--checkpoint", checkpoint, "Checkpoint manifest JSON")->required();
    infer->add_option("--split", split, "Train, Val, Reference, Inference or all")->capture_default_str();

    auto* aggregate_cmd = app.add_subcommand("aggregate", "Average predictions on the 1-degree grid");
    std::string predictions;
    std::optional<std::size_t> min_count;
    aggregate_cmd->add_option("--predictions", predictions, "predictions.csv from infer")->required();
    aggregate_cmd->add_option("--min-count", min_count, "Minimum predictions per cell (default eval.min_count, 20)");

    auto* benchmark = app.add_subcommand("benchmark", "Area-weighted comparison against observed CWMs");
    std::vector<std::string> maps;
    std::string observed;
    benchmark->add_option("--map", maps, "name=grid_map.csv (repeatable)")->required();
    benchmark->add_option("--observed", observed, "Observed CWM grid map")->required();

    auto* select = app.add_subcommand("select", "Pareto/hypervolume checkpoint selection");
    std::string metrics;
    std::optional<std::string> objective;
    select->add_option("--metrics", metrics, "metrics.jsonl from train")->required();
    select->add_option("--objective", objective, "val_r2 or reference_r2 (default eval.objective)")
        ->check(CLI::IsMember({"val_r2", "reference_r2"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const auto start = std::chrono::steady_clock::now();
    try {
        const fs::path out_dir = g.out_dir;
        const PipelineConfig cfg = load_config(g.config ? std::optional<fs::path>(*g.config) : std::nullopt,
                                               g.overrides, g.seed);
        RunManifest manifest;
        manifest.config_path = g.config.value_or("");
        manifest.config = cfg;
        manifest.seed = cfg.train.seed;
        Outputs& in = manifest.inputs;
        Outputs out;

        if (*fixtures) {
            manifest.command = "make-fixtures";
            FixtureSpec spec;
            if (fixture_spec) {
                in.emplace_back("spec", *fixture_spec);
                try {
                    spec = nlohmann::json::parse(read_text_file(*fixture_spec)).get<FixtureSpec>();
                } catch (const nlohmann::json::exception& e) {
                    throw ValidationError(fmt::format("{}: {}", *fixture_spec, e.what()));
                }
            }
            if (g.seed) spec.seed = *g.seed;
            manifest.seed = spec.seed;
            manifest.config = desk_config(spec);
            out = run_make_fixtures(spec, out_dir);
        } else if (*prepare) {
            manifest.command = "prepare-labels";
            in = {{"observations", observations}, {"claims", claims}};
            out = run_prepare_labels(observations, claims, out_dir);
        } else if (*train_cmd) {
            manifest.command = "train";
            train_data.add_inputs(in);
            out = run_train(load_data(train_data.paths(), cfg.model), cfg, out_dir);
        } else if (*clean) {
            manifest.command = "clean --stage " + stage;
            clean_data.add_inputs(in);
            const CleanStage s = stage == "1" ? CleanStage::One : stage == "2" ? CleanStage::Two : CleanStage::All;
            out = run_clean(load_data(clean_data.paths(), cfg.model), cfg, s, out_dir);
        } else if (*infer) {
            manifest.command = "infer";
            in.emplace_back("checkpoint", checkpoint);
            infer_data.add_inputs(in);
            std::optional<Split> which;
            if (split != "all") {
                which = parse_split(split);
                if (!which) throw ValidationError(fmt::format("--split: unknown split '{}'", split));
            }
            out = run_infer(checkpoint, infer_data.paths(), which, out_dir);
        } else if (*aggregate_cmd) {
            manifest.command = "aggregate";
            in.emplace_back("predictions", predictions);
            out = run_aggregate(predictions, min_count.value_or(cfg.eval.min_count), out_dir);
        } else if (*benchmark) {
            manifest.command = "benchmark";
            std::vector<std::pair<std::string, fs::path>> named;
            for (const auto& m : maps) {
                const auto eq = m.find('=');
                if (eq == std::string::npos || eq == 0 || eq + 1 == m.size()) {
                    throw ValidationError(fmt::format("--map expects name=path, got '{}'", m));
                }
                named.emplace_back(m.substr(0, eq), m.substr(eq + 1));
                in.emplace_back("map:" + m.substr(0, eq), m.substr(eq + 1));
            }
            in.emplace_back("observed", observed);
            out = run_benchmark(named, observed, out_dir);
            std::cout << read_text_file(out_dir / "benchmark.txt");
        } else if (*select) {
            manifest.command = "select";
            in.emplace_back("metrics", metrics);
            SelectionObjective obj = cfg.eval.objective;
            if (objective) obj = *objective == "val_r2" ? SelectionObjective::ValR2 : SelectionObjective::ReferenceR2;
            out = run_select(metrics, obj, out_dir);
            const auto sel = nlohmann::json::parse(read_text_file(out_dir / "selection.json"));
            std::cout << "selected epoch " << sel.at("selected_epoch").get<std::size_t>() << "\n";
        }

        manifest.outputs = out;
        manifest.wall_clock_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        write_run_manifest(out_dir, manifest);
        return 0;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const TrainingError& e) {
        std::cerr << "training failed: " << e.what() << "\n";
        return 3;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}
