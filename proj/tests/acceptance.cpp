#include "gradcheck.hpp"
#include "oracles.hpp"
#include "traitnet/checkpoint.hpp"
#include "traitnet/cleaning.hpp"
#include "traitnet/fixtures.hpp"
#include "traitnet/geo_eval.hpp"
#include "traitnet/losses.hpp"
#include "traitnet/pipeline.hpp"
#include "traitnet/selection.hpp"
#include "traitnet/trainer.hpp"
#include "traitnet/util.hpp"
#include "traitnet/weak_labels.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

namespace fs = std::filesystem;
using namespace traitnet;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

Outcome gradient_correctness() {
    const auto start = Clock::now();
    const auto r = gradcheck::run(gradcheck::small_config(), 4, 10, 1e-4, 101);
    const double t = seconds_since(start);
    return {r.worst_relative_error < 1e-4 && t < 30.0,
            fmt::format("worst relative error {:.3g} at {} over {} coordinates, {:.2f}s", r.worst_relative_error,
                        r.worst_coordinate, r.coordinates, t)};
}

Outcome loss_formulas() {
    Rng r(2024);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double y = r.normal(0, 2), mu = r.normal(0, 2), s = r.uniform(-4, 4);
        worst = std::max(worst, std::fabs(gaussian_nll(y, mu, s).loss - oracle::gaussian_nll(y, mu, s)));
        worst = std::max(worst, std::fabs(laplace_nll(y, mu, s).loss - oracle::laplace_nll(y, mu, s)));
    }
    const double a = gaussian_nll(2, 1, 0).loss;
    const double b = laplace_nll(3, 1, 0).loss;
    const double c = laplace_nll(1, 0, std::numbers::ln2).loss;
    // The third example is quoted to six decimals.
    const bool examples = a == 0.5 && b == 2.0 && std::fabs(c - 1.193147) < 5e-7;
    return {worst <= 1e-12 && examples,
            fmt::format("max |diff| {:.3g}; examples {} {} {:.7f}", worst, a, b, c)};
}

Outcome truncation() {
    const TraitStats s{0.0, 1.0, 0.0, 10};
    double sum = 0.0, lo = 0.0, hi = 0.0;
    bool inside = true;
    for (std::uint64_t i = 0; i < 100000; ++i) {
        const double v = sample_label(s, 5, i, fmt::format("s{}", i % 97), TraitId::SLA);
        inside = inside && std::fabs(v) <= 0.674490;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        sum += v;
    }
    const double mean = sum / 100000.0;
    return {inside && std::fabs(mean) <= 0.01, fmt::format("range [{:.6f}, {:.6f}], mean {:.5f}", lo, hi, mean)};
}

Outcome stratified_batching() {
    const auto fx = make_fixture(FixtureSpec{});
    std::vector<StratumMember> members;
    for (std::size_t i = 0; i < fx.records.size(); ++i) {
        if (fx.records[i].split == Split::Train) members.push_back({i, fx.records[i].growth_form});
    }
    std::size_t batches = 0, violations = 0;
    bool identical = true;
    for (std::size_t bs : {32, 256, 7}) {
        for (std::uint64_t epoch = 0; epoch < 5; ++epoch) {
            const auto b = make_stratified_batches(members, bs, 7, epoch);
            identical = identical && b == make_stratified_batches(members, bs, 7, epoch);
            for (std::size_t k = 0; k < b.size(); ++k) {
                std::array<std::size_t, 3> n{};
                for (auto i : b[k]) ++n[index(fx.records[i].growth_form)];
                for (auto f : {GrowthForm::Tree, GrowthForm::Shrub, GrowthForm::Grass}) {
                    if (n[index(f)] != batch_quota(bs, k, f)) ++violations;
                }
                ++batches;
            }
        }
    }
    return {violations == 0 && identical && batches > 0,
            fmt::format("{} batches, {} quota violations, repeat identical: {}", batches, violations, identical)};
}

struct Corpus {
    Fixture fx;
    SpeciesStatsTable stats;
    Dataset ds;

    explicit Corpus(const FixtureSpec& spec)
        : fx(make_fixture(spec)), stats(compute_species_stats(fx.observations)), ds(fx.records, fx.stores, stats) {}
};

std::string r2_list(const PerTrait<std::optional<double>>& r2) {
    std::string out;
    for (auto t : kAllTraits) {
        out += fmt::format("{}{}={}", out.empty() ? "" : " ", trait_name(t),
                           r2[index(t)] ? fmt::format("{:.4f}", *r2[index(t)]) : std::string("--"));
    }
    return out;
}

Outcome learnability() {
    const FixtureSpec spec;
    const Corpus c(spec);
    const auto cfg = desk_config(spec);
    const auto start = Clock::now();
    const auto history = train(c.ds, c.stats, cfg.model, cfg.train);
    const double t = seconds_since(start);
    const auto& last = history.back();
    bool ok = history.size() <= 30 && t < 300.0;
    for (const auto& v : last.val_r2) ok = ok && v && *v > 0.9;
    return {ok, fmt::format("epoch {} val R2 {}, {:.2f}s", last.epoch, r2_list(last.val_r2), t)};
}

Outcome heteroscedasticity() {
    FixtureSpec spec;
    spec.rel_std_min = 0.05;
    spec.rel_std_max = 0.5;
    const Corpus c(spec);
    const auto cfg = desk_config(spec);
    FusionNetwork net(cfg.model);
    train(c.ds, c.stats, cfg.model, cfg.train, [&](const EpochMetrics&, const Trainer& tr) { net = tr.snapshot(); });
    const auto val = c.ds.indices_with_split(Split::Val);
    const auto preds = predict_samples(net, c.ds, val);
    bool ok = true;
    std::string detail = "spearman";
    for (auto t : kAllTraits) {
        std::vector<double> learned, truth;
        for (std::size_t k = 0; k < val.size(); ++k) {
            learned.push_back(std::exp(preds[k][index(t)].log_scale));
            const auto& species = c.fx.truth.true_species.at(c.ds.record(val[k]).sample_id);
            truth.push_back(c.fx.truth.species.at(species).std[index(t)]);
        }
        const double rho = oracle::spearman(learned, truth);
        ok = ok && rho > 0.5;
        detail += fmt::format(" {}={:.3f}", trait_name(t), rho);
    }
    return {ok, detail + fmt::format(" over {} val samples", val.size())};
}

struct Precision {
    std::size_t removed = 0;
    std::size_t hits = 0;
    double base_rate = 0.0;

    double value() const { return removed == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(removed); }
    bool pass() const { return removed > 0 && value() > 2.0 * base_rate; }
};

Precision removal_precision(const Dataset& input, const std::vector<FilterReport>& reports,
                            const std::set<std::string>& corrupted) {
    Precision p;
    const auto train_idx = input.indices_with_split(Split::Train);
    std::size_t bad = 0;
    for (auto i : train_idx) bad += corrupted.count(input.record(i).sample_id);
    p.base_rate = static_cast<double>(bad) / static_cast<double>(train_idx.size());
    for (const auto& r : reports) {
        for (const auto& id : r.removed) {
            ++p.removed;
            p.hits += corrupted.count(id);
        }
    }
    return p;
}

Outcome cleaning_efficacy() {
    FixtureSpec spec;
    spec.feature_corruption_fraction = 0.1;
    spec.label_corruption_fraction = 0.1;
    const Corpus c(spec);
    const auto cfg = desk_config(spec);
    std::set<std::string> corrupted(c.fx.truth.feature_corrupted.begin(), c.fx.truth.feature_corrupted.end());
    corrupted.insert(c.fx.truth.label_corrupted.begin(), c.fx.truth.label_corrupted.end());

    const auto s1 = run_stage1(c.ds, c.stats, cfg.model, cfg.train, cfg.cleaning);
    const auto p1 = removal_precision(c.ds, s1.reports, corrupted);
    const Dataset after1(s1.records, c.fx.stores, c.stats);
    const auto s2 = run_stage2(after1, c.stats, cfg.model, cfg.train, cfg.cleaning);
    const auto p2 = removal_precision(after1, s2.reports, corrupted);

    const auto raw = train(c.ds, c.stats, cfg.model, cfg.train).back().val_r2;
    const Dataset refined_ds(s2.records, c.fx.stores, c.stats);
    const auto refined = train(refined_ds, c.stats, cfg.model, cfg.train).back().val_r2;
    bool r2_ok = true;
    for (auto t : kAllTraits) {
        const auto i = index(t);
        r2_ok = r2_ok && raw[i] && refined[i] && *refined[i] >= *raw[i] - 0.02;
    }
    const auto la = index(TraitId::LA);
    r2_ok = r2_ok && raw[la] && refined[la] && *refined[la] > *raw[la];
    return {p1.pass() && p2.pass() && r2_ok,
            fmt::format("stage1 precision {:.3f} ({} removed, base {:.3f}); stage2 precision {:.3f} ({} removed, "
                        "base {:.3f}); raw val R2 {}; refined val R2 {}",
                        p1.value(), p1.removed, p1.base_rate, p2.value(), p2.removed, p2.base_rate, r2_list(raw),
                        r2_list(refined))};
}

std::vector<std::vector<double>> random_points(Rng& r, std::size_t n, std::size_t d, bool grid) {
    std::vector<std::vector<double>> p(n, std::vector<double>(d));
    for (auto& x : p)
        for (auto& v : x) v = grid ? static_cast<double>(r.below(5)) : r.uniform();
    return p;
}

Outcome nds_equivalence() {
    Rng r(77);
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto p = random_points(r, 1 + r.below(50), 4, trial % 2 == 1);
        if (non_dominated_sort(p) != oracle::peel_fronts(p)) ++mismatches;
    }
    return {mismatches == 0, fmt::format("{} mismatches in 1000 instances", mismatches)};
}

Outcome hypervolume_oracle() {
    using Points = std::vector<std::vector<double>>;
    Rng r(88);
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        const auto p = random_points(r, 1 + r.below(20), 4, false);
        const std::vector<double> ref{0, 0, 0, 0};
        const double mc = oracle::mc_hypervolume(p, ref, 1000000, 500 + trial);
        worst = std::max(worst, std::fabs(hypervolume(p, ref) - mc) / mc);
    }
    const std::vector<double> ref2{0, 0}, ref3{0, 0, 0};
    const double a = hypervolume(Points{{1, 2}}, ref2);
    const double b = hypervolume(Points{{1, 2}, {2, 1}}, ref2);
    const double c = hypervolume(Points{{1, 1, 1}}, ref3);
    return {worst < 0.01 && a == 2.0 && b == 3.0 && c == 1.0,
            fmt::format("worst relative gap to Monte Carlo {:.4f}; examples {} {} {}", worst, a, b, c)};
}

Outcome aggregation_metrics() {
    const std::vector<double> o{1, 2, 5, 9}, w{1, 0.5, 0.7, 0.9};
    const auto perfect = weighted_metrics(o, o, w);
    const bool perfect_ok = perfect.r2 == 1.0 && perfect.nmae == 0.0 && perfect.pearson_log_r &&
                            std::fabs(*perfect.pearson_log_r - 1.0) < 1e-12;

    // Cells on one latitude band share an area weight.
    Rng r(9);
    std::vector<double> p2, o2, w2;
    for (int i = 0; i < 40; ++i) {
        o2.push_back(r.uniform(1, 10));
        p2.push_back(o2.back() + r.normal(0, 1));
        w2.push_back(cell_area_weight({37, i}));
    }
    double mo = 0.0;
    for (double v : o2) mo += v;
    mo /= static_cast<double>(o2.size());
    double res = 0.0, tot = 0.0;
    for (std::size_t i = 0; i < o2.size(); ++i) {
        res += (o2[i] - p2[i]) * (o2[i] - p2[i]);
        tot += (o2[i] - mo) * (o2[i] - mo);
    }
    const double band_gap = std::fabs(weighted_metrics(p2, o2, w2).r2 - (1.0 - res / tot));

    const std::vector<double> no{1, 4}, np{1, 2}, nw{1, 1};
    const double nmae = weighted_nmae(np, no, nw);

    std::vector<PredictionRow> rows;
    for (int i = 0; i < 19; ++i) rows.push_back({"a", 10.5, 10.5, {1, 1, 1, 1}, {0, 0, 0, 0}});
    for (int i = 0; i < 20; ++i) rows.push_back({"b", 11.5, 10.5, {1, 1, 1, 1}, {0, 0, 0, 0}});
    const auto map = aggregate(rows, 20);
    const bool dropped = map.size() == 1 && !map.contains({10, 10}) && map.contains({11, 10});

    return {perfect_ok && band_gap < 1e-12 && std::fabs(nmae - 1.0 / 3.0) < 1e-12 && dropped,
            fmt::format("perfect ({}, {}, {}); band gap {:.3g}; nMAE {:.4f}; 19-cell dropped: {}", perfect.r2,
                        perfect.nmae, perfect.pearson_log_r.value_or(NAN), band_gap, nmae, dropped)};
}

void run_pipeline(const fs::path& root) {
    const FixtureSpec spec;
    const auto cfg = desk_config(spec);
    const auto data = root / "data";
    run_make_fixtures(spec, data);
    run_prepare_labels(data / "observations.csv", data / "growth_form_claims.csv", root / "labels");
    const DataPaths paths{data, std::nullopt, root / "labels" / "species_stats.csv"};
    const auto loaded = load_data(paths, cfg.model);
    run_train(loaded, cfg, root / "train");
    run_clean(loaded, cfg, CleanStage::All, root / "clean");
    run_select(root / "train" / "metrics.jsonl", cfg.eval.objective, root / "select");
    const auto sel = nlohmann::json::parse(read_text_file(root / "select" / "selection.json"));
    const auto ck = checkpoint_path(root / "train" / "checkpoints", sel.at("selected_epoch").get<std::size_t>());
    run_infer(ck, paths, Split::Inference, root / "infer");
    run_aggregate(root / "infer" / "predictions.csv", cfg.eval.min_count, root / "aggregate");
    run_benchmark({{"Ours", root / "aggregate" / "grid_map.csv"}}, data / "observed_cwm.csv", root / "benchmark");
}

std::map<std::string, std::string> tree_contents(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file() || e.path().filename() == kManifestName) continue;
        out[fs::relative(e.path(), root).generic_string()] = read_text_file(e.path());
    }
    return out;
}

Outcome determinism() {
    const auto a = oracle::fresh_dir("acceptance_a");
    const auto b = oracle::fresh_dir("acceptance_b");
    run_pipeline(a);
    run_pipeline(b);
    const auto ta = tree_contents(a);
    const auto tb = tree_contents(b);
    std::size_t differing = 0;
    for (const auto& [name, bytes] : ta) {
        const auto it = tb.find(name);
        if (it == tb.end() || it->second != bytes) ++differing;
    }
    const bool ok = ta.size() == tb.size() && differing == 0 && ta.contains("infer/predictions.csv") &&
                    ta.contains("benchmark/benchmark.json") && ta.contains("clean/stage2/metadata.csv");
    return {ok, fmt::format("{} files compared, {} differ", ta.size(), differing)};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient correctness", gradient_correctness},
        {"loss formulas", loss_formulas},
        {"weak-label truncation", truncation},
        {"stratified batching", stratified_batching},
        {"synthetic learnability", learnability},
        {"heteroscedasticity recovery", heteroscedasticity},
        {"cleaning efficacy", cleaning_efficacy},
        {"NDS oracle equivalence", nds_equivalence},
        {"hypervolume oracle", hypervolume_oracle},
        {"aggregation and metrics", aggregation_metrics},
        {"determinism", determinism},
    };
    int failed = 0;
    for (const auto& [name, check] : criteria) {
        const auto start = Clock::now();
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, fmt::format("threw: {}", e.what())};
        }
        std::cout << fmt::format("{} {}: {} [{:.1f}s]", o.pass ? "PASS" : "FAIL", name, o.detail,
                                 seconds_since(start))
                  << std::endl;
        failed += o.pass ? 0 : 1;
    }
    std::cout << fmt::format("{} of {} criteria passed", criteria.size() - failed, criteria.size()) << std::endl;
    return failed == 0 ? 0 : 1;
}
