#include "oracles.hpp"
#include "traitnet/fixtures.hpp"
#include "traitnet/geo_eval.hpp"
#include "traitnet/util.hpp"

#include <doctest.h>

#include <algorithm>
#include <array>
#include <map>
#include <set>

#include <nlohmann/json.hpp>
#include <set>

using namespace traitnet;

namespace {

std::vector<std::string> fixture_files(const std::filesystem::path& dir) {
    std::vector<std::string> out;
    for (const auto& e : std::filesystem::directory_iterator(dir)) out.push_back(e.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TEST_CASE("default fixture loads as a valid dataset") {
    const auto dir = oracle::fresh_dir("fixture_default");
    FixtureSpec spec;
    write_fixture(make_fixture(spec), dir);
    const auto records = load_metadata(metadata_file(dir));
    std::map<Modality, EmbeddingStore> stores;
    for (auto m : {Modality::ImageTokens, Modality::DepthTokens, Modality::GeoVector}) {
        const auto bin = embedding_file(dir, m);
        stores.emplace(m, load_embeddings(bin, sidecar_path_for(bin)));
    }
    const auto stats = compute_species_stats(load_observations(dir / "observations.csv"));
    const auto forms = resolve_growth_form(load_growth_form_claims(dir / "growth_form_claims.csv"));
    const Dataset ds(records, stores, stats);
    CHECK(ds.indices_with_split(Split::Train).size() + ds.indices_with_split(Split::Val).size() == 900);
    CHECK(ds.indices_with_split(Split::Reference).size() == spec.reference_samples);
    CHECK(ds.indices_with_split(Split::Inference).size() == spec.inference_samples);
    std::set<GrowthForm> seen;
    for (const auto& r : records) {
        seen.insert(r.growth_form);
        CHECK(forms.at(r.species_id) == r.growth_form);
    }
    CHECK(seen.size() == 3);
    CHECK(stats.num_species() == spec.num_species);
    CHECK_FALSE(load_trait_map(dir / "observed_cwm.csv").empty());
    const auto truth = fixture_truth_from_json(nlohmann::json::parse(read_text_file(dir / "truth.json")));
    CHECK(truth.species.size() == spec.num_species);
}

TEST_CASE("corruption fractions are exact") {
    FixtureSpec spec;
    spec.feature_corruption_fraction = 0.1;
    spec.label_corruption_fraction = 0.1;
    const auto fx = make_fixture(spec);
    std::size_t train = 0;
    for (const auto& r : fx.records) train += r.split == Split::Train ? 1 : 0;
    const auto expected = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(train)));
    CHECK(fx.truth.feature_corrupted.size() == expected);
    CHECK(fx.truth.label_corrupted.size() == expected);
    std::set<std::string> feature(fx.truth.feature_corrupted.begin(), fx.truth.feature_corrupted.end());
    for (const auto& id : fx.truth.label_corrupted) CHECK_FALSE(feature.contains(id));
    for (const auto& r : fx.records) {
        const bool relabelled = std::find(fx.truth.label_corrupted.begin(), fx.truth.label_corrupted.end(),
                                          r.sample_id) != fx.truth.label_corrupted.end();
        CHECK((fx.truth.true_species.at(r.sample_id) != r.species_id) == relabelled);
        if (feature.contains(r.sample_id) || relabelled) CHECK(r.split == Split::Train);
    }
}

TEST_CASE("same seed gives identical bytes, another seed differs") {
    FixtureSpec spec;
    spec.samples = 300;
    spec.feature_corruption_fraction = 0.1;
    const auto a = oracle::fresh_dir("fixture_a");
    const auto b = oracle::fresh_dir("fixture_b");
    const auto c = oracle::fresh_dir("fixture_c");
    write_fixture(make_fixture(spec), a);
    write_fixture(make_fixture(spec), b);
    spec.seed = 2;
    write_fixture(make_fixture(spec), c);
    const auto files = fixture_files(a);
    CHECK(files == fixture_files(b));
    CHECK(files.size() == 11);
    for (const auto& f : files) {
        INFO(f);
        CHECK(read_text_file(a / f) == read_text_file(b / f));
    }
    CHECK(read_text_file(a / "image_tokens.bin") != read_text_file(c / "image_tokens.bin"));
}

TEST_CASE("fixture spec json rejects unknown keys and bad values") {
    nlohmann::json j = FixtureSpec{};
    CHECK(j.get<FixtureSpec>().samples == 900);
    j["sampels"] = 10;
    CHECK_THROWS(j.get<FixtureSpec>());
    FixtureSpec odd;
    odd.num_species = 7;
    CHECK_THROWS(odd.validate());
}
