#include "oracles.hpp"
#include "traitnet/dataset.hpp"
#include "traitnet/util.hpp"
#include "traitnet/weak_labels.hpp"

#include <doctest.h>

#include <algorithm>
#include <array>
#include <map>
#include <set>

#include <cstring>
#include <limits>

using namespace traitnet;

namespace {

std::string with_header(const std::string& rows) { return std::string(kMetadataHeader) + "\n" + rows; }

std::string error_of(auto&& fn) {
    try {
        fn();
    } catch (const ValidationError& e) {
        return e.what();
    }
    return "";
}

std::vector<char> f32_blob(const std::vector<float>& v) {
    std::vector<char> out(v.size() * 4);
    std::memcpy(out.data(), v.data(), out.size());
    return out;
}

const char* kSidecar =
    R"({"modality":"ImageTokens","num_samples":1,"tokens":4,"dim":2,"dtype":"f32le","order":"row-major","sample_ids":["s1"]})";

}  // namespace

TEST_CASE("metadata row maps onto a record") {
    const auto recs = parse_metadata(with_header("s1,sp9,48.3,7.9,Tree,Train,,,,\n"));
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].sample_id == "s1");
    CHECK(recs[0].species_id == "sp9");
    CHECK(recs[0].lat == 48.3);
    CHECK(recs[0].lon == 7.9);
    CHECK(recs[0].growth_form == GrowthForm::Tree);
    CHECK(recs[0].split == Split::Train);
    for (const auto& o : recs[0].observed) CHECK_FALSE(o.has_value());
}

TEST_CASE("metadata latitude above 90 is rejected") {
    const auto msg = error_of([] { parse_metadata(with_header("s1,sp9,91.0,7.9,Tree,Train,,,,\n")); });
    CHECK(msg.find("lat out of range") != std::string::npos);
    CHECK(msg.find("line 2") != std::string::npos);
}

TEST_CASE("reference row with only H observed") {
    const auto recs = parse_metadata(with_header("r1,sp2,-33.9,18.4,Shrub,Reference,1.5,,,,\n"));
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].split == Split::Reference);
    CHECK(recs[0].observed[index(TraitId::H)] == 1.5);
    CHECK_FALSE(recs[0].observed[index(TraitId::LA)].has_value());
    CHECK_FALSE(recs[0].observed[index(TraitId::SLA)].has_value());
    CHECK_FALSE(recs[0].observed[index(TraitId::LN)].has_value());
}

TEST_CASE("metadata rejects malformed rows") {
    CHECK(error_of([] { parse_metadata(with_header("s1,sp9,48,7,Tree,Train\n")); }).find("columns") !=
          std::string::npos);
    CHECK(error_of([] { parse_metadata(with_header("s1,sp9,48,7,Cactus,Train,,,,\n")); })
              .find("growth form") != std::string::npos);
    CHECK(error_of([] { parse_metadata(with_header("s1,sp9,48,7,Tree,Test,,,,\n")); }).find("split") !=
          std::string::npos);
    CHECK(error_of([] { parse_metadata(with_header("s1,sp9,48,7,Tree,Train,,,,\ns1,sp9,48,7,Tree,Train,,,,\n")); })
              .find("duplicate") != std::string::npos);
    CHECK(error_of([] { parse_metadata(with_header("r1,sp9,48,7,Tree,Reference,,,,\n")); })
              .find("reference sample") != std::string::npos);
    CHECK(error_of([] { parse_metadata("sample,species\n"); }).find("header") != std::string::npos);
}

TEST_CASE("metadata round-trips through text") {
    std::vector<SampleRecord> recs(2);
    recs[0] = {"a", "sp1", 0.1, -179.9, GrowthForm::Grass, Split::Val, {}};
    recs[1] = {"b", "sp2", -89.99, 12.345678901234, GrowthForm::Shrub, Split::Reference, {}};
    recs[1].observed[index(TraitId::LN)] = 21.0 / 3.0;
    const auto back = parse_metadata(format_metadata(recs));
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back[i].sample_id == recs[i].sample_id);
        CHECK(back[i].lat == recs[i].lat);
        CHECK(back[i].lon == recs[i].lon);
        CHECK(back[i].growth_form == recs[i].growth_form);
        CHECK(back[i].split == recs[i].split);
        CHECK(back[i].observed == recs[i].observed);
    }
}

TEST_CASE("sidecar with a 32-byte blob decodes to one 4x2 matrix") {
    const auto store = decode_embeddings(f32_blob({1, 2, 3, 4, 5, 6, 7, 8}), kSidecar);
    CHECK(store.num_samples() == 1);
    CHECK(store.tokens() == 4);
    CHECK(store.dim() == 2);
    const auto row = store.row(0);
    CHECK(row.at(0, 0) == 1.0f);
    CHECK(row.at(3, 1) == 8.0f);
}

TEST_CASE("31-byte blob is a length mismatch") {
    auto blob = f32_blob({1, 2, 3, 4, 5, 6, 7, 8});
    blob.pop_back();
    CHECK(error_of([&] { decode_embeddings(blob, kSidecar); }).find("length mismatch") != std::string::npos);
}

TEST_CASE("NaN in the blob is reported with its flat index") {
    const auto blob = f32_blob({1, 2, 3, std::numeric_limits<float>::quiet_NaN(), 5, 6, 7, 8});
    CHECK(error_of([&] { decode_embeddings(blob, kSidecar); }) == "non-finite value at index 3");
}

TEST_CASE("sidecar validation") {
    const auto blob = f32_blob({1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(error_of([&] { decode_embeddings(blob, R"({"modality":"ImageTokens"})"); }).find("missing") !=
          std::string::npos);
    CHECK(error_of([&] {
              decode_embeddings(blob, R"({"modality":"ImageTokens","num_samples":1,"tokens":4,"dim":2,)"
                                      R"("dtype":"f16","order":"row-major","sample_ids":["s1"]})");
          }).find("dtype") != std::string::npos);
    CHECK(error_of([&] {
              decode_embeddings(blob, R"({"modality":"GeoVector","num_samples":1,"tokens":4,"dim":2,)"
                                      R"("dtype":"f32le","order":"row-major","sample_ids":["s1"]})");
          }).find("tokens = 1") != std::string::npos);
    CHECK(error_of([&] { decode_embeddings(blob, "{not json"); }).find("sidecar") != std::string::npos);
}

TEST_CASE("embedding files round-trip and errors name the blob") {
    const auto dir = oracle::fresh_dir("dataset_emb");
    EmbeddingStore store(Modality::DepthTokens, 2, 3, {"x", "y"}, {0.5f, -1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 1e-30f});
    save_embeddings(store, dir / "depth.bin", sidecar_path_for(dir / "depth.bin"));
    const auto back = load_embeddings(dir / "depth.bin", dir / "depth.json");
    CHECK(back.modality() == Modality::DepthTokens);
    CHECK(back.sample_ids() == store.sample_ids());
    CHECK(std::equal(back.values().begin(), back.values().end(), store.values().begin()));
    CHECK(back.find("y") == 1);
    write_text_file(dir / "depth.bin", "abc");
    CHECK(error_of([&] { load_embeddings(dir / "depth.bin", dir / "depth.json"); }).find("depth.bin") !=
          std::string::npos);
}

TEST_CASE("dataset requires every sample in every store") {
    std::vector<SampleRecord> recs{{"a", "sp", 0, 0, GrowthForm::Tree, Split::Train, {}},
                                   {"b", "sp", 0, 0, GrowthForm::Tree, Split::Train, {}}};
    std::map<Modality, EmbeddingStore> stores;
    stores.emplace(Modality::ImageTokens, EmbeddingStore(Modality::ImageTokens, 1, 1, {"a"}, {1.0f}));
    SpeciesStatsTable stats;
    CHECK(error_of([&] { Dataset(recs, stores, stats); }).find("missing") != std::string::npos);
    stores.clear();
    CHECK(error_of([&] { Dataset(recs, stores, stats); }).find("image") != std::string::npos);
}

TEST_CASE("dataset mask follows species stats and observed values") {
    std::vector<SampleRecord> recs{{"a", "sp1", 0, 0, GrowthForm::Tree, Split::Train, {}},
                                   {"r", "sp1", 0, 0, GrowthForm::Tree, Split::Reference, {}}};
    recs[1].observed[index(TraitId::LA)] = 3.0;
    std::map<Modality, EmbeddingStore> stores;
    stores.emplace(Modality::ImageTokens, EmbeddingStore(Modality::ImageTokens, 1, 1, {"a", "r"}, {1.0f, 2.0f}));
    SpeciesStatsTable stats;
    stats.set("sp1", TraitId::H, TraitStats{1.0, 0.1, 1.0, 3});
    Dataset ds(recs, stores, stats);
    CHECK(ds.mask(0)[index(TraitId::H)]);
    CHECK_FALSE(ds.mask(0)[index(TraitId::LA)]);
    CHECK(ds.indices_with_split(Split::Reference) == std::vector<std::size_t>{1});
}

namespace {

std::vector<SampleRecord> strata(std::size_t trees, std::size_t shrubs, std::size_t grasses) {
    std::vector<SampleRecord> out;
    auto add = [&](std::size_t n, GrowthForm g, char tag) {
        for (std::size_t i = 0; i < n; ++i) {
            out.push_back({std::string(1, tag) + std::to_string(i), "sp", 0, 0, g, Split::Train, {}});
        }
    };
    add(trees, GrowthForm::Tree, 't');
    add(shrubs, GrowthForm::Shrub, 's');
    add(grasses, GrowthForm::Grass, 'g');
    return out;
}

std::array<std::size_t, 3> per_form(const std::vector<std::string>& ids) {
    std::array<std::size_t, 3> n{};
    for (const auto& id : ids) n[id[0] == 't' ? 0 : id[0] == 's' ? 1 : 2]++;
    return n;
}

}  // namespace

TEST_CASE("stratified split sizes") {
    auto s = stratified_split(strata(10, 10, 10), 0.8, 1);
    CHECK(per_form(s.train) == std::array<std::size_t, 3>{8, 8, 8});
    CHECK(per_form(s.val) == std::array<std::size_t, 3>{2, 2, 2});
    s = stratified_split(strata(50, 30, 20), 0.8, 1);
    CHECK(per_form(s.train) == std::array<std::size_t, 3>{40, 24, 16});
    CHECK(per_form(s.val) == std::array<std::size_t, 3>{10, 6, 4});
}

TEST_CASE("stratified split is deterministic, disjoint and order independent") {
    auto recs = strata(17, 9, 13);
    const auto a = stratified_split(recs, 0.8, 5);
    const auto b = stratified_split(recs, 0.8, 5);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    std::reverse(recs.begin(), recs.end());
    const auto c = stratified_split(recs, 0.8, 5);
    CHECK(std::set<std::string>(a.train.begin(), a.train.end()) ==
          std::set<std::string>(c.train.begin(), c.train.end()));
    std::set<std::string> all(a.train.begin(), a.train.end());
    for (const auto& v : a.val) CHECK(all.insert(v).second);
    CHECK(all.size() == recs.size());
    const auto d = stratified_split(recs, 0.8, 6);
    CHECK(std::set<std::string>(a.train.begin(), a.train.end()) !=
          std::set<std::string>(d.train.begin(), d.train.end()));
}
