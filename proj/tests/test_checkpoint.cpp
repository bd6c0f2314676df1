#include "gradcheck.hpp"
#include "oracles.hpp"
#include "traitnet/checkpoint.hpp"

#include <doctest.h>

#include <algorithm>
#include <array>
#include <map>
#include <set>

#include <cstring>
#include <limits>
#include <nlohmann/json.hpp>

using namespace traitnet;

TEST_CASE("checkpoint round-trip is exact for f32 parameters") {
    const auto dir = oracle::fresh_dir("ckpt");
    const auto cfg = gradcheck::small_config();
    const auto net = FusionNetwork::init_params(cfg, 3).rounded_to_f32();
    const MinMaxScaler scaler({1, 2, 3, 4}, {5, 600, 7.5, 8});
    const auto path = checkpoint_path(dir, 12);
    CHECK(path.filename() == "epoch_012.json");
    save_checkpoint(path, net, scaler, 12, 99);
    const auto ck = load_checkpoint(path);
    CHECK(ck.epoch == 12);
    CHECK(ck.seed == 99);
    CHECK(ck.scaler.max(TraitId::LA) == 600);
    const auto a = net.blocks();
    const auto b = ck.network.blocks();
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].name == b[k].name);
        CHECK(std::equal(a[k].value.begin(), a[k].value.end(), b[k].value.begin()));
    }
    const auto manifest = nlohmann::json::parse(read_text_file(path));
    CHECK(manifest.at("dtype") == "f32le");
    CHECK(manifest.at("blob") == "epoch_012.bin");
}

TEST_CASE("damaged checkpoints are rejected with the path") {
    const auto dir = oracle::fresh_dir("ckpt_bad");
    const auto cfg = gradcheck::small_config();
    const auto net = FusionNetwork::init_params(cfg, 3);
    const auto path = dir / "c.json";
    save_checkpoint(path, net, MinMaxScaler{}, 1, 0);
    auto blob = read_binary_file(dir / "c.bin");

    auto expect_error = [&](const std::string& fragment) {
        try {
            load_checkpoint(path);
            FAIL("expected an error");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find(fragment) != std::string::npos);
        }
    };
    auto truncated = blob;
    truncated.resize(truncated.size() - 4);
    write_binary_file(dir / "c.bin", truncated);
    expect_error("bytes");

    auto nan = blob;
    const float q = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(nan.data() + 8, &q, 4);
    write_binary_file(dir / "c.bin", nan);
    expect_error("non-finite");

    write_binary_file(dir / "c.bin", blob);
    auto manifest = nlohmann::json::parse(read_text_file(path));
    manifest["blocks"][0]["shape"] = {1, 1};
    write_text_file(path, manifest.dump());
    expect_error("c.json");

    write_text_file(path, "{");
    expect_error("c.json");
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.json"), ValidationError);
}

TEST_CASE("prediction CSV round-trip") {
    std::vector<PredictionRow> rows{{"q1", 45.25, -3.5, {1.5, 1234.5, 15, 20.125}, {-0.5, 0.25, -2, 1e-9}},
                                    {"q2", -10, 179.999, {0, -1, 2, 3}, {0, 0, 0, 0}}};
    const auto text = format_predictions(rows);
    CHECK(text.rfind(std::string(kPredictionsHeader), 0) == 0);
    const auto back = parse_predictions(text);
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back[i].sample_id == rows[i].sample_id);
        CHECK(back[i].lat == rows[i].lat);
        CHECK(back[i].mu == rows[i].mu);
        CHECK(back[i].log_scale == rows[i].log_scale);
    }
    CHECK_THROWS_AS(parse_predictions(std::string(kPredictionsHeader) + "\nq1,1,2,3\n"), ValidationError);
}
