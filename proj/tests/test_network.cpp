#include "gradcheck.hpp"
#include "traitnet/network.hpp"

#include <doctest.h>

#include <algorithm>
#include <array>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

using namespace traitnet;

namespace {

Eigen::MatrixXd pool(std::vector<float> v, std::size_t tokens, std::size_t dim, std::size_t bins) {
    return adaptive_avg_pool(TokenView{v, tokens, dim}, bins);
}

}  // namespace

TEST_CASE("adaptive pooling") {
    auto even = pool({1, 2, 3, 4}, 4, 1, 2);
    REQUIRE(even.rows() == 2);
    CHECK(even(0, 0) == 1.5);
    CHECK(even(1, 0) == 3.5);
    auto overlap = pool({1, 2, 3}, 3, 1, 2);
    CHECK(overlap(0, 0) == 1.5);
    CHECK(overlap(1, 0) == 2.5);
    auto same = pool({1, 2, 3, 4, 5, 6}, 3, 2, 3);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 2; ++c) CHECK(same(r, c) == static_cast<double>(r * 2 + c + 1));
}

TEST_CASE("zero network predicts zero mean and unit scale") {
    const auto cfg = gradcheck::small_config();
    FusionNetwork net(cfg);
    const auto b = gradcheck::make_batch(cfg, 3, 1);
    for (const auto& p : net.predict(b.inputs))
        for (const auto& t : p) {
            CHECK(t.mu == 0.0);
            CHECK(t.log_scale == 0.0);
            CHECK(t.scale() == 1.0);
        }
}

TEST_CASE("image plus geo configuration dimensions") {
    ModelConfig cfg;
    cfg.use_depth = false;
    CHECK(cfg.concat_dim() == 768 + 256);
    CHECK(cfg.resolved_backbone_dim() == 768);
    cfg.use_depth = true;
    CHECK(cfg.resolved_backbone_dim() == 1024);
}

TEST_CASE("outputs are per-sample") {
    const auto cfg = gradcheck::small_config();
    const auto net = FusionNetwork::init_params(cfg, 3);
    const auto b = gradcheck::make_batch(cfg, 5, 2);
    const auto all = net.predict(b.inputs);
    REQUIRE(all.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        BatchInputs one;
        one.image = {b.inputs.image[i]};
        one.depth = {b.inputs.depth[i]};
        one.geo = {b.inputs.geo[i]};
        const auto single = net.predict(one);
        for (std::size_t t = 0; t < kNumTraits; ++t) {
            CHECK(single[0][t].mu == doctest::Approx(all[i][t].mu).epsilon(1e-12));
            CHECK(single[0][t].log_scale == doctest::Approx(all[i][t].log_scale).epsilon(1e-12));
        }
    }
}

TEST_CASE("zero upstream gradient leaves parameter gradients at zero") {
    const auto cfg = gradcheck::small_config();
    auto net = FusionNetwork::init_params(cfg, 4);
    const auto b = gradcheck::make_batch(cfg, 3, 5);
    net.zero_grad();
    ForwardCache cache;
    net.forward(b.inputs, cache);
    std::vector<PerTrait<TraitGradient>> zero(3);
    net.backward(cache, zero);
    for (const auto& blk : std::as_const(net).blocks())
        for (double g : blk.grad) CHECK(g == 0.0);
}

TEST_CASE("linear layer gradient identities") {
    Linear l(3, 2);
    l.weight << 1, 2, 3, 4, 5, 6;
    l.bias << 0.5, -0.5;
    Eigen::MatrixXd x(3, 1);
    x << 1, -1, 2;
    Eigen::MatrixXd y = l.forward(x);
    CHECK(y(0, 0) == 1 - 2 + 6 + 0.5);
    Eigen::MatrixXd g(2, 1);
    g << 0.3, -2;
    l.weight_grad.setZero();
    l.bias_grad.setZero();
    Eigen::MatrixXd dx = l.backward(x, g);
    Eigen::MatrixXd expected_dw = g * x.transpose();
    CHECK((l.weight_grad - expected_dw).cwiseAbs().maxCoeff() == 0.0);
    CHECK(l.bias_grad(0) == 0.3);
    CHECK(l.bias_grad(1) == -2.0);
    Eigen::MatrixXd expected_dx = l.weight.transpose() * g;
    CHECK((dx - expected_dx).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("analytic gradients match central differences") {
    const auto r = gradcheck::run(gradcheck::small_config(), 4, 10, 1e-4, 17);
    INFO("worst coordinate " << r.worst_coordinate);
    CHECK(r.worst_relative_error < 1e-4);
    auto no_depth = gradcheck::small_config();
    no_depth.use_depth = false;
    no_depth.loss_family[1] = LossFamily::Gaussian;
    CHECK(gradcheck::run(no_depth, 3, 10, 1e-4, 23).worst_relative_error < 1e-4);
}

TEST_CASE("initialisation is seeded and bounded") {
    const auto cfg = gradcheck::small_config();
    const auto a = FusionNetwork::init_params(cfg, 9);
    const auto b = FusionNetwork::init_params(cfg, 9);
    const auto c = FusionNetwork::init_params(cfg, 10);
    const auto ba = a.blocks(), bb = b.blocks(), bc = c.blocks();
    bool differs = false;
    for (std::size_t k = 0; k < ba.size(); ++k) {
        CHECK(std::equal(ba[k].value.begin(), ba[k].value.end(), bb[k].value.begin()));
        differs = differs || !std::equal(ba[k].value.begin(), ba[k].value.end(), bc[k].value.begin());
    }
    CHECK(differs);

    ModelConfig big;
    big.use_depth = false;
    big.num_residual_blocks = 1;
    const auto net = FusionNetwork::init_params(big, 1);
    const double a_bound = std::sqrt(6.0 / 2304.0);
    CHECK(a_bound == doctest::Approx(0.05103).epsilon(1e-4));
    for (const auto& blk : net.blocks()) {
        if (blk.name != "residual.0.expand") continue;
        CHECK(blk.rows == 1536);
        CHECK(blk.cols == 768);
        double largest = 0.0;
        for (double v : blk.value) largest = std::max(largest, std::fabs(v));
        CHECK(largest <= a_bound);
        CHECK(largest > 0.99 * a_bound);
    }
}

TEST_CASE("head biases at zero give zero log-scale for zero input") {
    const auto cfg = gradcheck::small_config();
    auto net = FusionNetwork::init_params(cfg, 2);
    auto b = gradcheck::make_batch(cfg, 1, 3);
    for (auto* v : {&b.image[0], &b.depth[0], &b.geo[0]}) std::fill(v->begin(), v->end(), 0.0f);
    const auto preds = net.predict(b.inputs);
    for (const auto& t : preds[0]) CHECK(t.log_scale == 0.0);
}

TEST_CASE("f32 rounding and config json") {
    const auto cfg = gradcheck::small_config();
    const auto net = FusionNetwork::init_params(cfg, 5);
    const auto r = net.rounded_to_f32();
    for (const auto& blk : r.blocks())
        for (double v : blk.value) CHECK(static_cast<double>(static_cast<float>(v)) == v);
    nlohmann::json j = cfg;
    const auto back = j.get<ModelConfig>();
    CHECK(nlohmann::json(back) == j);
    ModelConfig bad = cfg;
    bad.image_tokens_pooled = 0;
    CHECK_THROWS(bad.validate());
}
