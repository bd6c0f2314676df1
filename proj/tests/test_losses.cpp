#include "oracles.hpp"
#include "traitnet/losses.hpp"
#include "traitnet/util.hpp"

#include <doctest.h>

#include <algorithm>
#include <array>
#include <map>
#include <set>

#include <numbers>

using namespace traitnet;

TEST_CASE("gaussian nll examples") {
    auto a = gaussian_nll(1, 1, 0);
    CHECK(a.loss == 0.0);
    CHECK(a.d_mu == 0.0);
    CHECK(a.d_log_scale == 0.5);
    auto b = gaussian_nll(2, 1, 0);
    CHECK(b.loss == 0.5);
    CHECK(b.d_mu == -1.0);
    CHECK(b.d_log_scale == 0.0);
    CHECK(gaussian_nll(0, 0, 2).loss == 1.0);
}

TEST_CASE("laplace nll examples") {
    auto a = laplace_nll(1, 1, 0);
    CHECK(a.loss == 0.0);
    CHECK(a.d_mu == 0.0);
    CHECK(a.d_log_scale == 1.0);
    CHECK(laplace_nll(3, 1, 0).loss == 2.0);
    CHECK(laplace_nll(1, 0, std::numbers::ln2).loss == doctest::Approx(1.193147).epsilon(1e-7));
}

TEST_CASE("closed forms and derivatives on random triples") {
    Rng r(21);
    for (int i = 0; i < 1000; ++i) {
        const double y = r.normal(), mu = r.normal(), s = r.uniform(-3, 3);
        const auto g = gaussian_nll(y, mu, s);
        const auto l = laplace_nll(y, mu, s);
        CHECK(std::fabs(g.loss - oracle::gaussian_nll(y, mu, s)) < 1e-12);
        CHECK(std::fabs(l.loss - oracle::laplace_nll(y, mu, s)) < 1e-12);
        const double h = 1e-6;
        const double gmu = (oracle::gaussian_nll(y, mu + h, s) - oracle::gaussian_nll(y, mu - h, s)) / (2 * h);
        const double gs = (oracle::gaussian_nll(y, mu, s + h) - oracle::gaussian_nll(y, mu, s - h)) / (2 * h);
        const double lmu = (oracle::laplace_nll(y, mu + h, s) - oracle::laplace_nll(y, mu - h, s)) / (2 * h);
        const double ls = (oracle::laplace_nll(y, mu, s + h) - oracle::laplace_nll(y, mu, s - h)) / (2 * h);
        CHECK(g.d_mu == doctest::Approx(gmu).epsilon(1e-5));
        CHECK(g.d_log_scale == doctest::Approx(gs).epsilon(1e-5));
        CHECK(l.d_mu == doctest::Approx(lmu).epsilon(1e-5));
        CHECK(l.d_log_scale == doctest::Approx(ls).epsilon(1e-5));
    }
}

TEST_CASE("multi-task loss on one sample") {
    std::vector<Prediction> p(1);
    std::vector<PerTrait<double>> y{{0, 0, 0, 0}};
    std::vector<PerTrait<bool>> m{{true, true, true, true}};
    ModelConfig cfg;
    // Zero residuals and s = 0 leave nothing in either closed form.
    const auto out = multi_task_loss(p, y, m, cfg.loss_family);
    CHECK(out.breakdown.total == 0.0);
    // With s = 1 the Gaussian traits add s/2 each and the Laplace trait adds s.
    for (auto& t : p[0]) t.log_scale = 1.0;
    const auto one = multi_task_loss(p, y, m, cfg.loss_family);
    CHECK(one.breakdown.total == 3 * 0.5 + 1.0);
    CHECK(one.breakdown.per_trait[index(TraitId::LA)] == 1.0);
}

TEST_CASE("fully masked batch contributes nothing") {
    std::vector<Prediction> p(3);
    p[1][0].mu = 4.0;
    std::vector<PerTrait<double>> y(3, PerTrait<double>{1, 2, 3, 4});
    std::vector<PerTrait<bool>> m(3, PerTrait<bool>{false, false, false, false});
    const auto out = multi_task_loss(p, y, m, ModelConfig{}.loss_family);
    CHECK(out.breakdown.total == 0.0);
    for (const auto& g : out.gradients)
        for (const auto& t : g) {
            CHECK(t.d_mu == 0.0);
            CHECK(t.d_log_scale == 0.0);
        }
}

TEST_CASE("per-trait means use their own counts") {
    std::vector<Prediction> p(2);
    std::vector<PerTrait<double>> y{{1, 0, 0, 0}, {3, 0, 0, 0}};
    std::vector<PerTrait<bool>> m{{true, false, false, false}, {false, false, false, false}};
    const PerTrait<LossFamily> gauss{LossFamily::Gaussian, LossFamily::Gaussian, LossFamily::Gaussian,
                                     LossFamily::Gaussian};
    const auto out = multi_task_loss(p, y, m, gauss);
    CHECK(out.breakdown.counts[0] == 1);
    CHECK(out.breakdown.per_trait[0] == 0.5);
    CHECK(out.gradients[0][0].d_mu == -1.0);
    CHECK(out.gradients[1][0].d_mu == 0.0);
}

TEST_CASE("all-Gaussian differs from the default only on LA") {
    Rng r(1);
    std::vector<Prediction> p(5);
    std::vector<PerTrait<double>> y(5);
    std::vector<PerTrait<bool>> m(5, PerTrait<bool>{true, true, true, true});
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t t = 0; t < 4; ++t) {
            p[i][t] = {r.normal(), r.normal() * 0.3};
            y[i][t] = r.normal();
        }
    const PerTrait<LossFamily> gauss{LossFamily::Gaussian, LossFamily::Gaussian, LossFamily::Gaussian,
                                     LossFamily::Gaussian};
    const auto a = multi_task_loss(p, y, m, ModelConfig{}.loss_family);
    const auto b = multi_task_loss(p, y, m, gauss);
    for (auto t : kAllTraits) {
        if (t == TraitId::LA) CHECK(a.breakdown.per_trait[index(t)] != b.breakdown.per_trait[index(t)]);
        else CHECK(a.breakdown.per_trait[index(t)] == b.breakdown.per_trait[index(t)]);
    }
}
