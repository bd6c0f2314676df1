#include "oracles.hpp"
#include "traitnet/core.hpp"
#include "traitnet/util.hpp"

#include <doctest.h>

#include <algorithm>
#include <array>
#include <map>
#include <set>

#include <cstdlib>
#include <set>

using namespace traitnet;

TEST_CASE("rng is reproducible and below() stays in range") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
    Rng c(3);
    std::set<std::size_t> seen;
    for (int i = 0; i < 1000; ++i) {
        const auto v = c.below(7);
        CHECK(v < 7);
        seen.insert(v);
    }
    CHECK(seen.size() == 7);
    for (int i = 0; i < 1000; ++i) {
        const double u = c.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("rng normal draws have unit moments") {
    Rng r(11);
    double sum = 0.0, sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        sum += z;
        sq += z * z;
    }
    CHECK(std::fabs(sum / n) < 0.01);
    CHECK(std::fabs(sq / n - 1.0) < 0.02);
}

TEST_CASE("mix_seed separates its parts") {
    CHECK(mix_seed({1, 2}) != mix_seed({2, 1}));
    CHECK(mix_seed({1, 2}) == mix_seed({1, 2}));
    CHECK(hash_string("s00001") != hash_string("s00002"));
}

TEST_CASE("percentile matches the interpolation oracle") {
    Rng r(5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> v(1 + r.below(40));
        for (auto& x : v) x = r.normal();
        for (double p : {0.0, 0.05, 0.25, 0.5, 0.95, 0.99, 1.0}) {
            CHECK(percentile(v, p) == doctest::Approx(oracle::percentile(v, p)).epsilon(1e-14));
        }
    }
    CHECK(percentile({1.0, 2.0, 3.0, 4.0}, 0.5) == 2.5);
}

TEST_CASE("format_double round-trips") {
    Rng r(9);
    for (int i = 0; i < 1000; ++i) {
        const double v = r.normal() * std::pow(10.0, r.uniform(-20, 20));
        double back = 0.0;
        REQUIRE(parse_double(format_double(v), back));
        CHECK(back == v);
    }
}

TEST_CASE("parse_double and parse_size are strict") {
    double d = 0.0;
    std::size_t s = 0;
    CHECK(parse_double(" 1.5 ", d));
    CHECK(d == 1.5);
    CHECK_FALSE(parse_double("1.5x", d));
    CHECK_FALSE(parse_double("", d));
    CHECK(parse_size("12", s));
    CHECK(s == 12);
    CHECK_FALSE(parse_size("-1", s));
    CHECK_FALSE(parse_size("1.0", s));
}

TEST_CASE("split_csv_line keeps empty fields") {
    auto f = split_csv_line("a,,b,");
    REQUIRE(f.size() == 4);
    CHECK(f[0] == "a");
    CHECK(f[1].empty());
    CHECK(f[2] == "b");
    CHECK(f[3].empty());
}

TEST_CASE("file helpers report the missing path") {
    const auto dir = oracle::fresh_dir("util");
    write_text_file(dir / "nested" / "x.txt", "hello");
    CHECK(read_text_file(dir / "nested" / "x.txt") == "hello");
    try {
        read_text_file(dir / "absent.txt");
        FAIL("expected an error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("absent.txt") != std::string::npos);
    }
}

TEST_CASE("worker_threads reads TRAITNET_THREADS") {
    ::setenv("TRAITNET_THREADS", "3", 1);
    CHECK(worker_threads() == 3);
    ::setenv("TRAITNET_THREADS", "0", 1);
    CHECK(worker_threads() == 1);
    ::setenv("TRAITNET_THREADS", "many", 1);
    CHECK(worker_threads() == 1);
    ::unsetenv("TRAITNET_THREADS");
    CHECK(worker_threads() == 1);
}
