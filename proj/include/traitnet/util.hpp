#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace traitnet {

// Seeded generator used everywhere randomness appears. The engine is
// std::mt19937_64, whose output sequence is fixed by the standard; the
// uniform and normal transforms below are spelled out so that draws do not
// depend on the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller (one value per call, no caching).
    double normal();

    double normal(double mean, double std) { return mean + std * normal(); }

    // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
    std::size_t below(std::size_t n);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
};

std::uint64_t hash_string(std::string_view s);
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);

// Percentile of an ascending-sorted sample, linear interpolation between
// order statistics at position p * (n - 1). p in [0, 1].
double percentile_sorted(std::span<const double> sorted, double p);
double percentile(std::vector<double> values, double p);

// Shortest text that parses back to the identical double.
std::string format_double(double v);

// Strict parsers; std::nullopt-like failure is reported by returning false.
bool parse_double(std::string_view s, double& out);
bool parse_size(std::string_view s, std::size_t& out);

std::vector<std::string_view> split_csv_line(std::string_view line);
std::string_view trim(std::string_view s);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view contents);
std::vector<char> read_binary_file(const std::filesystem::path& path);
void write_binary_file(const std::filesystem::path& path, std::span<const char> bytes);

// Worker count from TRAITNET_THREADS (default 1, minimum 1).
std::size_t worker_threads();

}  // namespace traitnet
