#include "traitnet/checkpoint.hpp"

#include "traitnet/util.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace traitnet {

namespace {

constexpr std::string_view kCheckpointFormat = "traitnet-checkpoint";
constexpr int kCheckpointVersion = 1;

std::filesystem::path blob_path_for(const std::filesystem::path& manifest) {
    auto p = manifest;
    p.replace_extension(".bin");
    return p;
}

}  // namespace

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t epoch) {
    return dir / fmt::format("epoch_{:03d}.json", epoch);
}

void save_checkpoint(const std::filesystem::path& manifest_path, const FusionNetwork& net,
                     const MinMaxScaler& scaler, std::size_t epoch, std::uint64_t seed) {
    const auto blocks = net.blocks();
    std::vector<char> blob;
    nlohmann::json block_list = nlohmann::json::array();
    for (const auto& b : blocks) {
        const std::size_t offset = blob.size();
        blob.resize(offset + b.value.size() * sizeof(float));
        for (std::size_t k = 0; k < b.value.size(); ++k) {
            const float f = static_cast<float>(b.value[k]);
            std::uint32_t bits = 0;
            std::memcpy(&bits, &f, sizeof(bits));
            if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
            std::memcpy(blob.data() + offset + k * sizeof(float), &bits, sizeof(bits));
        }
        block_list.push_back({{"name", b.name}, {"shape", {b.rows, b.cols}}, {"offset", offset},
                              {"bytes", b.value.size() * sizeof(float)}});
    }
    const auto blob_path = blob_path_for(manifest_path);
    nlohmann::json manifest = {
        {"format", kCheckpointFormat},
        {"version", kCheckpointVersion},
        {"config", net.config()},
        {"epoch", epoch},
        {"seed", seed},
        {"scaler", scaler},
        {"dtype", "f32le"},
        {"blob", blob_path.filename().string()},
        {"blob_bytes", blob.size()},
        {"blocks", block_list},
    };
    write_binary_file(blob_path, blob);
    write_text_file(manifest_path, manifest.dump(1) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& manifest_path) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_text_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(fmt::format("{}: {}", manifest_path.string(), e.what()));
    }
    try {
        if (manifest.at("format").get<std::string>() != kCheckpointFormat) {
            throw ValidationError(fmt::format("{}: not a checkpoint manifest", manifest_path.string()));
        }
        const auto cfg = manifest.at("config").get<ModelConfig>();
        Checkpoint ck{FusionNetwork(cfg), manifest.at("scaler").get<MinMaxScaler>(),
                      manifest.at("epoch").get<std::size_t>(), manifest.at("seed").get<std::uint64_t>()};
        const auto blob_path = manifest_path.parent_path() / manifest.at("blob").get<std::string>();
        const auto blob = read_binary_file(blob_path);
        if (blob.size() != manifest.at("blob_bytes").get<std::size_t>()) {
            throw ValidationError(fmt::format("{}: blob has {} bytes, manifest declares {}", blob_path.string(),
                                              blob.size(), manifest.at("blob_bytes").get<std::size_t>()));
        }
        auto blocks = ck.network.blocks();
        const auto& declared = manifest.at("blocks");
        if (declared.size() != blocks.size()) {
            throw ValidationError(fmt::format("{}: {} parameter blocks, config implies {}", manifest_path.string(),
                                              declared.size(), blocks.size()));
        }
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const auto& d = declared[i];
            auto& b = blocks[i];
            const auto shape = d.at("shape").get<std::vector<std::size_t>>();
            if (d.at("name").get<std::string>() != b.name || shape.size() != 2 || shape[0] != b.rows ||
                shape[1] != b.cols) {
                throw ValidationError(fmt::format("{}: block {} does not match config ({})", manifest_path.string(),
                                                  i, b.name));
            }
            const auto offset = d.at("offset").get<std::size_t>();
            if (offset + b.value.size() * sizeof(float) > blob.size()) {
                throw ValidationError(fmt::format("{}: block {} overruns the blob", manifest_path.string(), b.name));
            }
            for (std::size_t k = 0; k < b.value.size(); ++k) {
                std::uint32_t bits = 0;
                std::memcpy(&bits, blob.data() + offset + k * sizeof(float), sizeof(bits));
                if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
                float f = 0.0f;
                std::memcpy(&f, &bits, sizeof(f));
                if (!std::isfinite(f)) {
                    throw ValidationError(fmt::format("{}: non-finite parameter in {}", manifest_path.string(), b.name));
                }
                b.value[k] = f;
            }
        }
        return ck;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(fmt::format("{}: {}", manifest_path.string(), e.what()));
    }
}

std::vector<PredictionRow> make_prediction_rows(const Dataset& dataset, std::span<const std::size_t> samples,
                                                std::span<const Prediction> predictions,
                                                const MinMaxScaler& scaler) {
    if (samples.size() != predictions.size()) throw std::invalid_argument("make_prediction_rows: length mismatch");
    std::vector<PredictionRow> rows(samples.size());
    for (std::size_t k = 0; k < samples.size(); ++k) {
        const auto& rec = dataset.record(samples[k]);
        rows[k].sample_id = rec.sample_id;
        rows[k].lat = rec.lat;
        rows[k].lon = rec.lon;
        for (auto t : kAllTraits) {
            rows[k].mu[index(t)] = scaler.inverse(t, predictions[k][index(t)].mu);
            rows[k].log_scale[index(t)] = predictions[k][index(t)].log_scale;
        }
    }
    return rows;
}

std::string format_predictions(std::span<const PredictionRow> rows) {
    std::string out(kPredictionsHeader);
    out += '\n';
    for (const auto& r : rows) {
        out += fmt::format("{},{},{}", r.sample_id, format_double(r.lat), format_double(r.lon));
        for (auto t : kAllTraits) {
            out += fmt::format(",{},{}", format_double(r.mu[index(t)]), format_double(r.log_scale[index(t)]));
        }
        out += '\n';
    }
    return out;
}

std::vector<PredictionRow> parse_predictions(std::string_view text) {
    std::vector<PredictionRow> rows;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        const auto line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (trim(line).empty()) continue;
        if (!header_seen) {
            if (trim(line) != kPredictionsHeader) {
                throw ValidationError(fmt::format("predictions line {}: expected header '{}'", line_no,
                                                  kPredictionsHeader));
            }
            header_seen = true;
            continue;
        }
        const auto fields = split_csv_line(line);
        if (fields.size() != 11) {
            throw ValidationError(
                fmt::format("predictions line {}: expected 11 columns, found {}", line_no, fields.size()));
        }
        PredictionRow r;
        r.sample_id = std::string(trim(fields[0]));
        auto num = [&](std::size_t col, double& out) {
            if (!parse_double(fields[col], out) || !std::isfinite(out)) {
                throw ValidationError(fmt::format("predictions line {}, column {}: not a number: '{}'", line_no,
                                                  col + 1, fields[col]));
            }
        };
        num(1, r.lat);
        num(2, r.lon);
        for (std::size_t t = 0; t < kNumTraits; ++t) {
            num(3 + 2 * t, r.mu[t]);
            num(4 + 2 * t, r.log_scale[t]);
        }
        rows.push_back(std::move(r));
    }
    if (!header_seen) throw ValidationError("predictions: missing header");
    return rows;
}

std::vector<PredictionRow> load_predictions(const std::filesystem::path& path) {
    try {
        return parse_predictions(read_text_file(path));
    } catch (const ValidationError& e) {
        throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

}  // namespace traitnet
