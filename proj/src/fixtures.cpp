#include "traitnet/fixtures.hpp"

#include "traitnet/geo_eval.hpp"
#include "traitnet/util.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace traitnet {

namespace {

constexpr PerTrait<double> kBaseMean{8.0, 1500.0, 15.0, 20.0};
constexpr double kLinearSlope = 0.2;
constexpr double kLaSlope = 0.25;

const std::vector<std::string> kFormSpellings[kNumGrowthForms] = {
    {"tree", "woody tree"}, {"shrub", "subshrub"}, {"grass", "graminoid", "herb"}};

Eigen::VectorXd uniform_latent(Rng& rng, std::size_t dim) {
    Eigen::VectorXd z(static_cast<Eigen::Index>(dim));
    const double a = std::sqrt(3.0);
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.uniform(-a, a);
    return z;
}

// Unit vector supported on the first `support` coordinates.
Eigen::VectorXd unit_direction(Rng& rng, std::size_t dim, std::size_t support) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < support; ++i) v[static_cast<Eigen::Index>(i)] = rng.normal();
    return v / v.norm();
}

Eigen::MatrixXd gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double std) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng.normal(0.0, std);
    }
    return m;
}

std::string twin_of(std::size_t k) { return fmt::format("sp{:03d}", k ^ 1u); }

}  // namespace

void FixtureSpec::validate() const {
    if (num_species < 2 || num_species % 2 != 0) throw ValidationError("fixture spec: num_species must be even and >= 2");
    if (latent_dim < 2) throw ValidationError("fixture spec: latent_dim must be >= 2");
    if (samples < 2 * kNumGrowthForms) throw ValidationError("fixture spec: too few samples");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ValidationError("fixture spec: train_fraction must be in (0, 1)");
    if (observations_per_species < kMinTraitObservations) {
        throw ValidationError("fixture spec: observations_per_species must be >= 3");
    }
    if (image_tokens == 0 || image_dim == 0 || depth_tokens == 0 || depth_dim == 0 || geo_dim == 0) {
        throw ValidationError("fixture spec: embedding shapes must be positive");
    }
    if (!(rel_std_min > 0.0 && rel_std_max >= rel_std_min)) throw ValidationError("fixture spec: bad rel_std range");
    for (double f : {feature_corruption_fraction, label_corruption_fraction}) {
        if (!(f >= 0.0 && f < 1.0)) throw ValidationError("fixture spec: corruption fractions must be in [0, 1)");
    }
    if (!(label_confusion_share > 0.0 && label_confusion_share <= 1.0)) {
        throw ValidationError("fixture spec: label_confusion_share must be in (0, 1]");
    }
    if (feature_corruption_fraction + label_corruption_fraction >= 1.0) {
        throw ValidationError("fixture spec: corruption fractions must sum below 1");
    }
    if (grid_rows == 0 || grid_cols == 0 || lat_origin < -90.0 || lat_origin + static_cast<double>(grid_rows) > 90.0 ||
        lon_origin < -180.0 || lon_origin + static_cast<double>(grid_cols) > 180.0) {
        throw ValidationError("fixture spec: grid box outside the globe");
    }
}

void to_json(nlohmann::json& j, const FixtureSpec& s) {
    j = nlohmann::json{{"seed", s.seed},
                       {"num_species", s.num_species},
                       {"samples", s.samples},
                       {"train_fraction", s.train_fraction},
                       {"reference_samples", s.reference_samples},
                       {"inference_samples", s.inference_samples},
                       {"observations_per_species", s.observations_per_species},
                       {"latent_dim", s.latent_dim},
                       {"image_tokens", s.image_tokens},
                       {"image_dim", s.image_dim},
                       {"depth_tokens", s.depth_tokens},
                       {"depth_dim", s.depth_dim},
                       {"geo_dim", s.geo_dim},
                       {"token_noise", s.token_noise},
                       {"rel_std_min", s.rel_std_min},
                       {"rel_std_max", s.rel_std_max},
                       {"feature_corruption_fraction", s.feature_corruption_fraction},
                       {"feature_corruption_std", s.feature_corruption_std},
                       {"label_corruption_fraction", s.label_corruption_fraction},
                       {"label_corruption_token_noise", s.label_corruption_token_noise},
                       {"label_confusion_share", s.label_confusion_share},
                       {"lat_origin", s.lat_origin},
                       {"lon_origin", s.lon_origin},
                       {"grid_rows", s.grid_rows},
                       {"grid_cols", s.grid_cols},
                       {"cwm_noise", s.cwm_noise}};
}

void from_json(const nlohmann::json& j, FixtureSpec& s) {
    nlohmann::json defaults = s;
    for (const auto& [key, value] : j.items()) {
        if (!defaults.contains(key)) throw ValidationError(fmt::format("fixture spec: unknown key '{}'", key));
        defaults[key] = value;
    }
    s.seed = defaults.at("seed").get<std::uint64_t>();
    s.num_species = defaults.at("num_species").get<std::size_t>();
    s.samples = defaults.at("samples").get<std::size_t>();
    s.train_fraction = defaults.at("train_fraction").get<double>();
    s.reference_samples = defaults.at("reference_samples").get<std::size_t>();
    s.inference_samples = defaults.at("inference_samples").get<std::size_t>();
    s.observations_per_species = defaults.at("observations_per_species").get<std::size_t>();
    s.latent_dim = defaults.at("latent_dim").get<std::size_t>();
    s.image_tokens = defaults.at("image_tokens").get<std::size_t>();
    s.image_dim = defaults.at("image_dim").get<std::size_t>();
    s.depth_tokens = defaults.at("depth_tokens").get<std::size_t>();
    s.depth_dim = defaults.at("depth_dim").get<std::size_t>();
    s.geo_dim = defaults.at("geo_dim").get<std::size_t>();
    s.token_noise = defaults.at("token_noise").get<double>();
    s.rel_std_min = defaults.at("rel_std_min").get<double>();
    s.rel_std_max = defaults.at("rel_std_max").get<double>();
    s.feature_corruption_fraction = defaults.at("feature_corruption_fraction").get<double>();
    s.feature_corruption_std = defaults.at("feature_corruption_std").get<double>();
    s.label_corruption_fraction = defaults.at("label_corruption_fraction").get<double>();
    s.label_corruption_token_noise = defaults.at("label_corruption_token_noise").get<double>();
    s.label_confusion_share = defaults.at("label_confusion_share").get<double>();
    s.lat_origin = defaults.at("lat_origin").get<double>();
    s.lon_origin = defaults.at("lon_origin").get<double>();
    s.grid_rows = defaults.at("grid_rows").get<std::size_t>();
    s.grid_cols = defaults.at("grid_cols").get<std::size_t>();
    s.cwm_noise = defaults.at("cwm_noise").get<double>();
}

void to_json(nlohmann::json& j, const FixtureTruth& t) {
    nlohmann::json species = nlohmann::json::object();
    for (const auto& [id, s] : t.species) {
        nlohmann::json mean, std;
        for (auto tr : kAllTraits) {
            mean[std::string(trait_name(tr))] = s.mean[index(tr)];
            std[std::string(trait_name(tr))] = s.std[index(tr)];
        }
        species[id] = {{"growth_form", growth_form_name(s.growth_form)}, {"mean", mean}, {"std", std}};
    }
    j = nlohmann::json{{"species", species},
                       {"true_species", t.true_species},
                       {"feature_corrupted", t.feature_corrupted},
                       {"label_corrupted", t.label_corrupted}};
}

FixtureTruth fixture_truth_from_json(const nlohmann::json& j) {
    FixtureTruth t;
    for (const auto& [id, s] : j.at("species").items()) {
        SpeciesTruth st;
        st.growth_form = parse_growth_form(s.at("growth_form").get<std::string>()).value();
        for (auto tr : kAllTraits) {
            st.mean[index(tr)] = s.at("mean").at(std::string(trait_name(tr))).get<double>();
            st.std[index(tr)] = s.at("std").at(std::string(trait_name(tr))).get<double>();
        }
        t.species.emplace(id, st);
    }
    t.true_species = j.at("true_species").get<std::map<std::string, std::string>>();
    t.feature_corrupted = j.at("feature_corrupted").get<std::vector<std::string>>();
    t.label_corrupted = j.at("label_corrupted").get<std::vector<std::string>>();
    return t;
}

Fixture make_fixture(const FixtureSpec& spec) {
    spec.validate();
    Rng rng(mix_seed({spec.seed, 0x66697874}));
    const std::size_t L = spec.latent_dim;

    // Latent codes and the generator's trait functions.
    std::vector<Eigen::VectorXd> latent(spec.num_species);
    for (std::size_t k = 0; k < spec.num_species; k += 2) {
        latent[k] = uniform_latent(rng, L);
        latent[k + 1] = latent[k];
        latent[k + 1][static_cast<Eigen::Index>(L - 1)] *= -1.0;
    }
    PerTrait<Eigen::VectorXd> mean_dir, noise_dir;
    for (auto t : kAllTraits) {
        mean_dir[index(t)] = unit_direction(rng, L, L - 1);
        noise_dir[index(t)] = unit_direction(rng, L, L - 1);
    }

    Fixture fx;
    fx.spec = spec;
    std::vector<std::string> species_ids(spec.num_species);
    for (std::size_t k = 0; k < spec.num_species; ++k) {
        species_ids[k] = fmt::format("sp{:03d}", k);
        SpeciesTruth st;
        st.growth_form = static_cast<GrowthForm>((k / 2) % kNumGrowthForms);
        const auto& z = latent[k];
        for (auto t : kAllTraits) {
            const auto ti = index(t);
            double m = 0.0;
            if (t == TraitId::LA) {
                m = kBaseMean[ti] * (1.0 + kLaSlope * z[static_cast<Eigen::Index>(L - 1)]);
            } else {
                m = kBaseMean[ti] * (1.0 + kLinearSlope * std::clamp(mean_dir[ti].dot(z), -3.0, 3.0));
            }
            const double g = 1.0 / (1.0 + std::exp(-2.0 * noise_dir[ti].dot(z)));
            const double rel = spec.rel_std_min * std::pow(spec.rel_std_max / spec.rel_std_min, g);
            st.mean[ti] = m;
            st.std[ti] = rel * m;
        }
        fx.truth.species.emplace(species_ids[k], st);
    }

    // Citizen-science observations and growth-form claims.
    for (std::size_t k = 0; k < spec.num_species; ++k) {
        const auto& st = fx.truth.species.at(species_ids[k]);
        for (auto t : kAllTraits) {
            for (std::size_t o = 0; o < spec.observations_per_species; ++o) {
                const double v = std::max(rng.normal(st.mean[index(t)], st.std[index(t)]), 1e-3 * st.mean[index(t)]);
                fx.observations.push_back({species_ids[k], t, v});
            }
        }
        const auto& spell = kFormSpellings[index(st.growth_form)];
        fx.claims.push_back({species_ids[k], spell[0]});
        fx.claims.push_back({species_ids[k], spell[rng.below(spell.size())]});
        const auto& other = kFormSpellings[rng.below(kNumGrowthForms)];
        fx.claims.push_back({species_ids[k], other[rng.below(other.size())]});
    }

    // Embedding generators.
    std::vector<Eigen::MatrixXd> image_maps, depth_maps;
    const double map_std = 1.0 / std::sqrt(static_cast<double>(L));
    for (std::size_t i = 0; i < spec.image_tokens; ++i) image_maps.push_back(gaussian_matrix(rng, spec.image_dim, L, map_std));
    for (std::size_t i = 0; i < spec.depth_tokens; ++i) depth_maps.push_back(gaussian_matrix(rng, spec.depth_dim, L, map_std));
    const Eigen::MatrixXd geo_map = gaussian_matrix(rng, spec.geo_dim, 4, 0.5);
    std::vector<std::size_t> home(spec.num_species / 2);
    for (auto& h : home) h = rng.below(spec.grid_rows * spec.grid_cols);

    std::vector<float> image_values, depth_values, geo_values;
    std::vector<std::string> ids;
    auto emit = [&](const std::string& id, std::size_t species, Split split) {
        SampleRecord rec;
        rec.sample_id = id;
        rec.species_id = species_ids[species];
        rec.growth_form = fx.truth.species.at(rec.species_id).growth_form;
        rec.split = split;
        const std::size_t cell =
            rng.uniform() < 0.75 ? home[species / 2] : rng.below(spec.grid_rows * spec.grid_cols);
        rec.lat = spec.lat_origin + static_cast<double>(cell / spec.grid_cols) + rng.uniform();
        rec.lon = spec.lon_origin + static_cast<double>(cell % spec.grid_cols) + rng.uniform();
        const auto& z = latent[species];
        for (const auto& A : image_maps) {
            const Eigen::VectorXd tok = A * z;
            for (Eigen::Index c = 0; c < tok.size(); ++c) {
                image_values.push_back(static_cast<float>(tok[c] + rng.normal(0.0, spec.token_noise)));
            }
        }
        for (const auto& B : depth_maps) {
            const Eigen::VectorXd tok = B * z;
            for (Eigen::Index c = 0; c < tok.size(); ++c) {
                depth_values.push_back(static_cast<float>(tok[c] + rng.normal(0.0, spec.token_noise)));
            }
        }
        const double la = rec.lat * std::numbers::pi / 180.0;
        const double lo = rec.lon * std::numbers::pi / 180.0;
        const Eigen::Vector4d loc(std::sin(la), std::cos(la), std::sin(lo), std::cos(lo));
        const Eigen::VectorXd g = geo_map * loc;
        for (Eigen::Index c = 0; c < g.size(); ++c) geo_values.push_back(static_cast<float>(g[c]));
        ids.push_back(id);
        fx.truth.true_species[id] = rec.species_id;
        fx.records.push_back(std::move(rec));
    };

    for (std::size_t i = 0; i < spec.samples; ++i) emit(fmt::format("s{:05d}", i), i % spec.num_species, Split::Train);
    const std::size_t first_reference = fx.records.size();
    for (std::size_t i = 0; i < spec.reference_samples; ++i) {
        emit(fmt::format("r{:05d}", i), rng.below(spec.num_species), Split::Reference);
    }
    const std::size_t first_inference = fx.records.size();
    for (std::size_t i = 0; i < spec.inference_samples; ++i) {
        emit(fmt::format("q{:05d}", i), rng.below(spec.num_species), Split::Inference);
    }
    for (std::size_t i = first_reference; i < first_inference; ++i) {
        auto& rec = fx.records[i];
        const auto& st = fx.truth.species.at(rec.species_id);
        for (auto t : kAllTraits) {
            rec.observed[index(t)] =
                std::max(rng.normal(st.mean[index(t)], st.std[index(t)]), 1e-3 * st.mean[index(t)]);
        }
    }

    // Train / Val partition, stratified by growth form.
    const auto split = stratified_split(std::span(fx.records.data(), spec.samples), spec.train_fraction,
                                        mix_seed({spec.seed, 0x73706c74}));
    const std::set<std::string> val_ids(split.val.begin(), split.val.end());
    std::vector<std::size_t> train_rows;
    for (std::size_t i = 0; i < spec.samples; ++i) {
        if (val_ids.contains(fx.records[i].sample_id)) fx.records[i].split = Split::Val;
        else train_rows.push_back(i);
    }

    // Corruption of Train samples.
    auto n_of = [&](double f) {
        return static_cast<std::size_t>(std::llround(f * static_cast<double>(train_rows.size())));
    };
    const std::size_t n_feature = n_of(spec.feature_corruption_fraction);
    const std::size_t n_label = n_of(spec.label_corruption_fraction);
    rng.shuffle(train_rows);
    const std::size_t image_stride = spec.image_tokens * spec.image_dim;
    const std::size_t depth_stride = spec.depth_tokens * spec.depth_dim;
    auto add_noise = [&](std::size_t row, double std, bool replace) {
        for (std::size_t c = 0; c < image_stride; ++c) {
            auto& v = image_values[row * image_stride + c];
            v = static_cast<float>(replace ? rng.normal(0.0, std) : v + rng.normal(0.0, std));
        }
        for (std::size_t c = 0; c < depth_stride; ++c) {
            auto& v = depth_values[row * depth_stride + c];
            v = static_cast<float>(replace ? rng.normal(0.0, std) : v + rng.normal(0.0, std));
        }
    };
    for (std::size_t k = 0; k < n_feature; ++k) {
        add_noise(train_rows[k], spec.feature_corruption_std, true);
        fx.truth.feature_corrupted.push_back(fx.records[train_rows[k]].sample_id);
    }
    // Misidentifications concentrate on confusable twin pairs: pairs are
    // visited in random order and a share of each twin's photos is
    // relabelled with the other twin until the quota is met.
    std::vector<std::vector<std::size_t>> by_species(spec.num_species);
    for (std::size_t k = n_feature; k < train_rows.size(); ++k) {
        const auto row = train_rows[k];
        by_species[static_cast<std::size_t>(std::stoul(fx.records[row].species_id.substr(2)))].push_back(row);
    }
    std::vector<std::size_t> pairs(spec.num_species / 2);
    for (std::size_t j = 0; j < pairs.size(); ++j) pairs[j] = j;
    rng.shuffle(pairs);
    std::size_t remaining = n_label;
    for (std::size_t j = 0; j < pairs.size() && remaining > 0; ++j) {
        for (std::size_t species : {2 * pairs[j], 2 * pairs[j] + 1}) {
            const auto& rows = by_species[species];
            auto take = static_cast<std::size_t>(
                std::ceil(spec.label_confusion_share * static_cast<double>(rows.size())));
            take = std::min({take, rows.size(), remaining});
            for (std::size_t k = 0; k < take; ++k) {
                auto& rec = fx.records[rows[k]];
                if (spec.label_corruption_token_noise > 0.0) add_noise(rows[k], spec.label_corruption_token_noise, false);
                rec.species_id = twin_of(species);
                fx.truth.label_corrupted.push_back(rec.sample_id);
            }
            remaining -= take;
        }
    }
    if (remaining > 0) throw ValidationError("fixture spec: label corruption quota exceeds the confusable samples");
    std::sort(fx.truth.feature_corrupted.begin(), fx.truth.feature_corrupted.end());
    std::sort(fx.truth.label_corrupted.begin(), fx.truth.label_corrupted.end());

    fx.stores.emplace(Modality::ImageTokens, EmbeddingStore(Modality::ImageTokens, spec.image_tokens, spec.image_dim,
                                                            ids, std::move(image_values)));
    fx.stores.emplace(Modality::DepthTokens, EmbeddingStore(Modality::DepthTokens, spec.depth_tokens, spec.depth_dim,
                                                            ids, std::move(depth_values)));
    fx.stores.emplace(Modality::GeoVector,
                      EmbeddingStore(Modality::GeoVector, 1, spec.geo_dim, ids, std::move(geo_values)));

    // Observed community means over the inference samples of each cell.
    std::map<GridCellId, std::vector<std::size_t>> cells;
    for (std::size_t i = first_inference; i < fx.records.size(); ++i) {
        cells[to_grid_cell(fx.records[i].lat, fx.records[i].lon)].push_back(i);
    }
    TraitMap cwm;
    for (const auto& [cell, members] : cells) {
        CellValues cv;
        cv.count = members.size();
        for (auto t : kAllTraits) {
            double sum = 0.0;
            for (auto i : members) sum += fx.truth.species.at(fx.records[i].species_id).mean[index(t)];
            cv.value[index(t)] = sum / static_cast<double>(members.size()) * (1.0 + rng.normal(0.0, spec.cwm_noise));
        }
        cwm.emplace(cell, cv);
    }
    fx.observed_cwm_csv = format_trait_map(cwm);
    return fx;
}

std::filesystem::path metadata_file(const std::filesystem::path& dir) { return dir / "metadata.csv"; }

std::filesystem::path embedding_file(const std::filesystem::path& dir, Modality m) {
    switch (m) {
        case Modality::ImageTokens: return dir / "image_tokens.bin";
        case Modality::DepthTokens: return dir / "depth_tokens.bin";
        case Modality::GeoVector: return dir / "geo_vector.bin";
    }
    return dir / "unknown.bin";
}

void write_fixture(const Fixture& fx, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_metadata(metadata_file(dir), fx.records);
    for (const auto& [m, store] : fx.stores) {
        const auto bin = embedding_file(dir, m);
        save_embeddings(store, bin, sidecar_path_for(bin));
    }
    std::string obs("species_id,trait,value\n");
    for (const auto& o : fx.observations) {
        obs += fmt::format("{},{},{}\n", o.species_id, trait_name(o.trait), format_double(o.value));
    }
    write_text_file(dir / "observations.csv", obs);
    std::string claims("species_id,growth_form\n");
    for (const auto& c : fx.claims) claims += fmt::format("{},{}\n", c.species_id, c.raw_form);
    write_text_file(dir / "growth_form_claims.csv", claims);
    write_text_file(dir / "observed_cwm.csv", fx.observed_cwm_csv);
    nlohmann::json truth = fx.truth;
    truth["spec"] = fx.spec;
    write_text_file(dir / "truth.json", truth.dump(1) + "\n");
}

}  // namespace traitnet
