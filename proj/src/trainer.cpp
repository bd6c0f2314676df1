#include "traitnet/trainer.hpp"

#include "traitnet/util.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <limits>
#include <thread>
#include <unordered_map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace traitnet {

void TrainConfig::validate() const {
    if (epochs == 0) throw ValidationError("train config: epochs must be >= 1");
    if (batch_size < kNumGrowthForms) throw ValidationError("train config: batch_size must be >= 3");
    if (!(lr_min <= lr_init)) throw ValidationError("train config: lr_min must not exceed lr_init");
    if (lr_min < 0.0) throw ValidationError("train config: lr_min must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
        throw ValidationError("train config: betas must lie in [0, 1)");
    }
    if (!(clip_max_norm > 0.0)) throw ValidationError("train config: clip_max_norm must be > 0");
    if (eval_every == 0) throw ValidationError("train config: eval_every must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"lr_init", c.lr_init},
                       {"lr_min", c.lr_min},
                       {"betas", {c.beta1, c.beta2}},
                       {"eps", c.eps},
                       {"weight_decay", c.weight_decay},
                       {"clip_max_norm", c.clip_max_norm},
                       {"seed", c.seed},
                       {"eval_every", c.eval_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("lr_init", c.lr_init);
    get("lr_min", c.lr_min);
    if (j.contains("betas")) {
        const auto& b = j.at("betas");
        c.beta1 = b.at(0).get<double>();
        c.beta2 = b.at(1).get<double>();
    }
    get("eps", c.eps);
    get("weight_decay", c.weight_decay);
    get("clip_max_norm", c.clip_max_norm);
    get("seed", c.seed);
    get("eval_every", c.eval_every);
}

MinMaxScaler::MinMaxScaler(PerTrait<double> min, PerTrait<double> max) : min_(min), max_(max) {
    for (auto t : kAllTraits) {
        if (!(max_[index(t)] > min_[index(t)])) {
            throw ValidationError(fmt::format("min-max scaler: {} has max {} <= min {}", trait_name(t),
                                              max_[index(t)], min_[index(t)]));
        }
    }
}

MinMaxScaler MinMaxScaler::fit(std::span<const PerTrait<double>> values, std::span<const PerTrait<bool>> mask) {
    PerTrait<double> lo, hi;
    lo.fill(std::numeric_limits<double>::infinity());
    hi.fill(-std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < values.size(); ++i) {
        for (auto t : kAllTraits) {
            if (!mask.empty() && !mask[i][index(t)]) continue;
            lo[index(t)] = std::min(lo[index(t)], values[i][index(t)]);
            hi[index(t)] = std::max(hi[index(t)], values[i][index(t)]);
        }
    }
    for (auto t : kAllTraits) {
        if (!(hi[index(t)] > lo[index(t)])) {
            throw ValidationError(fmt::format(
                "min-max scaler: trait {} needs at least two distinct training values", trait_name(t)));
        }
    }
    return {lo, hi};
}

double MinMaxScaler::transform(TraitId t, double v) const {
    return (v - min_[index(t)]) / (max_[index(t)] - min_[index(t)]);
}

double MinMaxScaler::inverse(TraitId t, double v) const {
    return min_[index(t)] + v * (max_[index(t)] - min_[index(t)]);
}

void to_json(nlohmann::json& j, const MinMaxScaler& s) {
    j = nlohmann::json::object();
    for (auto t : kAllTraits) j[std::string(trait_name(t))] = {s.min(t), s.max(t)};
}

void from_json(const nlohmann::json& j, MinMaxScaler& s) {
    PerTrait<double> lo{}, hi{};
    for (auto t : kAllTraits) {
        const auto& pair = j.at(std::string(trait_name(t)));
        lo[index(t)] = pair.at(0).get<double>();
        hi[index(t)] = pair.at(1).get<double>();
    }
    s = MinMaxScaler(lo, hi);
}

MinMaxScaler fit_label_scaler(const Dataset& dataset, std::span<const std::size_t> train,
                              const SpeciesStatsTable& stats) {
    std::vector<PerTrait<double>> values(train.size());
    std::vector<PerTrait<bool>> mask(train.size());
    for (std::size_t k = 0; k < train.size(); ++k) {
        const auto& rec = dataset.record(train[k]);
        for (auto t : kAllTraits) {
            const auto* s = stats.find(rec.species_id, t);
            mask[k][index(t)] = s != nullptr;
            values[k][index(t)] = s != nullptr ? s->mean : 0.0;
        }
    }
    return MinMaxScaler::fit(values, mask);
}

std::size_t batch_quota(std::size_t batch_size, std::size_t batch_index, GrowthForm form) {
    const std::size_t base = batch_size / kNumGrowthForms;
    const std::size_t rem = batch_size % kNumGrowthForms;
    // The forms receiving the remainder rotate from batch to batch.
    const std::size_t slot = (index(form) + kNumGrowthForms - batch_index % kNumGrowthForms) % kNumGrowthForms;
    return base + (slot < rem ? 1 : 0);
}

std::vector<std::vector<std::size_t>> make_stratified_batches(std::span<const StratumMember> members,
                                                              std::size_t batch_size, std::uint64_t seed,
                                                              std::uint64_t epoch) {
    if (batch_size < kNumGrowthForms) {
        throw ValidationError(fmt::format("batch_size {} is below one sample per growth form", batch_size));
    }
    std::array<std::vector<std::size_t>, kNumGrowthForms> strata;
    for (const auto& m : members) strata[index(m.form)].push_back(m.sample);
    std::size_t largest = 0;
    for (auto g : kAllGrowthForms) {
        if (strata[index(g)].empty()) {
            throw ValidationError(fmt::format("stratified batches: growth form {} has no training samples",
                                              growth_form_name(g)));
        }
        std::sort(strata[index(g)].begin(), strata[index(g)].end());
        largest = std::max(largest, strata[index(g)].size());
    }
    const std::size_t num_batches = (kNumGrowthForms * largest + batch_size - 1) / batch_size;

    std::array<std::vector<std::size_t>, kNumGrowthForms> draws;
    for (auto g : kAllGrowthForms) {
        std::size_t quota = 0;
        for (std::size_t k = 0; k < num_batches; ++k) quota += batch_quota(batch_size, k, g);
        Rng rng(mix_seed({seed, epoch, 0x62617463ULL, static_cast<std::uint64_t>(index(g))}));
        auto& seq = draws[index(g)];
        seq.reserve(quota);
        // Strata smaller than their quota are cycled through fresh shuffles.
        while (seq.size() < quota) {
            auto perm = strata[index(g)];
            rng.shuffle(perm);
            const std::size_t take = std::min(perm.size(), quota - seq.size());
            seq.insert(seq.end(), perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(take));
        }
    }

    std::vector<std::vector<std::size_t>> batches(num_batches);
    std::array<std::size_t, kNumGrowthForms> cursor{};
    for (std::size_t k = 0; k < num_batches; ++k) {
        batches[k].reserve(batch_size);
        for (auto g : kAllGrowthForms) {
            const std::size_t q = batch_quota(batch_size, k, g);
            auto& c = cursor[index(g)];
            batches[k].insert(batches[k].end(), draws[index(g)].begin() + static_cast<std::ptrdiff_t>(c),
                              draws[index(g)].begin() + static_cast<std::ptrdiff_t>(c + q));
            c += q;
        }
    }
    return batches;
}

double cosine_lr(double epoch, double total, double lr_init, double lr_min) {
    if (total <= 0.0) return lr_init;
    const double t = std::clamp(epoch, 0.0, total);
    return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + std::cos(std::numbers::pi * t / total));
}

double clip_grad_norm(std::span<ParamBlock> blocks, double max_norm) {
    double sq = 0.0;
    for (const auto& b : blocks) {
        for (double g : b.grad) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw TrainingError("clip_grad_norm: non-finite gradient norm");
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto& b : blocks) {
            for (double& g : b.grad) g *= scale;
        }
    }
    return norm;
}

void AdamW::step(std::span<ParamBlock> blocks, double lr) {
    if (m_.empty()) {
        m_.resize(blocks.size());
        v_.resize(blocks.size());
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            m_[i].assign(blocks[i].value.size(), 0.0);
            v_[i].assign(blocks[i].value.size(), 0.0);
        }
    }
    if (m_.size() != blocks.size()) throw std::logic_error("AdamW: parameter block count changed");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        auto& b = blocks[i];
        if (m_[i].size() != b.value.size()) throw std::logic_error("AdamW: parameter block shape changed");
        for (std::size_t k = 0; k < b.value.size(); ++k) {
            const double g = b.grad[k];
            m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * g;
            v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * g * g;
            const double m_hat = m_[i][k] / bc1;
            const double v_hat = v_[i][k] / bc2;
            const double theta = b.value[k];
            b.value[k] = theta - lr * m_hat / (std::sqrt(v_hat) + eps_) - lr * weight_decay_ * theta;
        }
    }
}

BatchInputs make_batch_inputs(const Dataset& dataset, std::span<const std::size_t> samples,
                              const ModelConfig& cfg) {
    BatchInputs in;
    in.image.reserve(samples.size());
    for (auto s : samples) in.image.push_back(dataset.tokens(Modality::ImageTokens, s));
    if (cfg.use_depth) {
        for (auto s : samples) in.depth.push_back(dataset.tokens(Modality::DepthTokens, s));
    }
    if (cfg.use_geo) {
        for (auto s : samples) in.geo.push_back(dataset.tokens(Modality::GeoVector, s));
    }
    return in;
}

std::vector<Prediction> predict_samples(const FusionNetwork& net, const Dataset& dataset,
                                        std::span<const std::size_t> samples, std::size_t threads) {
    constexpr std::size_t kChunk = 64;
    std::vector<Prediction> out(samples.size());
    const std::size_t num_chunks = (samples.size() + kChunk - 1) / kChunk;
    auto run_chunk = [&](std::size_t c) {
        const std::size_t begin = c * kChunk;
        const std::size_t end = std::min(samples.size(), begin + kChunk);
        const auto chunk = samples.subspan(begin, end - begin);
        const auto preds = net.predict(make_batch_inputs(dataset, chunk, net.config()));
        std::copy(preds.begin(), preds.end(), out.begin() + static_cast<std::ptrdiff_t>(begin));
    };
    threads = std::max<std::size_t>(1, std::min(threads, num_chunks));
    if (threads == 1) {
        for (std::size_t c = 0; c < num_chunks; ++c) run_chunk(c);
        return out;
    }
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t w = 0; w < threads; ++w) {
        workers.emplace_back([&, w] {
            try {
                for (std::size_t c = w; c < num_chunks; c += threads) run_chunk(c);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

std::optional<double> r_squared(std::span<const double> observed, std::span<const double> predicted) {
    if (observed.size() != predicted.size()) throw std::invalid_argument("r_squared: length mismatch");
    if (observed.size() < 2) return std::nullopt;
    double mean = 0.0;
    for (double o : observed) mean += o;
    mean /= static_cast<double>(observed.size());
    double ss_res = 0.0;
    double ss_tot = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        ss_res += (observed[i] - predicted[i]) * (observed[i] - predicted[i]);
        ss_tot += (observed[i] - mean) * (observed[i] - mean);
    }
    if (!(ss_tot > 0.0)) return std::nullopt;
    return 1.0 - ss_res / ss_tot;
}

namespace {

nlohmann::json per_trait_json(const PerTrait<std::optional<double>>& v) {
    nlohmann::json j = nlohmann::json::object();
    for (auto t : kAllTraits) {
        const auto& x = v[index(t)];
        j[std::string(trait_name(t))] = x ? nlohmann::json(*x) : nlohmann::json(nullptr);
    }
    return j;
}

PerTrait<std::optional<double>> per_trait_from_json(const nlohmann::json& j) {
    PerTrait<std::optional<double>> out{};
    for (auto t : kAllTraits) {
        const auto key = std::string(trait_name(t));
        if (j.contains(key) && !j.at(key).is_null()) out[index(t)] = j.at(key).get<double>();
    }
    return out;
}

}  // namespace

void to_json(nlohmann::json& j, const EpochMetrics& m) {
    nlohmann::json loss = nlohmann::json::object();
    for (auto t : kAllTraits) loss[std::string(trait_name(t))] = m.loss.per_trait[index(t)];
    loss["total"] = m.loss.total;
    j = nlohmann::json{{"epoch", m.epoch},
                       {"lr", m.lr},
                       {"loss", loss},
                       {"max_grad_norm", m.max_grad_norm},
                       {"train_samples", m.train_samples},
                       {"val_r2", per_trait_json(m.val_r2)},
                       {"reference_r2", per_trait_json(m.reference_r2)}};
}

EpochMetrics epoch_metrics_from_json(const nlohmann::json& j) {
    EpochMetrics m;
    m.epoch = j.at("epoch").get<std::size_t>();
    m.lr = j.value("lr", 0.0);
    if (j.contains("loss")) {
        const auto& loss = j.at("loss");
        for (auto t : kAllTraits) m.loss.per_trait[index(t)] = loss.value(std::string(trait_name(t)), 0.0);
        m.loss.total = loss.value("total", 0.0);
    }
    m.max_grad_norm = j.value("max_grad_norm", 0.0);
    m.train_samples = j.value("train_samples", std::size_t{0});
    if (j.contains("val_r2")) m.val_r2 = per_trait_from_json(j.at("val_r2"));
    if (j.contains("reference_r2")) m.reference_r2 = per_trait_from_json(j.at("reference_r2"));
    return m;
}

PerTrait<std::optional<double>> median_r2(const FusionNetwork& net, const MinMaxScaler& scaler,
                                          const Dataset& dataset, const SpeciesStatsTable& stats,
                                          std::span<const std::size_t> samples) {
    PerTrait<std::optional<double>> out{};
    if (samples.empty()) return out;
    const auto preds = predict_samples(net, dataset, samples);
    for (auto t : kAllTraits) {
        std::vector<double> obs, pred;
        for (std::size_t k = 0; k < samples.size(); ++k) {
            const auto* s = stats.find(dataset.record(samples[k]).species_id, t);
            if (s == nullptr) continue;
            obs.push_back(s->median);
            pred.push_back(scaler.inverse(t, preds[k][index(t)].mu));
        }
        out[index(t)] = r_squared(obs, pred);
    }
    return out;
}

PerTrait<std::optional<double>> observed_r2(const FusionNetwork& net, const MinMaxScaler& scaler,
                                            const Dataset& dataset, std::span<const std::size_t> samples) {
    PerTrait<std::optional<double>> out{};
    if (samples.empty()) return out;
    const auto preds = predict_samples(net, dataset, samples);
    for (auto t : kAllTraits) {
        std::vector<double> obs, pred;
        for (std::size_t k = 0; k < samples.size(); ++k) {
            const auto& v = dataset.record(samples[k]).observed[index(t)];
            if (!v) continue;
            obs.push_back(*v);
            pred.push_back(scaler.inverse(t, preds[k][index(t)].mu));
        }
        out[index(t)] = r_squared(obs, pred);
    }
    return out;
}

Trainer::Trainer(const Dataset& dataset, const SpeciesStatsTable& stats, ModelConfig model, TrainConfig train,
                 MinMaxScaler scaler, std::vector<std::size_t> train_samples, std::vector<std::size_t> val_samples,
                 std::vector<std::size_t> reference_samples)
    : dataset_(dataset),
      stats_(stats),
      train_cfg_(train),
      scaler_(scaler),
      net_(FusionNetwork::init_params(model, train.seed)),
      snapshot_(net_.rounded_to_f32()),
      optimizer_(train.beta1, train.beta2, train.eps, train.weight_decay),
      train_(std::move(train_samples)),
      val_(std::move(val_samples)),
      reference_(std::move(reference_samples)) {
    train_cfg_.validate();
}

void Trainer::set_train_samples(std::vector<std::size_t> samples) { train_ = std::move(samples); }

std::vector<std::vector<std::size_t>> Trainer::batches_for_epoch(std::uint64_t epoch) const {
    std::vector<StratumMember> members;
    members.reserve(train_.size());
    for (auto s : train_) members.push_back({s, dataset_.record(s).growth_form});
    return make_stratified_batches(members, train_cfg_.batch_size, train_cfg_.seed, epoch);
}

EpochMetrics Trainer::run_epoch() {
    const std::uint64_t epoch = epoch_;
    EpochMetrics metrics;
    metrics.epoch = epoch_ + 1;
    metrics.train_samples = train_.size();
    metrics.lr = cosine_lr(static_cast<double>(epoch), static_cast<double>(train_cfg_.epochs), train_cfg_.lr_init,
                           train_cfg_.lr_min);

    const LabelTable labels = assign_epoch_labels(dataset_, train_, stats_, train_cfg_.seed, epoch);
    std::unordered_map<std::size_t, std::size_t> label_row;
    label_row.reserve(train_.size());
    for (std::size_t k = 0; k < labels.samples.size(); ++k) label_row.emplace(labels.samples[k], k);

    const auto batches = batches_for_epoch(epoch);
    const auto& families = net_.config().loss_family;
    ForwardCache cache;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
        const auto& batch = batches[bi];
        std::vector<PerTrait<double>> y(batch.size());
        std::vector<PerTrait<bool>> mask(batch.size());
        for (std::size_t k = 0; k < batch.size(); ++k) {
            const auto row = label_row.at(batch[k]);
            mask[k] = labels.mask[row];
            for (auto t : kAllTraits) {
                y[k][index(t)] = mask[k][index(t)] ? scaler_.transform(t, labels.values[row][index(t)]) : 0.0;
            }
        }
        net_.zero_grad();
        const auto preds = net_.forward(make_batch_inputs(dataset_, batch, net_.config()), cache);
        MultiTaskLoss loss;
        try {
            loss = multi_task_loss(preds, y, mask, families);
        } catch (const std::domain_error&) {
            loss.breakdown.total = std::numeric_limits<double>::quiet_NaN();
        }
        if (!std::isfinite(loss.breakdown.total)) {
            throw TrainingError(fmt::format("non-finite loss at epoch {} batch {}", epoch + 1, bi));
        }
        for (auto t : kAllTraits) metrics.loss.per_trait[index(t)] += loss.breakdown.per_trait[index(t)];
        metrics.loss.total += loss.breakdown.total;
        net_.backward(cache, loss.gradients);
        auto blocks = net_.blocks();
        double norm = 0.0;
        try {
            norm = clip_grad_norm(blocks, train_cfg_.clip_max_norm);
        } catch (const TrainingError&) {
            throw TrainingError(fmt::format("non-finite gradient norm at epoch {} batch {}", epoch + 1, bi));
        }
        metrics.max_grad_norm = std::max(metrics.max_grad_norm, norm);
        optimizer_.step(blocks, metrics.lr);
    }
    const double nb = static_cast<double>(batches.size());
    for (auto& v : metrics.loss.per_trait) v /= nb;
    metrics.loss.total /= nb;
    ++epoch_;

    snapshot_ = net_.rounded_to_f32();
    if (epoch_ % train_cfg_.eval_every == 0 || epoch_ == train_cfg_.epochs) {
        metrics.val_r2 = median_r2(snapshot_, scaler_, dataset_, stats_, val_);
        metrics.reference_r2 = observed_r2(snapshot_, scaler_, dataset_, reference_);
    }
    return metrics;
}

std::vector<EpochMetrics> train(const Dataset& dataset, const SpeciesStatsTable& stats, const ModelConfig& model,
                                const TrainConfig& train_cfg, const EpochCallback& on_epoch) {
    const auto train_idx = dataset.indices_with_split(Split::Train);
    const auto val_idx = dataset.indices_with_split(Split::Val);
    const auto ref_idx = dataset.indices_with_split(Split::Reference);
    if (train_idx.empty()) throw ValidationError("train: dataset has no Train samples");
    const auto scaler = fit_label_scaler(dataset, train_idx, stats);
    Trainer trainer(dataset, stats, model, train_cfg, scaler, train_idx, val_idx, ref_idx);
    std::vector<EpochMetrics> history;
    for (std::size_t e = 0; e < train_cfg.epochs; ++e) {
        history.push_back(trainer.run_epoch());
        if (on_epoch) on_epoch(history.back(), trainer);
    }
    return history;
}

}  // namespace traitnet
