#include "traitnet/network.hpp"

#include "traitnet/util.hpp"

#include <algorithm>
#include <numbers>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace traitnet {

std::string_view loss_family_name(LossFamily f) {
    return f == LossFamily::Gaussian ? "Gaussian" : "Laplace";
}

std::optional<LossFamily> parse_loss_family(std::string_view name) {
    if (name == "Gaussian" || name == "gaussian") return LossFamily::Gaussian;
    if (name == "Laplace" || name == "laplace") return LossFamily::Laplace;
    return std::nullopt;
}

std::size_t ModelConfig::resolved_backbone_dim() const {
    if (backbone_dim != 0) return backbone_dim;
    return use_depth ? 1024 : 768;
}

std::size_t ModelConfig::concat_dim() const {
    return image_embed_dim + (use_depth ? depth_embed_dim : 0) + (use_geo ? geo_proj_dim : 0);
}

void ModelConfig::validate() const {
    const std::pair<const char*, std::size_t> dims[] = {
        {"image_token_dim", image_token_dim},
        {"image_tokens_pooled", image_tokens_pooled},
        {"mlp_hidden_dim", mlp_hidden_dim},
        {"image_embed_dim", image_embed_dim},
        {"residual_hidden_multiplier", residual_hidden_multiplier},
    };
    for (const auto& [name, value] : dims) {
        if (value == 0) throw ValidationError(fmt::format("model config: {} must be >= 1", name));
    }
    if (use_depth && (depth_token_dim == 0 || depth_tokens_pooled == 0 || depth_embed_dim == 0)) {
        throw ValidationError("model config: depth dims must be >= 1 when use_depth is set");
    }
    if (use_geo && (geo_in_dim == 0 || geo_proj_dim == 0)) {
        throw ValidationError("model config: geo dims must be >= 1 when use_geo is set");
    }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    nlohmann::json families;
    for (auto t : kAllTraits) families[std::string(trait_name(t))] = loss_family_name(c.loss_family[index(t)]);
    j = nlohmann::json{
        {"image_token_dim", c.image_token_dim},
        {"depth_token_dim", c.depth_token_dim},
        {"image_tokens_pooled", c.image_tokens_pooled},
        {"depth_tokens_pooled", c.depth_tokens_pooled},
        {"mlp_hidden_dim", c.mlp_hidden_dim},
        {"image_embed_dim", c.image_embed_dim},
        {"depth_embed_dim", c.depth_embed_dim},
        {"geo_in_dim", c.geo_in_dim},
        {"geo_proj_dim", c.geo_proj_dim},
        {"backbone_dim", c.resolved_backbone_dim()},
        {"num_residual_blocks", c.num_residual_blocks},
        {"residual_hidden_multiplier", c.residual_hidden_multiplier},
        {"use_depth", c.use_depth},
        {"use_geo", c.use_geo},
        {"loss_family", families},
    };
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("image_token_dim", c.image_token_dim);
    get("depth_token_dim", c.depth_token_dim);
    get("image_tokens_pooled", c.image_tokens_pooled);
    get("depth_tokens_pooled", c.depth_tokens_pooled);
    get("mlp_hidden_dim", c.mlp_hidden_dim);
    get("image_embed_dim", c.image_embed_dim);
    get("depth_embed_dim", c.depth_embed_dim);
    get("geo_in_dim", c.geo_in_dim);
    get("geo_proj_dim", c.geo_proj_dim);
    get("backbone_dim", c.backbone_dim);
    get("num_residual_blocks", c.num_residual_blocks);
    get("residual_hidden_multiplier", c.residual_hidden_multiplier);
    get("use_depth", c.use_depth);
    get("use_geo", c.use_geo);
    if (j.contains("loss_family")) {
        for (const auto& [key, value] : j.at("loss_family").items()) {
            auto t = parse_trait(key);
            auto f = parse_loss_family(value.get<std::string>());
            if (!t || !f) {
                throw ValidationError(fmt::format("model config: bad loss_family entry {}={}", key, value.dump()));
            }
            c.loss_family[index(*t)] = *f;
        }
    }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

Eigen::MatrixXd adaptive_avg_pool(const TokenView& tokens, std::size_t bins) {
    const std::size_t n = tokens.tokens;
    if (n == 0 || bins == 0) {
        throw std::invalid_argument(fmt::format("adaptive_avg_pool: tokens={} bins={}", n, bins));
    }
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(bins),
                                                static_cast<Eigen::Index>(tokens.dim));
    for (std::size_t i = 0; i < bins; ++i) {
        const std::size_t start = (i * n) / bins;
        const std::size_t end = ((i + 1) * n + bins - 1) / bins;
        for (std::size_t r = start; r < end; ++r) {
            for (std::size_t c = 0; c < tokens.dim; ++c) {
                out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) += tokens.at(r, c);
            }
        }
        out.row(static_cast<Eigen::Index>(i)) /= static_cast<double>(end - start);
    }
    return out;
}

Linear::Linear(std::size_t in, std::size_t out)
    : weight(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in))),
      bias(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out))),
      weight_grad(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in))),
      bias_grad(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out))) {}

Eigen::MatrixXd Linear::forward(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd y = weight * x;
    y.colwise() += bias;
    return y;
}

Eigen::MatrixXd Linear::backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy) {
    weight_grad.noalias() += dy * x.transpose();
    bias_grad += dy.rowwise().sum();
    return weight.transpose() * dy;
}

FusionNetwork::FusionNetwork(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t d = cfg_.resolved_backbone_dim();
    cfg_.backbone_dim = d;
    image_fc1_ = Linear(cfg_.image_tokens_pooled * cfg_.image_token_dim, cfg_.mlp_hidden_dim);
    image_fc2_ = Linear(cfg_.mlp_hidden_dim, cfg_.image_embed_dim);
    if (cfg_.use_depth) {
        depth_fc1_ = Linear(cfg_.depth_tokens_pooled * cfg_.depth_token_dim, cfg_.mlp_hidden_dim);
        depth_fc2_ = Linear(cfg_.mlp_hidden_dim, cfg_.depth_embed_dim);
    }
    if (cfg_.use_geo) geo_proj_ = Linear(cfg_.geo_in_dim, cfg_.geo_proj_dim);
    fusion_ = Linear(cfg_.concat_dim(), d);
    residual_.resize(cfg_.num_residual_blocks);
    for (auto& block : residual_) {
        block.expand = Linear(d, d * cfg_.residual_hidden_multiplier);
        block.contract = Linear(d * cfg_.residual_hidden_multiplier, d);
    }
    for (auto& head : heads_) head = Linear(d, 2);
}

// Visits (name, layer) pairs in the canonical block order used by
// checkpoints, the optimizer, and initialization.
template <typename Self, typename Fn>
void FusionNetwork::visit_layers(Self& self, Fn&& fn) {
    fn("image_mlp.fc1", self.image_fc1_);
    fn("image_mlp.fc2", self.image_fc2_);
    if (self.cfg_.use_depth) {
        fn("depth_mlp.fc1", self.depth_fc1_);
        fn("depth_mlp.fc2", self.depth_fc2_);
    }
    if (self.cfg_.use_geo) fn("geo_proj", self.geo_proj_);
    fn("fusion_proj", self.fusion_);
    for (std::size_t i = 0; i < self.residual_.size(); ++i) {
        fn(fmt::format("residual.{}.expand", i), self.residual_[i].expand);
        fn(fmt::format("residual.{}.contract", i), self.residual_[i].contract);
    }
    for (auto t : kAllTraits) fn(fmt::format("head.{}", trait_name(t)), self.heads_[index(t)]);
}

FusionNetwork FusionNetwork::init_params(const ModelConfig& cfg, std::uint64_t seed) {
    FusionNetwork net(cfg);
    Rng rng(mix_seed({seed, 0x696e6974ULL}));
    visit_layers(net, [&](const std::string&, Linear& layer) {
        const double a = std::sqrt(6.0 / static_cast<double>(layer.in() + layer.out()));
        for (Eigen::Index k = 0; k < layer.weight.size(); ++k) layer.weight.data()[k] = rng.uniform(-a, a);
        layer.bias.setZero();
    });
    return net;
}

std::vector<ParamBlock> FusionNetwork::blocks() {
    ++version_;
    std::vector<ParamBlock> out;
    visit_layers(*this, [&](const std::string& name, Linear& layer) {
        out.push_back({name + ".weight", layer.out(), layer.in(),
                       std::span<double>(layer.weight.data(), static_cast<std::size_t>(layer.weight.size())),
                       std::span<double>(layer.weight_grad.data(),
                                         static_cast<std::size_t>(layer.weight_grad.size()))});
        out.push_back({name + ".bias", layer.out(), 1,
                       std::span<double>(layer.bias.data(), static_cast<std::size_t>(layer.bias.size())),
                       std::span<double>(layer.bias_grad.data(), static_cast<std::size_t>(layer.bias_grad.size()))});
    });
    return out;
}

std::vector<ConstParamBlock> FusionNetwork::blocks() const {
    std::vector<ConstParamBlock> out;
    visit_layers(*this, [&](const std::string& name, const Linear& layer) {
        out.push_back({name + ".weight", layer.out(), layer.in(),
                       std::span<const double>(layer.weight.data(), static_cast<std::size_t>(layer.weight.size())),
                       std::span<const double>(layer.weight_grad.data(),
                                               static_cast<std::size_t>(layer.weight_grad.size()))});
        out.push_back({name + ".bias", layer.out(), 1,
                       std::span<const double>(layer.bias.data(), static_cast<std::size_t>(layer.bias.size())),
                       std::span<const double>(layer.bias_grad.data(),
                                               static_cast<std::size_t>(layer.bias_grad.size()))});
    });
    return out;
}

std::size_t FusionNetwork::parameter_count() const {
    std::size_t n = 0;
    visit_layers(*this, [&](const std::string&, const Linear& layer) {
        n += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
    });
    return n;
}

void FusionNetwork::zero_grad() {
    visit_layers(*this, [](const std::string&, Linear& layer) {
        layer.weight_grad.setZero();
        layer.bias_grad.setZero();
    });
}

namespace {

Eigen::MatrixXd pooled_columns(const std::vector<TokenView>& views, std::size_t bins,
                               std::size_t token_dim, const char* stage) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(bins * token_dim), static_cast<Eigen::Index>(views.size()));
    for (std::size_t b = 0; b < views.size(); ++b) {
        if (views[b].dim != token_dim) {
            throw ValidationError(fmt::format("{}: token dim {} does not match config {}", stage,
                                              views[b].dim, token_dim));
        }
        const Eigen::MatrixXd pooled = adaptive_avg_pool(views[b], bins);
        // Row-major flatten of the bins x C pooled matrix.
        for (std::size_t i = 0; i < bins; ++i) {
            for (std::size_t c = 0; c < token_dim; ++c) {
                x(static_cast<Eigen::Index>(i * token_dim + c), static_cast<Eigen::Index>(b)) =
                    pooled(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
            }
        }
    }
    return x;
}

Eigen::MatrixXd apply_gelu(const Eigen::MatrixXd& x) { return x.unaryExpr([](double v) { return gelu(v); }); }

}  // namespace

std::vector<Prediction> FusionNetwork::forward(const BatchInputs& in, ForwardCache& c) const {
    const std::size_t batch = in.size();
    if (batch == 0) throw ValidationError("forward: empty batch");
    if (cfg_.use_depth && in.depth.size() != batch) {
        throw ValidationError(fmt::format("depth stage: expected {} inputs, got {}", batch, in.depth.size()));
    }
    if (cfg_.use_geo && in.geo.size() != batch) {
        throw ValidationError(fmt::format("geo stage: expected {} inputs, got {}", batch, in.geo.size()));
    }
    c = ForwardCache{};
    c.owner = this;
    c.version = version_;
    c.batch = batch;

    c.image_in = pooled_columns(in.image, cfg_.image_tokens_pooled, cfg_.image_token_dim, "image stage");
    c.image_pre = image_fc1_.forward(c.image_in);
    c.image_act = apply_gelu(c.image_pre);
    c.image_out = image_fc2_.forward(c.image_act);

    const auto cols = static_cast<Eigen::Index>(batch);
    c.concat.resize(static_cast<Eigen::Index>(cfg_.concat_dim()), cols);
    Eigen::Index row = 0;
    c.concat.middleRows(row, c.image_out.rows()) = c.image_out;
    row += c.image_out.rows();

    if (cfg_.use_depth) {
        c.depth_in = pooled_columns(in.depth, cfg_.depth_tokens_pooled, cfg_.depth_token_dim, "depth stage");
        c.depth_pre = depth_fc1_.forward(c.depth_in);
        c.depth_act = apply_gelu(c.depth_pre);
        c.depth_out = depth_fc2_.forward(c.depth_act);
        c.concat.middleRows(row, c.depth_out.rows()) = c.depth_out;
        row += c.depth_out.rows();
    }
    if (cfg_.use_geo) {
        c.geo_in.resize(static_cast<Eigen::Index>(cfg_.geo_in_dim), cols);
        for (std::size_t b = 0; b < batch; ++b) {
            const auto& g = in.geo[b];
            if (g.tokens * g.dim != cfg_.geo_in_dim) {
                throw ValidationError(fmt::format("geo stage: vector dim {} does not match config {}",
                                                  g.tokens * g.dim, cfg_.geo_in_dim));
            }
            for (std::size_t k = 0; k < cfg_.geo_in_dim; ++k) {
                c.geo_in(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(b)) = g.values[k];
            }
        }
        c.geo_out = geo_proj_.forward(c.geo_in);
        c.concat.middleRows(row, c.geo_out.rows()) = c.geo_out;
    }

    Eigen::MatrixXd z = fusion_.forward(c.concat);
    c.block_in.reserve(residual_.size());
    c.block_pre.reserve(residual_.size());
    c.block_act.reserve(residual_.size());
    for (const auto& block : residual_) {
        c.block_in.push_back(z);
        c.block_pre.push_back(block.expand.forward(z));
        c.block_act.push_back(apply_gelu(c.block_pre.back()));
        z += block.contract.forward(c.block_act.back());
    }
    c.trunk_out = std::move(z);

    std::vector<Prediction> out(batch);
    for (auto t : kAllTraits) {
        const Eigen::MatrixXd h = heads_[index(t)].forward(c.trunk_out);
        for (std::size_t b = 0; b < batch; ++b) {
            out[b][index(t)].mu = h(0, static_cast<Eigen::Index>(b));
            out[b][index(t)].log_scale = h(1, static_cast<Eigen::Index>(b));
        }
    }
    return out;
}

std::vector<Prediction> FusionNetwork::predict(const BatchInputs& inputs) const {
    ForwardCache cache;
    return forward(inputs, cache);
}

void FusionNetwork::backward(const ForwardCache& c, std::span<const PerTrait<TraitGradient>> upstream) {
    if (c.owner != this || c.version != version_) {
        throw std::logic_error("backward: stale forward cache (parameters changed since forward)");
    }
    if (upstream.size() != c.batch) {
        throw std::invalid_argument(
            fmt::format("backward: {} upstream gradients for batch of {}", upstream.size(), c.batch));
    }
    const auto cols = static_cast<Eigen::Index>(c.batch);
    Eigen::MatrixXd dz = Eigen::MatrixXd::Zero(c.trunk_out.rows(), cols);
    for (auto t : kAllTraits) {
        Eigen::MatrixXd dh(2, cols);
        for (std::size_t b = 0; b < c.batch; ++b) {
            dh(0, static_cast<Eigen::Index>(b)) = upstream[b][index(t)].d_mu;
            dh(1, static_cast<Eigen::Index>(b)) = upstream[b][index(t)].d_log_scale;
        }
        dz += heads_[index(t)].backward(c.trunk_out, dh);
    }
    for (std::size_t i = residual_.size(); i-- > 0;) {
        auto& block = residual_[i];
        Eigen::MatrixXd d_act = block.contract.backward(c.block_act[i], dz);
        Eigen::MatrixXd d_pre =
            d_act.cwiseProduct(c.block_pre[i].unaryExpr([](double v) { return gelu_grad(v); }));
        dz += block.expand.backward(c.block_in[i], d_pre);
    }
    const Eigen::MatrixXd d_concat = fusion_.backward(c.concat, dz);

    Eigen::Index row = 0;
    {
        const Eigen::MatrixXd d_out = d_concat.middleRows(row, c.image_out.rows());
        row += c.image_out.rows();
        Eigen::MatrixXd d_act = image_fc2_.backward(c.image_act, d_out);
        Eigen::MatrixXd d_pre = d_act.cwiseProduct(c.image_pre.unaryExpr([](double v) { return gelu_grad(v); }));
        image_fc1_.weight_grad.noalias() += d_pre * c.image_in.transpose();
        image_fc1_.bias_grad += d_pre.rowwise().sum();
    }
    if (cfg_.use_depth) {
        const Eigen::MatrixXd d_out = d_concat.middleRows(row, c.depth_out.rows());
        row += c.depth_out.rows();
        Eigen::MatrixXd d_act = depth_fc2_.backward(c.depth_act, d_out);
        Eigen::MatrixXd d_pre = d_act.cwiseProduct(c.depth_pre.unaryExpr([](double v) { return gelu_grad(v); }));
        depth_fc1_.weight_grad.noalias() += d_pre * c.depth_in.transpose();
        depth_fc1_.bias_grad += d_pre.rowwise().sum();
    }
    if (cfg_.use_geo) {
        const Eigen::MatrixXd d_out = d_concat.middleRows(row, c.geo_out.rows());
        geo_proj_.weight_grad.noalias() += d_out * c.geo_in.transpose();
        geo_proj_.bias_grad += d_out.rowwise().sum();
    }
}

FusionNetwork FusionNetwork::rounded_to_f32() const {
    FusionNetwork copy = *this;
    visit_layers(copy, [](const std::string&, Linear& layer) {
        layer.weight = layer.weight.cast<float>().cast<double>();
        layer.bias = layer.bias.cast<float>().cast<double>();
    });
    return copy;
}

}  // namespace traitnet
