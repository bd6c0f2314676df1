#pragma once

#include "traitnet/core.hpp"
#include "traitnet/dataset.hpp"

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace traitnet {

enum class LossFamily : std::uint8_t { Gaussian, Laplace };

std::string_view loss_family_name(LossFamily f);
std::optional<LossFamily> parse_loss_family(std::string_view name);

struct ModelConfig {
    std::size_t image_token_dim = 768;
    std::size_t depth_token_dim = 768;
    std::size_t image_tokens_pooled = 32;
    std::size_t depth_tokens_pooled = 64;
    std::size_t mlp_hidden_dim = 1024;
    std::size_t image_embed_dim = 768;
    std::size_t depth_embed_dim = 768;
    std::size_t geo_in_dim = 1024;
    std::size_t geo_proj_dim = 256;
    // 0 selects the default: 768 for image+geo, 1024 once depth is enabled.
    std::size_t backbone_dim = 0;
    std::size_t num_residual_blocks = 8;
    std::size_t residual_hidden_multiplier = 2;
    bool use_depth = true;
    bool use_geo = true;
    PerTrait<LossFamily> loss_family{LossFamily::Gaussian, LossFamily::Laplace, LossFamily::Gaussian,
                                     LossFamily::Gaussian};

    std::size_t resolved_backbone_dim() const;
    std::size_t concat_dim() const;
    void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

struct TraitPrediction {
    double mu = 0.0;         // scaled target space
    double log_scale = 0.0;  // s-hat; the scale is exp(log_scale)

    double scale() const { return std::exp(log_scale); }
};

using Prediction = PerTrait<TraitPrediction>;

struct TraitGradient {
    double d_mu = 0.0;
    double d_log_scale = 0.0;
};

// Mean of token rows [floor(i*N/bins), ceil((i+1)*N/bins)) for each output row i.
Eigen::MatrixXd adaptive_avg_pool(const TokenView& tokens, std::size_t bins);

// Fully connected layer y = W x + b with samples stored as columns.
struct Linear {
    Eigen::MatrixXd weight;  // out x in
    Eigen::VectorXd bias;
    Eigen::MatrixXd weight_grad;
    Eigen::VectorXd bias_grad;

    Linear() = default;
    Linear(std::size_t in, std::size_t out);

    std::size_t in() const { return static_cast<std::size_t>(weight.cols()); }
    std::size_t out() const { return static_cast<std::size_t>(weight.rows()); }

    Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
    // Accumulates dW += dy x^T, db += sum_cols(dy); returns W^T dy.
    Eigen::MatrixXd backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy);
};

struct ParamBlock {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::span<double> value;
    std::span<double> grad;
};

struct ConstParamBlock {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::span<const double> value;
    std::span<const double> grad;
};

// Per-sample inputs for one batch. Depth / geo vectors are only read when the
// corresponding modality is enabled in the config.
struct BatchInputs {
    std::vector<TokenView> image;
    std::vector<TokenView> depth;
    std::vector<TokenView> geo;  // tokens == 1

    std::size_t size() const { return image.size(); }
};

class FusionNetwork;

struct ForwardCache {
    const FusionNetwork* owner = nullptr;
    std::uint64_t version = 0;
    std::size_t batch = 0;

    Eigen::MatrixXd image_in, image_pre, image_act, image_out;
    Eigen::MatrixXd depth_in, depth_pre, depth_act, depth_out;
    Eigen::MatrixXd geo_in, geo_out;
    Eigen::MatrixXd concat;
    std::vector<Eigen::MatrixXd> block_in, block_pre, block_act;
    Eigen::MatrixXd trunk_out;
};

class FusionNetwork {
public:
    // All parameters zero.
    explicit FusionNetwork(const ModelConfig& cfg);

    // Weights ~ U(-a, a), a = sqrt(6 / (fan_in + fan_out)); biases zero.
    static FusionNetwork init_params(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }

    // Mutable access invalidates outstanding forward caches.
    std::vector<ParamBlock> blocks();
    std::vector<ConstParamBlock> blocks() const;
    std::size_t parameter_count() const;
    void zero_grad();
    std::uint64_t version() const { return version_; }

    std::vector<Prediction> forward(const BatchInputs& inputs, ForwardCache& cache) const;
    std::vector<Prediction> predict(const BatchInputs& inputs) const;

    // Accumulates parameter gradients for the batch in `cache`.
    void backward(const ForwardCache& cache, std::span<const PerTrait<TraitGradient>> upstream);

    // Copy with every parameter rounded through float32, matching what a
    // checkpoint stores.
    FusionNetwork rounded_to_f32() const;

private:
    struct ResidualBlock {
        Linear expand;
        Linear contract;
    };

    template <typename Self, typename Fn>
    static void visit_layers(Self& self, Fn&& fn);

    ModelConfig cfg_;
    Linear image_fc1_, image_fc2_;
    Linear depth_fc1_, depth_fc2_;
    Linear geo_proj_;
    Linear fusion_;
    std::vector<ResidualBlock> residual_;
    PerTrait<Linear> heads_;
    std::uint64_t version_ = 0;
};

double gelu(double x);
double gelu_grad(double x);

}  // namespace traitnet
