#pragma once

#include "traitnet/core.hpp"
#include "traitnet/network.hpp"

#include <span>
#include <vector>

namespace traitnet {

struct NllTerm {
    double loss = 0.0;
    double d_mu = 0.0;
    double d_log_scale = 0.0;
};

// (y - mu)^2 / (2 exp(s)) + s / 2
NllTerm gaussian_nll(double y, double mu, double s);
// |y - mu| / exp(s) + s, with sign(0) = 0 in the mu-subgradient
NllTerm laplace_nll(double y, double mu, double s);

NllTerm nll(LossFamily family, double y, double mu, double s);

struct LossBreakdown {
    PerTrait<double> per_trait{};       // mean NLL over unmasked samples, 0 if none
    PerTrait<std::size_t> counts{};
    double total = 0.0;                 // sum of the per-trait means
};

struct MultiTaskLoss {
    LossBreakdown breakdown;
    std::vector<PerTrait<TraitGradient>> gradients;  // d total / d (mu, s) per sample
};

// Labels are in scaled target space; masked entries contribute neither loss
// nor gradient. Each trait's gradients carry the 1/count of its mean.
MultiTaskLoss multi_task_loss(std::span<const Prediction> predictions,
                              std::span<const PerTrait<double>> labels,
                              std::span<const PerTrait<bool>> mask,
                              const PerTrait<LossFamily>& families);

}  // namespace traitnet
