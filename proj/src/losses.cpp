#include "traitnet/losses.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace traitnet {

namespace {

void require_finite(double y, double mu, double s, const char* which) {
    if (!std::isfinite(y) || !std::isfinite(mu) || !std::isfinite(s)) {
        throw std::domain_error(fmt::format("{}: non-finite input (y={}, mu={}, s={})", which, y, mu, s));
    }
}

}  // namespace

NllTerm gaussian_nll(double y, double mu, double s) {
    require_finite(y, mu, s, "gaussian_nll");
    const double r = y - mu;
    const double inv_var = std::exp(-s);
    const double half_sq = 0.5 * r * r * inv_var;
    return {half_sq + 0.5 * s, -r * inv_var, -half_sq + 0.5};
}

NllTerm laplace_nll(double y, double mu, double s) {
    require_finite(y, mu, s, "laplace_nll");
    const double r = y - mu;
    const double inv_scale = std::exp(-s);
    const double a = std::abs(r) * inv_scale;
    const double sign = (r > 0.0) - (r < 0.0);
    return {a + s, -sign * inv_scale, -a + 1.0};
}

NllTerm nll(LossFamily family, double y, double mu, double s) {
    return family == LossFamily::Gaussian ? gaussian_nll(y, mu, s) : laplace_nll(y, mu, s);
}

MultiTaskLoss multi_task_loss(std::span<const Prediction> predictions,
                              std::span<const PerTrait<double>> labels,
                              std::span<const PerTrait<bool>> mask,
                              const PerTrait<LossFamily>& families) {
    if (labels.size() != predictions.size() || mask.size() != predictions.size()) {
        throw std::invalid_argument(fmt::format("multi_task_loss: {} predictions, {} labels, {} masks",
                                                predictions.size(), labels.size(), mask.size()));
    }
    MultiTaskLoss out;
    out.gradients.assign(predictions.size(), PerTrait<TraitGradient>{});
    for (auto t : kAllTraits) {
        const auto ti = index(t);
        std::size_t count = 0;
        for (const auto& m : mask) count += m[ti] ? 1 : 0;
        out.breakdown.counts[ti] = count;
        if (count == 0) continue;
        const double inv_count = 1.0 / static_cast<double>(count);
        double sum = 0.0;
        for (std::size_t b = 0; b < predictions.size(); ++b) {
            if (!mask[b][ti]) continue;
            const auto& p = predictions[b][ti];
            const auto term = nll(families[ti], labels[b][ti], p.mu, p.log_scale);
            sum += term.loss;
            out.gradients[b][ti] = {term.d_mu * inv_count, term.d_log_scale * inv_count};
        }
        out.breakdown.per_trait[ti] = sum * inv_count;
        out.breakdown.total += out.breakdown.per_trait[ti];
    }
    return out;
}

}  // namespace traitnet
