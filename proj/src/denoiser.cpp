#include "diffedit/denoiser.hpp"

#include <cassert>
#include <cmath>
#include <limits>
#include <numeric>

#include "diffedit/error.hpp"

namespace diffedit {

ConditionBundle ConditionBundle::unconditional() const {
    ConditionBundle u = *this;
    u.text_tokens = null_text_tokens;
    u.image_tokens = null_image_tokens;
    return u;
}

Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, double scale) {
    check_same_shape(eps_uncond, eps_cond, "cfg_combine");
    Tensor out(eps_cond.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = eps_uncond[i] + scale * (eps_cond[i] - eps_uncond[i]);
    return out;
}

Tensor predict_eps_cfg(const Denoiser& model, const Tensor& z_t, int t, const ConditionBundle& cond,
                       AttentionHooks* hooks) {
    Tensor eps_cond = model.predict_eps(z_t, t, cond, hooks);
    if (!model.conditional() || cond.cfg_scale == 1.0) return eps_cond;
    // The unconditional pass sees the same injected K/V but must not capture twice.
    AttentionHooks uncond_hooks;
    if (hooks) uncond_hooks.inject = hooks->inject;
    Tensor eps_uncond = model.predict_eps(z_t, t, cond.unconditional(), &uncond_hooks);
    return cfg_combine(eps_uncond, eps_cond, cond.cfg_scale);
}

void GmmPrior::validate() const {
    if (weights.empty()) throw ConfigError("GMM prior has no components");
    if (means.rank() != 2 || means.dim(0) != weights.size()) {
        throw DimensionError("GMM means " + shape_str(means.shape()) + " do not match " +
                             std::to_string(weights.size()) + " weights");
    }
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw ConfigError("GMM weights must be non-negative");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) throw ConfigError("GMM weights must sum to 1");
    if (!(std > 0.0 && std::isfinite(std))) throw ConfigError("GMM std must be positive and finite");
}

namespace {

struct Diffused {
    double sa;   // sqrt(alpha_bar)
    double var;  // alpha_bar s^2 + 1 - alpha_bar
};

Diffused diffuse(const GmmPrior& prior, const Tensor& z, double a) {
    if (z.size() != prior.dim()) {
        throw DimensionError("latent of shape " + shape_str(z.shape()) + " does not match GMM dimension " +
                             std::to_string(prior.dim()));
    }
    Diffused d{std::sqrt(a), a * prior.std * prior.std + 1.0 - a};
    assert(d.var > 0.0);
    return d;
}

} // namespace

std::vector<double> gmm_responsibilities(const GmmPrior& prior, const Tensor& z_t, double alpha_bar) {
    const Diffused d = diffuse(prior, z_t, alpha_bar);
    const std::size_t K = prior.components(), D = prior.dim();
    std::vector<double> logits(K);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) {
        const double* mu = prior.means.data().data() + k * D;
        double dist2 = 0.0;
        for (std::size_t j = 0; j < D; ++j) {
            double r = z_t[j] - d.sa * mu[j];
            dist2 += r * r;
        }
        logits[k] = prior.weights[k] > 0.0 ? std::log(prior.weights[k]) - 0.5 * dist2 / d.var
                                           : -std::numeric_limits<double>::infinity();
        best = std::max(best, logits[k]);
    }
    double total = 0.0;
    for (auto& l : logits) {
        l = std::exp(l - best);
        total += l;
    }
    for (auto& l : logits) l /= total;
    return logits;
}

Tensor analytic_gmm_eps(const GmmPrior& prior, const Tensor& z_t, double alpha_bar) {
    const Diffused d = diffuse(prior, z_t, alpha_bar);
    const auto resp = gmm_responsibilities(prior, z_t, alpha_bar);
    const std::size_t D = prior.dim();
    std::vector<double> mean_mu(D, 0.0);
    for (std::size_t k = 0; k < resp.size(); ++k) {
        if (resp[k] == 0.0) continue;
        const double* mu = prior.means.data().data() + k * D;
        for (std::size_t j = 0; j < D; ++j) mean_mu[j] += resp[k] * mu[j];
    }
    const double c = std::sqrt(1.0 - alpha_bar) / d.var;
    Tensor eps(z_t.shape());
    for (std::size_t j = 0; j < D; ++j) eps[j] = c * (z_t[j] - d.sa * mean_mu[j]);
    return eps;
}

GmmDenoiser::GmmDenoiser(GmmPrior prior, NoiseSchedule schedule)
    : prior_(std::move(prior)), schedule_(std::move(schedule)) {
    prior_.validate();
}

Tensor GmmDenoiser::predict_eps(const Tensor& z_t, int t, const ConditionBundle&, AttentionHooks*) const {
    return analytic_gmm_eps(prior_, z_t, schedule_.alpha_bar(t));
}

} // namespace diffedit
