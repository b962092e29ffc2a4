#pragma once

#include <optional>
#include <vector>

#include "diffedit/schedule.hpp"
#include "diffedit/tensor.hpp"

namespace diffedit {

/// Conditioning for one noise prediction. The null_* tokens form the
/// unconditional branch used by classifier-free guidance.
struct ConditionBundle {
    Tensor text_tokens;                      // [L_c x d], empty for unconditional models
    std::optional<Tensor> image_tokens;      // [L_im x d]
    Tensor null_text_tokens;
    std::optional<Tensor> null_image_tokens;
    double cfg_scale = 5.0;
    double gamma = 0.5;

    ConditionBundle unconditional() const;
};

struct LayerKV {
    Tensor k;
    Tensor v;
};

/// Self-attention instrumentation. With `capture` set the forward pass
/// appends each self-attention layer's own K/V; a non-empty `inject` supplies
/// extra rows concatenated onto that layer's keys and values.
struct AttentionHooks {
    bool capture = false;
    std::vector<LayerKV> captured;
    std::vector<LayerKV> inject;
};

class Denoiser {
public:
    virtual ~Denoiser() = default;

    virtual Tensor predict_eps(const Tensor& z_t, int t, const ConditionBundle& cond,
                               AttentionHooks* hooks = nullptr) const = 0;

    virtual bool has_attention() const { return false; }
    /// False when predictions ignore the condition, letting callers skip the CFG pass.
    virtual bool conditional() const { return false; }
};

Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, double scale);

/// Noise prediction with classifier-free guidance per cond.cfg_scale.
Tensor predict_eps_cfg(const Denoiser& model, const Tensor& z_t, int t, const ConditionBundle& cond,
                       AttentionHooks* hooks = nullptr);

/// Isotropic Gaussian mixture over flattened data vectors.
struct GmmPrior {
    std::vector<double> weights;
    Tensor means;  // [K x D]
    double std = 1.0;

    void validate() const;
    std::size_t components() const { return weights.size(); }
    std::size_t dim() const { return means.cols(); }
};

/// Exact epsilon of the diffused mixture at cumulative coefficient `alpha_bar`:
/// -sqrt(1 - a) * grad log q_a(z) with q_a = sum_k w_k N(sqrt(a) mu_k, (a s^2 + 1 - a) I).
Tensor analytic_gmm_eps(const GmmPrior& prior, const Tensor& z_t, double alpha_bar);
/// Posterior component responsibilities at `z_t` (log-sum-exp stabilized).
std::vector<double> gmm_responsibilities(const GmmPrior& prior, const Tensor& z_t, double alpha_bar);

/// Closed-form denoiser over a GmmPrior; ignores conditioning and has no attention.
class GmmDenoiser final : public Denoiser {
public:
    GmmDenoiser(GmmPrior prior, NoiseSchedule schedule);

    Tensor predict_eps(const Tensor& z_t, int t, const ConditionBundle& cond,
                       AttentionHooks* hooks = nullptr) const override;

    const GmmPrior& prior() const { return prior_; }

private:
    GmmPrior prior_;
    NoiseSchedule schedule_;
};

} // namespace diffedit
