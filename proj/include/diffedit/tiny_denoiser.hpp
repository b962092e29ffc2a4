#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "diffedit/attention.hpp"
#include "diffedit/data.hpp"
#include "diffedit/denoiser.hpp"
#include "diffedit/schedule.hpp"
#include "diffedit/tensor_io.hpp"

namespace diffedit {

struct TinyDenoiserConfig {
    std::size_t image_height = 32;
    std::size_t image_width = 32;
    std::size_t patch = 8;
    std::size_t width = 32;
    std::size_t ffn_width = 64;
    std::size_t blocks = 2;
    std::size_t num_labels = kBlobClasses;
    bool zero_output = true;
    std::uint64_t seed = 0;

    std::size_t tokens() const { return (image_height / patch) * (image_width / patch); }
    std::size_t patch_dim() const { return patch * patch; }
    void validate() const;
};

Tensor patchify(const Tensor& image, std::size_t patch);
Tensor unpatchify(const Tensor& patches, std::size_t height, std::size_t width, std::size_t patch);
Tensor timestep_embedding(int t, std::size_t width);

/// Patch-token transformer: each block runs self-attention, cross-attention
/// over the conditioning tokens (text and optional image prompt, fused with
/// weight gamma), then a GELU feed-forward, all pre-norm residual.
class TinyAttentionDenoiser final : public Denoiser {
public:
    explicit TinyAttentionDenoiser(const TinyDenoiserConfig& config);
    TinyAttentionDenoiser(const TinyDenoiserConfig& config, Bundle params);

    Tensor predict_eps(const Tensor& z_t, int t, const ConditionBundle& cond,
                       AttentionHooks* hooks = nullptr) const override;
    bool has_attention() const override { return true; }
    bool conditional() const override { return true; }

    /// Records the forward pass; parameters come from `p`, conditioning as tape values.
    Var forward(Tape& tape, const BoundParams& p, const Tensor& z_t, int t, Var text_tokens,
                std::optional<Var> image_tokens, double gamma, AttentionHooks* hooks) const;

    /// Embedding row for `label`; label < 0 selects the learned null token.
    Tensor label_tokens(int label) const;
    /// Text condition bundle for a class label, with the null label as its unconditional branch.
    ConditionBundle condition(int label, double cfg_scale = 5.0) const;

    const TinyDenoiserConfig& config() const { return config_; }
    const Bundle& params() const { return params_; }
    Bundle& params() { return params_; }

    Bundle to_bundle() const;
    static TinyAttentionDenoiser from_bundle(const Bundle& bundle);

private:
    TinyDenoiserConfig config_;
    Bundle params_;
};

struct DenoiserTrainConfig {
    int steps = 20000;
    std::size_t batch = 32;
    double lr = 1e-3;
    double label_drop = 0.1;
    double clip_norm = 500.0;  // global gradient-norm cap, 0 = off
    std::uint64_t seed = 0;
};

struct TrainResult {
    std::vector<double> loss_curve;  // batch loss per step, divided by the element count
    std::vector<double> grad_norm;   // global gradient norm per step, before clipping
};

using ProgressFn = std::function<void(int step, double loss)>;

/// Plain SGD on the epsilon-prediction loss with uniform t and Gaussian noise.
TrainResult train_denoiser(TinyAttentionDenoiser& model, const std::vector<Sample>& data,
                           const NoiseSchedule& schedule, const DenoiserTrainConfig& cfg,
                           const ProgressFn& progress = nullptr);

/// One fixed draw of (t, eps) per evaluation item, shared across models for paired comparisons.
struct NoiseDraw {
    std::size_t index;
    int t;
    Tensor eps;
};
std::vector<NoiseDraw> make_noise_draws(const std::vector<Sample>& data, const NoiseSchedule& schedule,
                                        std::size_t count, std::uint64_t seed);

/// Held-out epsilon loss of the text-conditioned model.
double eval_denoiser_loss(const TinyAttentionDenoiser& model, const std::vector<Sample>& data,
                          const NoiseSchedule& schedule, const std::vector<NoiseDraw>& draws);

} // namespace diffedit
