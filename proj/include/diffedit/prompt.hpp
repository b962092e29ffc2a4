#pragma once

#include <cstdint>
#include <optional>

#include "diffedit/attention.hpp"
#include "diffedit/tiny_denoiser.hpp"

namespace diffedit {

struct ImageTokenizerConfig {
    std::size_t image_height = 32;
    std::size_t image_width = 32;
    std::size_t patch = 8;
    std::size_t width = 32;
    std::uint64_t seed = 1234;
};

/// Frozen image-token source: a fixed random linear projection of each
/// patch, preceded by one global token holding the mean of the patch tokens.
class ImageTokenizer {
public:
    explicit ImageTokenizer(const ImageTokenizerConfig& config = {});

    /// [patches + 1, width]; row 0 is the global token.
    Tensor tokenize(const Tensor& image) const;
    std::size_t token_count() const;

    const ImageTokenizerConfig& config() const { return config_; }
    const Tensor& projection() const { return projection_; }

private:
    ImageTokenizerConfig config_;
    Tensor projection_;  // [patch^2, width]
    Tensor bias_;        // [width], zero
};

struct QFormerConfig {
    std::size_t in_width = 32;  // tokenizer width
    std::size_t width = 32;     // denoiser attention width
    std::size_t queries = 8;
    std::size_t layers = 2;
    std::size_t ffn_width = 64;
    bool zero_output = true;
    std::uint64_t seed = 7;

    void validate() const;
};

/// Learnable queries compressing any number of image tokens into `queries`
/// prompt tokens. Each layer is query->token cross-attention plus a
/// feed-forward; there is no self-attention among the queries.
class QFormerEncoder {
public:
    explicit QFormerEncoder(const QFormerConfig& config = {});
    QFormerEncoder(const QFormerConfig& config, Bundle params);

    Var forward(Tape& tape, const BoundParams& p, Var image_tokens) const;
    Tensor encode(const Tensor& image_tokens) const;

    const QFormerConfig& config() const { return config_; }
    const Bundle& params() const { return params_; }
    Bundle& params() { return params_; }

    Bundle to_bundle() const;
    static QFormerEncoder from_bundle(const Bundle& bundle);

private:
    QFormerConfig config_;
    Bundle params_;
};

Tensor tokenize_image(const ImageTokenizer& tok, const Tensor& image);
Tensor qformer_forward(const QFormerEncoder& enc, const Tensor& image_tokens);

/// Full image-prompt path: tokenizer then QFormer.
Tensor encode_image_prompt(const QFormerEncoder& enc, const ImageTokenizer& tok, const Tensor& image);

/// Text + image-prompt conditioning. With a reference image its prompt
/// tokens are concatenated after the source's; the unconditional branch
/// uses the null label and zero-image prompts.
ConditionBundle prompt_condition(const TinyAttentionDenoiser& model, const QFormerEncoder& enc,
                                 const ImageTokenizer& tok, int label, const Tensor& image,
                                 const Tensor* reference, double gamma, double cfg_scale);

struct PromptTrainConfig {
    int steps = 6000;
    std::size_t batch = 32;
    double lr = 1e-3;
    double drop_prob = 0.1;
    double gamma = 1.0;
    double clip_norm = 0.0;
    std::uint64_t seed = 0;
};

/// SGD on the image-prompt conditioned epsilon loss; only the encoder
/// trains. With probability drop_prob the prompt image is replaced by zeros.
TrainResult train_prompt_encoder(QFormerEncoder& enc, const ImageTokenizer& tok,
                                 const TinyAttentionDenoiser& frozen, const std::vector<Sample>& data,
                                 const NoiseSchedule& schedule, const PromptTrainConfig& cfg,
                                 const ProgressFn& progress = nullptr);

double eval_prompt_loss(const QFormerEncoder& enc, const ImageTokenizer& tok, const TinyAttentionDenoiser& model,
                        const std::vector<Sample>& data, const NoiseSchedule& schedule,
                        const std::vector<NoiseDraw>& draws, double gamma);

} // namespace diffedit
