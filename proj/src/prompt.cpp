#include "diffedit/prompt.hpp"

#include <cmath>
#include <random>

#include "diffedit/error.hpp"

namespace diffedit {

ImageTokenizer::ImageTokenizer(const ImageTokenizerConfig& config) : config_(config) {
    const auto& c = config_;
    if (c.patch == 0 || c.image_height % c.patch != 0 || c.image_width % c.patch != 0) {
        throw ConfigError("tokenizer image " + std::to_string(c.image_height) + "x" + std::to_string(c.image_width) +
                          " is not divisible into " + std::to_string(c.patch) + "-pixel patches");
    }
    if (c.width == 0) throw ConfigError("tokenizer width must be positive");
    std::mt19937_64 rng(c.seed);
    projection_ = random_normal({c.patch * c.patch, c.width}, 1.0 / static_cast<double>(c.patch), rng);
    bias_ = Tensor({c.width}, 0.0);
}

std::size_t ImageTokenizer::token_count() const {
    return (config_.image_height / config_.patch) * (config_.image_width / config_.patch) + 1;
}

Tensor ImageTokenizer::tokenize(const Tensor& image) const {
    if (image.rank() != 2 || image.rows() != config_.image_height || image.cols() != config_.image_width) {
        throw ConfigError("tokenizer expects a " + std::to_string(config_.image_height) + "x" +
                          std::to_string(config_.image_width) + " image, got " + shape_str(image.shape()));
    }
    Tensor patches = matmul(patchify(image, config_.patch), projection_);
    const std::size_t n = patches.rows(), w = config_.width;
    Tensor out({n + 1, w});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            const double v = patches.at(i, j) + bias_[j];
            out.at(i + 1, j) = v;
            out.at(0, j) += v / static_cast<double>(n);
        }
    }
    return out;
}

void QFormerConfig::validate() const {
    if (in_width == 0 || width == 0 || queries == 0 || layers == 0 || ffn_width == 0) {
        throw ConfigError("QFormer sizes must be positive");
    }
}

namespace {

std::string lyr(std::size_t l, const char* name) { return "l" + std::to_string(l) + "." + name; }

Bundle init_qformer(const QFormerConfig& c) {
    std::mt19937_64 rng(c.seed);
    const std::size_t d = c.width;
    auto w = [&](std::size_t in, std::size_t out) {
        return random_normal({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    };
    Bundle p;
    p["embed.w"] = w(c.in_width, d);
    p["embed.b"] = Tensor({d}, 0.0);
    p["queries"] = random_normal({c.queries, d}, 1.0, rng);
    for (std::size_t l = 0; l < c.layers; ++l) {
        for (const char* n : {"attn.q", "attn.k", "attn.v", "attn.o"}) p[lyr(l, n)] = w(d, d);
        p[lyr(l, "ffn.w1")] = w(d, c.ffn_width);
        p[lyr(l, "ffn.b1")] = Tensor({c.ffn_width}, 0.0);
        p[lyr(l, "ffn.w2")] = w(c.ffn_width, d);
        p[lyr(l, "ffn.b2")] = Tensor({d}, 0.0);
    }
    p["out.w"] = c.zero_output ? Tensor({d, d}, 0.0) : w(d, d);
    p["out.b"] = Tensor({d}, 0.0);
    return p;
}

} // namespace

QFormerEncoder::QFormerEncoder(const QFormerConfig& config) : config_(config) {
    config_.validate();
    params_ = init_qformer(config_);
}

QFormerEncoder::QFormerEncoder(const QFormerConfig& config, Bundle params)
    : config_(config), params_(std::move(params)) {
    config_.validate();
    for (const auto& [name, t] : init_qformer(config_)) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("encoder bundle lacks '" + name + "'");
        if (!it->second.same_shape(t)) {
            throw DimensionError("encoder parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                                 ", expected " + shape_str(t.shape()));
        }
    }
}

Var QFormerEncoder::forward(Tape& tape, const BoundParams& p, Var image_tokens) const {
    const auto& c = config_;
    if (image_tokens.value().rank() != 2 || image_tokens.value().cols() != c.in_width) {
        throw DimensionError("image tokens " + shape_str(image_tokens.shape()) + " do not match QFormer input width " +
                             std::to_string(c.in_width));
    }
    Var x = layer_norm_rows(add_row(matmul(image_tokens, p("embed.w")), p("embed.b")));
    Var q = p("queries");
    for (std::size_t l = 0; l < c.layers; ++l) {
        Var qn = layer_norm_rows(q);
        Var att = attention(matmul(qn, p(lyr(l, "attn.q"))), matmul(x, p(lyr(l, "attn.k"))),
                            matmul(x, p(lyr(l, "attn.v"))));
        q = add(q, matmul(att, p(lyr(l, "attn.o"))));
        Var ff = gelu(add_row(matmul(layer_norm_rows(q), p(lyr(l, "ffn.w1"))), p(lyr(l, "ffn.b1"))));
        q = add(q, add_row(matmul(ff, p(lyr(l, "ffn.w2"))), p(lyr(l, "ffn.b2"))));
    }
    (void)tape;
    return add_row(matmul(q, p("out.w")), p("out.b"));
}

Tensor QFormerEncoder::encode(const Tensor& image_tokens) const {
    Tape tape;
    BoundParams p(tape, params_, false);
    return forward(tape, p, tape.constant(image_tokens)).value();
}

Bundle QFormerEncoder::to_bundle() const {
    Bundle b = params_;
    const auto& c = config_;
    b["config"] = Tensor::vector({static_cast<double>(c.in_width), static_cast<double>(c.width),
                                  static_cast<double>(c.queries), static_cast<double>(c.layers),
                                  static_cast<double>(c.ffn_width)});
    return b;
}

QFormerEncoder QFormerEncoder::from_bundle(const Bundle& bundle) {
    const Tensor& cv = bundle_get(bundle, "config");
    if (cv.size() != 5) throw IoError("encoder bundle has a malformed config record");
    QFormerConfig c;
    c.in_width = static_cast<std::size_t>(cv[0]);
    c.width = static_cast<std::size_t>(cv[1]);
    c.queries = static_cast<std::size_t>(cv[2]);
    c.layers = static_cast<std::size_t>(cv[3]);
    c.ffn_width = static_cast<std::size_t>(cv[4]);
    Bundle params = bundle;
    params.erase("config");
    return QFormerEncoder(c, std::move(params));
}

Tensor tokenize_image(const ImageTokenizer& tok, const Tensor& image) { return tok.tokenize(image); }

Tensor qformer_forward(const QFormerEncoder& enc, const Tensor& image_tokens) { return enc.encode(image_tokens); }

Tensor encode_image_prompt(const QFormerEncoder& enc, const ImageTokenizer& tok, const Tensor& image) {
    return enc.encode(tok.tokenize(image));
}

namespace {

Tensor stack_rows(const Tensor& a, const Tensor& b) {
    std::vector<double> data = a.values();
    data.insert(data.end(), b.values().begin(), b.values().end());
    return Tensor({a.rows() + b.rows(), a.cols()}, std::move(data));
}

} // namespace

ConditionBundle prompt_condition(const TinyAttentionDenoiser& model, const QFormerEncoder& enc,
                                 const ImageTokenizer& tok, int label, const Tensor& image, const Tensor* reference,
                                 double gamma, double cfg_scale) {
    ConditionBundle c = model.condition(label, cfg_scale);
    c.gamma = gamma;
    Tensor zero_prompt = encode_image_prompt(enc, tok, Tensor(image.shape(), 0.0));
    Tensor prompt = encode_image_prompt(enc, tok, image);
    if (reference) {
        prompt = stack_rows(prompt, encode_image_prompt(enc, tok, *reference));
        zero_prompt = stack_rows(zero_prompt, zero_prompt);
    }
    c.image_tokens = std::move(prompt);
    c.null_image_tokens = std::move(zero_prompt);
    return c;
}

TrainResult train_prompt_encoder(QFormerEncoder& enc, const ImageTokenizer& tok, const TinyAttentionDenoiser& frozen,
                                 const std::vector<Sample>& data, const NoiseSchedule& schedule,
                                 const PromptTrainConfig& cfg, const ProgressFn& progress) {
    if (data.empty()) throw TrainingError("prompt training dataset is empty");
    if (cfg.batch == 0) throw ConfigError("batch size must be positive");
    if (enc.config().width != frozen.config().width) {
        throw DimensionError("encoder width " + std::to_string(enc.config().width) + " does not match denoiser width " +
                             std::to_string(frozen.config().width));
    }
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    std::uniform_int_distribution<int> pick_t(1, schedule.t_train());
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const std::size_t patch = frozen.config().patch;

    TrainResult result;
    for (int step = 0; step < cfg.steps; ++step) {
        Tape tape;
        BoundParams dp(tape, frozen.params(), false);
        BoundParams ep(tape, enc.params(), true);
        std::optional<Var> total;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            const Sample& s = data[pick(rng)];
            const int t = pick_t(rng);
            Tensor eps = random_normal(s.image.shape(), 1.0, rng);
            const bool drop = coin(rng) < cfg.drop_prob;
            Tensor prompt_image = drop ? Tensor(s.image.shape(), 0.0) : s.image;
            Var c_im = enc.forward(tape, ep, tape.constant(tok.tokenize(prompt_image)));
            Var text = tape.constant(frozen.label_tokens(s.label));
            Tensor z = schedule.q_sample(s.image, t, eps);
            Var pred = frozen.forward(tape, dp, z, t, text, c_im, cfg.gamma, nullptr);
            Var diff = sub(pred, tape.constant(patchify(eps, patch)));
            Var l = sum(mul(diff, diff));
            total = total ? add(*total, l) : l;
        }
        Var loss = scale(*total, 1.0 / static_cast<double>(cfg.batch));
        const double lv = loss.value().item() / static_cast<double>(data.front().image.size());
        if (!std::isfinite(lv)) throw TrainingError("prompt loss is not finite at step " + std::to_string(step));
        Bundle grads = parameter_gradients(tape, loss, ep);
        result.grad_norm.push_back(clip_gradients(grads, cfg.clip_norm));
        sgd_update(enc.params(), grads, cfg.lr);
        result.loss_curve.push_back(lv);
        if (progress) progress(step, lv);
    }
    return result;
}

double eval_prompt_loss(const QFormerEncoder& enc, const ImageTokenizer& tok, const TinyAttentionDenoiser& model,
                        const std::vector<Sample>& data, const NoiseSchedule& schedule,
                        const std::vector<NoiseDraw>& draws, double gamma) {
    double total = 0.0;
    for (const auto& d : draws) {
        const Sample& s = data[d.index];
        ConditionBundle cond = model.condition(s.label);
        cond.gamma = gamma;
        cond.image_tokens = encode_image_prompt(enc, tok, s.image);
        Tensor z = schedule.q_sample(s.image, d.t, d.eps);
        total += mean_squared_error(model.predict_eps(z, d.t, cond), d.eps);
    }
    return total / static_cast<double>(draws.size());
}

} // namespace diffedit
