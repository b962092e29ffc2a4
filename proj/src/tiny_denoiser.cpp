#include "diffedit/tiny_denoiser.hpp"

#include <cmath>
#include <random>
#include <string>

#include "diffedit/error.hpp"

namespace diffedit {

void TinyDenoiserConfig::validate() const {
    if (patch == 0 || image_height % patch != 0 || image_width % patch != 0) {
        throw ConfigError("image " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                          " is not divisible into " + std::to_string(patch) + "-pixel patches");
    }
    if (width < 2 || width % 2 != 0) throw ConfigError("denoiser width must be even and >= 2");
    if (blocks == 0 || ffn_width == 0 || num_labels == 0) throw ConfigError("denoiser sizes must be positive");
}

Tensor patchify(const Tensor& image, std::size_t patch) {
    const std::size_t h = image.rows(), w = image.cols();
    if (patch == 0 || h % patch != 0 || w % patch != 0) {
        throw ConfigError("image " + shape_str(image.shape()) + " is not divisible into " + std::to_string(patch) +
                          "-pixel patches");
    }
    const std::size_t gh = h / patch, gw = w / patch;
    Tensor out({gh * gw, patch * patch});
    for (std::size_t pr = 0; pr < gh; ++pr)
        for (std::size_t pc = 0; pc < gw; ++pc)
            for (std::size_t i = 0; i < patch; ++i)
                for (std::size_t j = 0; j < patch; ++j)
                    out.at(pr * gw + pc, i * patch + j) = image.at(pr * patch + i, pc * patch + j);
    return out;
}

Tensor unpatchify(const Tensor& patches, std::size_t height, std::size_t width, std::size_t patch) {
    const std::size_t gw = width / patch;
    if (patches.rows() * patch * patch != height * width || patches.cols() != patch * patch) {
        throw DimensionError("unpatchify: " + shape_str(patches.shape()) + " does not tile " + std::to_string(height) +
                             "x" + std::to_string(width));
    }
    Tensor out({height, width});
    for (std::size_t k = 0; k < patches.rows(); ++k) {
        const std::size_t pr = k / gw, pc = k % gw;
        for (std::size_t i = 0; i < patch; ++i)
            for (std::size_t j = 0; j < patch; ++j)
                out.at(pr * patch + i, pc * patch + j) = patches.at(k, i * patch + j);
    }
    return out;
}

Tensor timestep_embedding(int t, std::size_t width) {
    const std::size_t half = width / 2;
    Tensor e({1, width});
    for (std::size_t i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        e[i] = std::sin(t * freq);
        e[i + half] = std::cos(t * freq);
    }
    return e;
}

namespace {

std::string blk(std::size_t b, const char* name) { return "b" + std::to_string(b) + "." + name; }

Bundle init_params(const TinyDenoiserConfig& c) {
    std::mt19937_64 rng(c.seed);
    const std::size_t d = c.width, pd = c.patch_dim(), f = c.ffn_width;
    auto w = [&](std::size_t in, std::size_t out) {
        return random_normal({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    };
    Bundle p;
    p["embed.w"] = w(pd, d);
    p["embed.b"] = Tensor({d}, 0.0);
    p["pos"] = random_normal({c.tokens(), d}, 0.1, rng);
    p["time.w"] = w(d, d);
    p["time.b"] = Tensor({d}, 0.0);
    p["label"] = random_normal({c.num_labels + 1, d}, 1.0, rng);
    for (std::size_t b = 0; b < c.blocks; ++b) {
        for (const char* n : {"self.q", "self.k", "self.v", "self.o", "cross.q", "cross.k", "cross.v", "cross.o"}) {
            p[blk(b, n)] = w(d, d);
        }
        p[blk(b, "ffn.w1")] = w(d, f);
        p[blk(b, "ffn.b1")] = Tensor({f}, 0.0);
        p[blk(b, "ffn.w2")] = w(f, d);
        p[blk(b, "ffn.b2")] = Tensor({d}, 0.0);
    }
    p["out.w"] = c.zero_output ? Tensor({d, pd}, 0.0) : w(d, pd);
    p["out.b"] = Tensor({pd}, 0.0);
    // Pixel skip: patches -> per-pixel outputs, modulated by a timestep gate.
    p["skip.w"] = w(pd, pd);
    p["skip.gate.w"] = c.zero_output ? Tensor({d, pd}, 0.0) : w(d, pd);
    p["skip.gate.b"] = Tensor({pd}, 0.0);
    return p;
}

} // namespace

TinyAttentionDenoiser::TinyAttentionDenoiser(const TinyDenoiserConfig& config) : config_(config) {
    config_.validate();
    params_ = init_params(config_);
}

TinyAttentionDenoiser::TinyAttentionDenoiser(const TinyDenoiserConfig& config, Bundle params)
    : config_(config), params_(std::move(params)) {
    config_.validate();
    Bundle expected = init_params(config_);
    for (const auto& [name, t] : expected) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("denoiser bundle lacks '" + name + "'");
        if (!it->second.same_shape(t)) {
            throw DimensionError("denoiser parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                                 ", expected " + shape_str(t.shape()));
        }
    }
}

Var TinyAttentionDenoiser::forward(Tape& tape, const BoundParams& p, const Tensor& z_t, int t, Var text_tokens,
                                   std::optional<Var> image_tokens, double gamma, AttentionHooks* hooks) const {
    const auto& c = config_;
    if (z_t.rows() != c.image_height || z_t.cols() != c.image_width) {
        throw DimensionError("latent " + shape_str(z_t.shape()) + " does not match denoiser input " +
                             std::to_string(c.image_height) + "x" + std::to_string(c.image_width));
    }
    if (text_tokens.value().cols() != c.width) {
        throw DimensionError("text tokens " + shape_str(text_tokens.shape()) + " do not match width " +
                             std::to_string(c.width));
    }
    if (image_tokens && image_tokens->value().cols() != c.width) {
        throw DimensionError("image tokens " + shape_str(image_tokens->shape()) + " do not match width " +
                             std::to_string(c.width));
    }
    if (hooks && !hooks->inject.empty() && hooks->inject.size() != c.blocks) {
        throw ConfigError("injected K/V for " + std::to_string(hooks->inject.size()) + " layers, model has " +
                          std::to_string(c.blocks));
    }

    Var x = tape.constant(patchify(z_t, c.patch));
    Var h = add(add_row(matmul(x, p("embed.w")), p("embed.b")), p("pos"));
    Var temb = gelu(add_row(matmul(tape.constant(timestep_embedding(t, c.width)), p("time.w")), p("time.b")));
    h = add_row(h, reshape(temb, {c.width}));

    for (std::size_t b = 0; b < c.blocks; ++b) {
        Var a = layer_norm_rows(h);
        Var q = matmul(a, p(blk(b, "self.q")));
        Var k = matmul(a, p(blk(b, "self.k")));
        Var v = matmul(a, p(blk(b, "self.v")));
        if (hooks && hooks->capture) hooks->captured.push_back(LayerKV{k.value(), v.value()});
        if (hooks && !hooks->inject.empty()) {
            const LayerKV& ext = hooks->inject[b];
            Var ks[] = {k, tape.constant(ext.k)};
            Var vs[] = {v, tape.constant(ext.v)};
            k = concat_rows(ks);
            v = concat_rows(vs);
        }
        h = add(h, matmul(attention(q, k, v), p(blk(b, "self.o"))));

        a = layer_norm_rows(h);
        Var cq = matmul(a, p(blk(b, "cross.q")));
        Var wk = p(blk(b, "cross.k"));
        Var wv = p(blk(b, "cross.v"));
        std::optional<Var> ik, iv;
        if (image_tokens) {
            ik = matmul(*image_tokens, wk);
            iv = matmul(*image_tokens, wv);
        }
        Var cross = fused_attention(cq, matmul(text_tokens, wk), matmul(text_tokens, wv), ik, iv,
                                    image_tokens ? gamma : 0.0);
        h = add(h, matmul(cross, p(blk(b, "cross.o"))));

        a = layer_norm_rows(h);
        Var ff = gelu(add_row(matmul(a, p(blk(b, "ffn.w1"))), p(blk(b, "ffn.b1"))));
        h = add(h, add_row(matmul(ff, p(blk(b, "ffn.w2"))), p(blk(b, "ffn.b2"))));
    }
    Var gate = add_row(matmul(temb, p("skip.gate.w")), p("skip.gate.b"));
    Var skip = mul_row(matmul(x, p("skip.w")), reshape(gate, {c.patch_dim()}));
    return add(add_row(matmul(h, p("out.w")), p("out.b")), skip);
}

Tensor TinyAttentionDenoiser::predict_eps(const Tensor& z_t, int t, const ConditionBundle& cond,
                                          AttentionHooks* hooks) const {
    Tape tape;
    BoundParams p(tape, params_, false);
    std::optional<Var> img;
    if (cond.image_tokens) img = tape.constant(*cond.image_tokens);
    Var out = forward(tape, p, z_t, t, tape.constant(cond.text_tokens), img, cond.gamma, hooks);
    return unpatchify(out.value(), config_.image_height, config_.image_width, config_.patch);
}

Tensor TinyAttentionDenoiser::label_tokens(int label) const {
    const Tensor& table = params_.at("label");
    const std::size_t row = label < 0 ? config_.num_labels : static_cast<std::size_t>(label);
    if (row > config_.num_labels) throw RangeError("label " + std::to_string(label) + " out of range");
    std::vector<double> data(table.values().begin() + static_cast<std::ptrdiff_t>(row * config_.width),
                             table.values().begin() + static_cast<std::ptrdiff_t>((row + 1) * config_.width));
    return Tensor({1, config_.width}, std::move(data));
}

ConditionBundle TinyAttentionDenoiser::condition(int label, double cfg_scale) const {
    ConditionBundle c;
    c.text_tokens = label_tokens(label);
    c.null_text_tokens = label_tokens(-1);
    c.cfg_scale = cfg_scale;
    return c;
}

Bundle TinyAttentionDenoiser::to_bundle() const {
    Bundle b = params_;
    const auto& c = config_;
    b["config"] = Tensor::vector({static_cast<double>(c.image_height), static_cast<double>(c.image_width),
                                  static_cast<double>(c.patch), static_cast<double>(c.width),
                                  static_cast<double>(c.ffn_width), static_cast<double>(c.blocks),
                                  static_cast<double>(c.num_labels)});
    return b;
}

TinyAttentionDenoiser TinyAttentionDenoiser::from_bundle(const Bundle& bundle) {
    const Tensor& cv = bundle_get(bundle, "config");
    if (cv.size() != 7) throw IoError("denoiser bundle has a malformed config record");
    TinyDenoiserConfig c;
    c.image_height = static_cast<std::size_t>(cv[0]);
    c.image_width = static_cast<std::size_t>(cv[1]);
    c.patch = static_cast<std::size_t>(cv[2]);
    c.width = static_cast<std::size_t>(cv[3]);
    c.ffn_width = static_cast<std::size_t>(cv[4]);
    c.blocks = static_cast<std::size_t>(cv[5]);
    c.num_labels = static_cast<std::size_t>(cv[6]);
    Bundle params = bundle;
    params.erase("config");
    return TinyAttentionDenoiser(c, std::move(params));
}

TrainResult train_denoiser(TinyAttentionDenoiser& model, const std::vector<Sample>& data,
                           const NoiseSchedule& schedule, const DenoiserTrainConfig& cfg, const ProgressFn& progress) {
    if (data.empty()) throw TrainingError("training dataset is empty");
    if (cfg.batch == 0) throw ConfigError("batch size must be positive");
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    std::uniform_int_distribution<int> pick_t(1, schedule.t_train());
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const std::size_t null_row = model.config().num_labels;

    TrainResult result;
    result.loss_curve.reserve(static_cast<std::size_t>(std::max(cfg.steps, 0)));
    for (int step = 0; step < cfg.steps; ++step) {
        Tape tape;
        BoundParams p(tape, model.params(), true);
        std::optional<Var> total;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            const Sample& s = data[pick(rng)];
            const int t = pick_t(rng);
            Tensor eps = random_normal(s.image.shape(), 1.0, rng);
            const bool drop = coin(rng) < cfg.label_drop;
            const std::size_t row = drop ? null_row : static_cast<std::size_t>(s.label);
            Var text = slice_rows(p("label"), row, 1);
            Tensor z = schedule.q_sample(s.image, t, eps);
            Var pred = model.forward(tape, p, z, t, text, std::nullopt, 0.0, nullptr);
            Var diff = sub(pred, tape.constant(patchify(eps, model.config().patch)));
            Var l = sum(mul(diff, diff));
            total = total ? add(*total, l) : l;
        }
        // Objective is the per-sample squared norm; the curve reports it per element.
        Var loss = scale(*total, 1.0 / static_cast<double>(cfg.batch));
        const double lv = loss.value().item() / static_cast<double>(data.front().image.size());
        if (!std::isfinite(lv)) throw TrainingError("denoiser loss is not finite at step " + std::to_string(step));
        Bundle grads = parameter_gradients(tape, loss, p);
        result.grad_norm.push_back(clip_gradients(grads, cfg.clip_norm));
        sgd_update(model.params(), grads, cfg.lr);
        result.loss_curve.push_back(lv);
        if (progress) progress(step, lv);
    }
    return result;
}

std::vector<NoiseDraw> make_noise_draws(const std::vector<Sample>& data, const NoiseSchedule& schedule,
                                        std::size_t count, std::uint64_t seed) {
    if (data.empty()) throw ConfigError("evaluation dataset is empty");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick_t(1, schedule.t_train());
    std::vector<NoiseDraw> draws;
    draws.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t idx = i % data.size();
        const int t = pick_t(rng);
        draws.push_back(NoiseDraw{idx, t, random_normal(data[idx].image.shape(), 1.0, rng)});
    }
    return draws;
}

double eval_denoiser_loss(const TinyAttentionDenoiser& model, const std::vector<Sample>& data,
                          const NoiseSchedule& schedule, const std::vector<NoiseDraw>& draws) {
    double total = 0.0;
    for (const auto& d : draws) {
        const Sample& s = data[d.index];
        ConditionBundle cond = model.condition(s.label);
        Tensor z = schedule.q_sample(s.image, d.t, d.eps);
        total += mean_squared_error(model.predict_eps(z, d.t, cond), d.eps);
    }
    return total / static_cast<double>(draws.size());
}

} // namespace diffedit
