#include "diffedit/verify.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <random>

#include "diffedit/attention.hpp"
#include "diffedit/error.hpp"
#include "diffedit/prompt.hpp"
#include "diffedit/sampler.hpp"
#include "diffedit/tape.hpp"

namespace diffedit {

bool SuiteReport::pass() const {
    if (checks.empty()) return false;
    for (const auto& c : checks)
        if (!c.pass) return false;
    return true;
}

Json SuiteReport::to_json() const {
    Json arr = Json::array();
    for (const auto& c : checks) {
        arr.push_back({{"name", c.name}, {"value", c.value}, {"threshold", c.threshold}, {"relation", c.relation},
                       {"pass", c.pass}});
    }
    return {{"suite", suite}, {"pass", pass()}, {"seconds", seconds}, {"checks", arr}};
}

namespace {

Check less(std::string name, double value, double threshold) {
    return {std::move(name), value, threshold, "<", value < threshold};
}
Check at_most(std::string name, double value, double threshold) {
    return {std::move(name), value, threshold, "<=", value <= threshold};
}
Check at_least(std::string name, double value, double threshold) {
    return {std::move(name), value, threshold, ">=", value >= threshold};
}
Check equal(std::string name, double value, double threshold) {
    return {std::move(name), value, threshold, "==", value == threshold};
}

Tensor randn(Shape shape, double std, std::mt19937_64& rng) { return random_normal(std::move(shape), std, rng); }

double max_abs_diff(const Tensor& a, const Tensor& b) { return max_abs(a - b); }

double rel_err(const Tensor& got, const Tensor& want) {
    return std::sqrt(squared_norm(got - want)) / std::max(std::sqrt(squared_norm(want)), 1e-8);
}

void note(const VerifyOptions& o, const std::string& msg) {
    if (o.log) o.log(msg);
}

// ---- limits

std::vector<Check> suite_limits(const VerifyOptions&) {
    NoiseSchedule s;
    const auto& ts = s.timesteps();
    double max_zero = 0.0, max_ddpm = 0.0, max_lin = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i], tp = s.prev_timestep(i);
        max_zero = std::max(max_zero, std::abs(s.sigma(t, tp, 0.0)));
        max_ddpm = std::max(max_ddpm, std::abs(s.sigma(t, tp, 1.0) - s.ddpm_posterior_std(t, tp)));
        max_lin = std::max(max_lin, std::abs(s.sigma(t, tp, 0.4) - 0.4 * s.sigma(t, tp, 1.0)));
    }
    return {equal("sigma(eta=0) max", max_zero, 0.0), at_most("|sigma(eta=1) - ddpm std| max", max_ddpm, 1e-12),
            at_most("sigma linearity in eta", max_lin, 1e-15)};
}

// ---- inverse

std::vector<Check> suite_inverse(const VerifyOptions& o) {
    NoiseSchedule s;
    const auto& ts = s.timesteps();
    std::mt19937_64 rng(o.seed + 11);
    std::uniform_int_distribution<std::size_t> pick(0, ts.size() - 1);
    double step_err = 0.0, rollback_err = 0.0;
    for (int k = 0; k < 100; ++k) {
        const std::size_t i = pick(rng);
        const int t = ts[i], tp = s.prev_timestep(i);
        Tensor z = randn({8, 8}, 1.0, rng), eps = randn({8, 8}, 1.0, rng);
        Tensor prev = ddim_step(s, z, eps, t, tp, 0.0);
        step_err = std::max(step_err, max_abs_diff(ddim_invert_step(s, prev, eps, t, tp), z));
        rollback_err = std::max(rollback_err, max_abs_diff(time_travel_rollback(s, prev, eps, t, tp), z));
    }
    return {at_most("invert(step(z)) - z max", step_err, 1e-12),
            at_most("rollback(step(z)) - z max", rollback_err, 1e-12)};
}

// ---- oracle

double gmm_log_density(const GmmPrior& p, const Tensor& z, double a) {
    const double v = a * p.std * p.std + 1.0 - a;
    const std::size_t D = p.dim();
    std::vector<double> logs;
    for (std::size_t k = 0; k < p.components(); ++k) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < D; ++j) {
            double d = z[j] - std::sqrt(a) * p.means.at(k, j);
            d2 += d * d;
        }
        logs.push_back(std::log(p.weights[k]) - 0.5 * d2 / v - 0.5 * D * std::log(2.0 * M_PI * v));
    }
    double m = *std::max_element(logs.begin(), logs.end()), acc = 0.0;
    for (double l : logs) acc += std::exp(l - m);
    return m + std::log(acc);
}

std::vector<Check> suite_oracle(const VerifyOptions& o) {
    NoiseSchedule s;
    std::mt19937_64 rng(o.seed + 23);
    GmmPrior p;
    p.weights = {0.2, 0.5, 0.3};
    p.means = randn({3, 4}, 1.0, rng);
    p.std = 0.7;
    std::uniform_int_distribution<int> pick_t(1, s.t_train());
    const double h = 1e-5;
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
        const int t = pick_t(rng);
        const double a = s.alpha_bar(t);
        Tensor z = randn({4}, 1.5, rng);
        Tensor fd({4});
        for (std::size_t j = 0; j < 4; ++j) {
            Tensor zp = z, zm = z;
            zp[j] += h;
            zm[j] -= h;
            fd[j] = -std::sqrt(1.0 - a) * (gmm_log_density(p, zp, a) - gmm_log_density(p, zm, a)) / (2.0 * h);
        }
        worst = std::max(worst, rel_err(analytic_gmm_eps(p, z, a), fd));
    }
    return {less("analytic eps vs finite-difference score, max rel err", worst, 1e-5)};
}

// ---- marginals

std::vector<Check> suite_marginals(const VerifyOptions& o) {
    NoiseSchedule s;
    GmmPrior p;
    p.weights = {1.0};
    p.means = Tensor({1, 2}, std::vector<double>{0.5, -0.5});
    p.std = 1.0;
    GmmDenoiser model(p, s);
    ConditionBundle cond;
    std::mt19937_64 rng(o.seed + 37);
    const int N = 10000;
    double m0 = 0, m1 = 0, s00 = 0, s11 = 0, s01 = 0;
    std::vector<std::pair<double, double>> xs;
    xs.reserve(N);
    for (int i = 0; i < N; ++i) {
        Tensor x = reconstruct(randn({1, 2}, 1.0, rng), cond, model, s);
        xs.emplace_back(x[0], x[1]);
        m0 += x[0];
        m1 += x[1];
    }
    m0 /= N;
    m1 /= N;
    for (auto [a, b] : xs) {
        s00 += (a - m0) * (a - m0);
        s11 += (b - m1) * (b - m1);
        s01 += (a - m0) * (b - m1);
    }
    s00 /= N - 1;
    s11 /= N - 1;
    s01 /= N - 1;
    const double var = p.std * p.std;
    return {at_most("|mean_0 - mu_0|", std::abs(m0 - 0.5), 0.05), at_most("|mean_1 - mu_1|", std::abs(m1 + 0.5), 0.05),
            at_most("cov_00 rel err", std::abs(s00 - var) / var, 0.05),
            at_most("cov_11 rel err", std::abs(s11 - var) / var, 0.05),
            at_most("|cov_01| / s^2", std::abs(s01) / var, 0.05)};
}

// ---- roundtrip

std::vector<Check> suite_roundtrip(const VerifyOptions& o) {
    NoiseSchedule s;
    GmmPrior p = blob_move_prior();
    GmmDenoiser model(p, s);
    ConditionBundle cond;
    std::mt19937_64 rng(o.seed + 41);
    std::uniform_int_distribution<std::size_t> pick(0, p.components() - 1);
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) {
        const std::size_t c = pick(rng);
        Tensor x0({32, 32});
        for (std::size_t j = 0; j < x0.size(); ++j) x0[j] = p.means.at(c, j);
        x0 += randn({32, 32}, p.std, rng);
        Tensor rec = reconstruct(invert(x0, nullptr, cond, model, s).z_T, cond, model, s);
        worst = std::max(worst, squared_norm(rec - x0) / squared_norm(x0));
    }
    return {less("invert->reconstruct relative MSE, worst of 20", worst, 1e-2)};
}

// ---- gradcheck

double fd_bundle_check(Bundle& params, const std::function<double()>& f, const Bundle& analytic, double h,
                       std::string& worst_name) {
    double worst = 0.0;
    for (auto& [name, tensor] : params) {
        auto it = analytic.find(name);
        if (it == analytic.end()) continue;
        Tensor fd(tensor.shape());
        for (std::size_t i = 0; i < tensor.size(); ++i) {
            const double orig = tensor[i];
            tensor[i] = orig + h;
            const double up = f();
            tensor[i] = orig - h;
            const double down = f();
            tensor[i] = orig;
            fd[i] = (up - down) / (2.0 * h);
        }
        const double e = rel_err(it->second, fd);
        if (e > worst) {
            worst = e;
            worst_name = name;
        }
    }
    return worst;
}

void perturb(Bundle& b, double std, std::mt19937_64& rng) {
    for (auto& [_, t] : b) t += randn(t.shape(), std, rng);
}

MemoryBank random_bank(int t, Shape shape, std::mt19937_64& rng, bool with_ref) {
    MemoryBank bank;
    BankEntry e;
    e.z_gud = randn(shape, 1.0, rng);
    if (with_ref) e.z_ref = randn(shape, 1.0, rng);
    bank.put(t, std::move(e));
    return bank;
}

std::vector<Check> suite_gradcheck(const VerifyOptions& o) {
    const double h = 1e-5;
    std::mt19937_64 rng(o.seed + 53);
    std::vector<Check> out;

    // Energies on a 16x16 latent.
    {
        const int t = 500;
        MemoryBank bank = random_bank(t, {16, 16}, rng, true);
        Tensor z = randn({16, 16}, 1.0, rng);
        for (const EditSpec& spec : {make_move_spec(16, 5, 5, 10, 9, 3.0), make_paste_spec(16, 4, 4, 11, 10, 2.5)}) {
            Bundle params{{"z", z}};
            for (int which = 0; which < 2; ++which) {
                auto energy = [&] {
                    return which == 0 ? energy_edit(params["z"], bank, spec, t)
                                      : energy_content(params["z"], bank, spec, t);
                };
                EnergyValue ev = which == 0 ? energy_edit_with_grad(z, bank, spec, t)
                                            : energy_content_with_grad(z, bank, spec, t);
                std::string worst;
                double e = fd_bundle_check(params, energy, Bundle{{"z", ev.grad}}, h, worst);
                out.push_back(less(std::string(which == 0 ? "energy_edit" : "energy_content") + " grad (" +
                                       to_string(spec.task) + ")",
                                   e, 1e-4));
            }
        }
    }

    // Denoiser and prompt encoder parameters on a width-8, 2-token model.
    {
        TinyDenoiserConfig dc;
        dc.image_height = 4;
        dc.image_width = 8;
        dc.patch = 4;
        dc.width = 8;
        dc.ffn_width = 16;
        dc.zero_output = false;
        TinyAttentionDenoiser model(dc);
        perturb(model.params(), 0.3, rng);
        ImageTokenizer tok(ImageTokenizerConfig{4, 8, 4, 8, 5});
        QFormerConfig qc;
        qc.in_width = 8;
        qc.width = 8;
        qc.queries = 3;
        qc.ffn_width = 16;
        qc.zero_output = false;
        QFormerEncoder enc(qc);
        perturb(enc.params(), 0.3, rng);
        Tensor z = randn({4, 8}, 1.0, rng), img = randn({4, 8}, 1.0, rng);
        Tensor weights = randn({2, 16}, 1.0, rng);
        const int t = 321;
        const Tensor text = model.label_tokens(1);
        const Tensor tokens = tok.tokenize(img);

        auto build = [&](Tape& tape, const BoundParams& dp, const BoundParams& ep) {
            Var c_im = enc.forward(tape, ep, tape.constant(tokens));
            Var pred = model.forward(tape, dp, z, t, tape.constant(text), c_im, 0.7, nullptr);
            return sum(mul(pred, tape.constant(weights)));
        };
        auto value = [&] {
            Tape tape;
            BoundParams dp(tape, model.params(), false), ep(tape, enc.params(), false);
            return build(tape, dp, ep).value().item();
        };
        Tape tape;
        BoundParams dp(tape, model.params(), true), ep(tape, enc.params(), true);
        Var loss = build(tape, dp, ep);
        Bundle gd = parameter_gradients(tape, loss, dp);
        Tape tape2;
        BoundParams dp2(tape2, model.params(), true), ep2(tape2, enc.params(), true);
        Bundle ge = parameter_gradients(tape2, build(tape2, dp2, ep2), ep2);
        std::string wd, we;
        double ed = fd_bundle_check(model.params(), value, gd, h, wd);
        double ee = fd_bundle_check(enc.params(), value, ge, h, we);
        out.push_back(less("denoiser parameter grads, worst tensor " + wd, ed, 1e-4));
        out.push_back(less("prompt encoder parameter grads, worst tensor " + we, ee, 1e-4));
    }
    return out;
}

// ---- sde

std::vector<Check> suite_sde(const VerifyOptions& o) {
    NoiseSchedule s;
    std::mt19937_64 rng(o.seed + 67);
    const std::size_t i = 5;
    const int t = s.timesteps()[i], tp = s.prev_timestep(i);
    Tensor z = randn({8, 8}, 1.0, rng), eps = randn({8, 8}, 1.0, rng);
    Tensor mask({8, 8}, 0.0);
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 4; ++c) mask.at(r, c) = 1.0;
    const Tensor det = ddim_step(s, z, eps, t, tp, 0.0);
    const int N = 10000;
    Tensor m1(z.shape(), 0.0), m2(z.shape(), 0.0);
    Rng draw(o.seed + 68);
    for (int k = 0; k < N; ++k) {
        Tensor d = regional_sde_step(s, z, eps, t, tp, mask, 0.4, 0.2, true, draw).z_prev - det;
        m1 += d;
        m2 += d * d;
    }
    const double sin = s.sigma(t, tp, 0.4), sout = s.sigma(t, tp, 0.2);
    double worst_in = 0.0, worst_out = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
        const double mean = m1[j] / N;
        const double sd = std::sqrt((m2[j] - N * mean * mean) / (N - 1));
        // Each branch's sigma scales the same draw; the deterministic part is shared.
        if (mask[j] == 1.0) {
            worst_in = std::max(worst_in, std::abs(sd / sin - 1.0));
        } else {
            worst_out = std::max(worst_out, std::abs(sd / sout - 1.0));
        }
    }
    std::size_t mismatches = 0;
    for (int k = 0; k < 200; ++k) {
        Tensor out = regional_sde_step(s, z, eps, t, tp, mask, 0.4, 0.0, true, draw).z_prev;
        for (std::size_t j = 0; j < z.size(); ++j)
            if (mask[j] == 0.0 && out[j] != det[j]) ++mismatches;
    }
    std::size_t ode_mismatch = 0;
    Tensor ode = regional_sde_step(s, z, eps, t, tp, mask, 0.4, 0.2, false, draw).z_prev;
    for (std::size_t j = 0; j < z.size(); ++j)
        if (ode[j] != det[j]) ++ode_mismatch;
    return {at_most("inside std rel err vs sigma(eta1)", worst_in, 0.05),
            at_most("outside std rel err vs sigma(eta2)", worst_out, 0.05),
            equal("eta2=0 outside entries differing from the ODE step", static_cast<double>(mismatches), 0.0),
            equal("outside tau entries differing from the ODE step", static_cast<double>(ode_mismatch), 0.0)};
}

// ---- masking

std::vector<Check> suite_masking(const VerifyOptions& o) {
    std::mt19937_64 rng(o.seed + 79);
    const int t = 400;
    MemoryBank bank = random_bank(t, {16, 16}, rng, false);
    Tensor z = randn({16, 16}, 1.0, rng);
    EditSpec spec = make_move_spec(16, 5, 5, 10, 10, 3.0);
    // Soft values inside the support exercise the blend; the support itself is unchanged.
    for (std::size_t j = 0; j < spec.mask.size(); ++j)
        if (spec.mask[j] > 0.0 && j % 3 == 0) spec.mask[j] = 0.5;
    EnergyReport rep = regional_gradient(z, bank, spec, t);
    Tensor content = normalize_max(energy_content_with_grad(z, bank, spec, t).grad);
    Tensor edit = normalize_max(energy_edit_with_grad(z, bank, spec, t).grad);
    std::size_t outside_bad = 0, blend_bad = 0;
    for (std::size_t j = 0; j < z.size(); ++j) {
        const double m = spec.mask[j];
        if (m == 0.0 && rep.grad[j] != content[j]) ++outside_bad;
        if (m > 0.0 && m < 1.0 && std::abs(rep.grad[j] - (m * edit[j] + (1 - m) * content[j])) > 1e-15) ++blend_bad;
    }
    EditSpec all = spec;
    all.mask = Tensor(spec.mask.shape(), 1.0);
    EnergyReport rep_all = regional_gradient(z, bank, all, t);
    std::size_t all_bad = 0;
    for (std::size_t j = 0; j < z.size(); ++j)
        if (rep_all.grad[j] != edit[j]) ++all_bad;
    return {equal("outside-support entries differing from content-only gradient", static_cast<double>(outside_bad), 0),
            equal("soft entries off the convex blend", static_cast<double>(blend_bad), 0),
            equal("m=1 entries differing from edit-only gradient", static_cast<double>(all_bad), 0)};
}

// ---- fused

std::vector<Check> suite_fused(const VerifyOptions& o) {
    std::mt19937_64 rng(o.seed + 83);
    Tensor q = randn({5, 8}, 1.0, rng), k1 = randn({3, 8}, 1.0, rng), v1 = randn({3, 8}, 1.0, rng);
    Tensor k2 = randn({7, 8}, 1.0, rng), v2 = randn({7, 8}, 1.0, rng);
    Tape tape;
    Tensor single = attention(tape.constant(q), tape.constant(k1), tape.constant(v1)).value();
    Tensor g0 = fused_attention(q, k1, v1, k2, v2, 0.0);
    Tensor g1 = fused_attention(q, k1, v1, k2, v2, 1.0);
    const double gamma = 0.37;
    Tensor gg = fused_attention(q, k1, v1, k2, v2, gamma);
    const double lin = max_abs_diff(gg - g0, gamma * (g1 - g0));
    Tensor one = Tensor::matrix({{1.0}});
    Tensor sing = fused_attention(one, one, one, one, Tensor::matrix({{2.0}}), 0.5);
    Tensor dup = fused_attention(q, k1, v1, k1, v1, 1.0);
    return {equal("gamma=0 vs single-branch max diff", max_abs_diff(g0, single), 0.0),
            at_most("linearity in gamma max diff", lin, 1e-12),
            at_most("singleton V'=1 V''=2 gamma=0.5 error vs 2", std::abs(sing.item() - 2.0), 1e-15),
            at_most("duplicated branch vs 2x single", max_abs_diff(dup, 2.0 * single), 1e-12)};
}

// ---- blobmove

std::vector<Check> suite_blobmove(const VerifyOptions& o) {
    NoiseSchedule s;
    GmmDenoiser model(blob_move_prior(), s);
    ConditionBundle cond;
    std::size_t ok = 0;
    double worst_ratio = 0.0;
    for (std::size_t k = 0; k < o.blob_runs; ++k) {
        BlobMoveCase c = make_blob_move_case(o.seed + 100 + k);
        SamplerConfig cfg;
        cfg.rng_seed = o.seed + k;
        EditResult r = run_edit(c.source, nullptr, c.spec, cond, model, s, cfg);
        MoveMetrics m = move_metrics(r.image, c);
        ok += m.pass();
        worst_ratio = std::max(worst_ratio, m.out_mask_mse / m.in_mask_mse);
        note(o, "run " + std::to_string(k) + ": centroid error " + std::to_string(m.centroid_error));
    }
    BlobMoveCase c = make_blob_move_case(o.seed + 100);
    EditSpec id;
    id.mask = Tensor(c.source.shape(), 0.0);
    SamplerConfig cfg;
    Inversion inv = invert(c.source, nullptr, cond, model, s);
    Tensor edited = run_edit(inv, id, cond, model, s, cfg).image;
    ConditionBundle rc = cond;
    rc.cfg_scale = cfg.cfg_scale;
    Tensor base = reconstruct(inv.z_T, rc, model, s);
    return {at_least("fraction of runs within 1.5 px and out/in MSE < 0.1",
                     static_cast<double>(ok) / static_cast<double>(o.blob_runs), 0.9),
            less("worst out-of-mask / in-mask MSE", worst_ratio, 0.1),
            equal("identity edit vs reconstruction max diff", max_abs_diff(edited, base), 0.0)};
}

// ---- training

std::vector<Check> suite_training(const VerifyOptions& o) {
    NoiseSchedule s;
    auto train = generate_blobs(1000, 32, o.seed + 1);
    auto held = generate_blobs(200, 32, o.seed + 2);
    auto draws = make_noise_draws(held, s, 400, o.seed + 3);
    TinyDenoiserConfig dc;
    dc.seed = o.seed;
    TinyAttentionDenoiser model(dc);
    const double init = eval_denoiser_loss(model, held, s, draws);
    DenoiserTrainConfig tc;
    tc.steps = o.denoiser_steps;
    tc.seed = o.seed + 4;
    train_denoiser(model, train, s, tc, [&](int step, double loss) {
        if (step % 1000 == 0) note(o, "denoiser step " + std::to_string(step) + " loss " + std::to_string(loss));
    });
    const double trained = eval_denoiser_loss(model, held, s, draws);

    ImageTokenizer tok;
    QFormerEncoder enc;
    PromptTrainConfig pc;
    pc.steps = o.prompt_steps;
    pc.seed = o.seed + 5;
    train_prompt_encoder(enc, tok, model, train, s, pc, [&](int step, double loss) {
        if (step % 1000 == 0) note(o, "prompt step " + std::to_string(step) + " loss " + std::to_string(loss));
    });
    const double prompt = eval_prompt_loss(enc, tok, model, held, s, draws, pc.gamma);

    std::size_t better = 0;
    const std::size_t n = 50;
    for (std::size_t k = 0; k < n; ++k) {
        const Sample& smp = held[k];
        ConditionBundle text = model.condition(smp.label, 1.0);
        ConditionBundle both = prompt_condition(model, enc, tok, smp.label, smp.image, nullptr, pc.gamma, 1.0);
        double e_text = mean_squared_error(reconstruct(invert(smp.image, nullptr, text, model, s).z_T, text, model, s),
                                           smp.image);
        double e_both = mean_squared_error(reconstruct(invert(smp.image, nullptr, both, model, s).z_T, both, model, s),
                                           smp.image);
        better += e_both < e_text;
    }
    return {at_most("trained / initial held-out loss", trained / init, 0.5),
            less("prompt loss / text-only loss", prompt / trained, 1.0),
            at_least("fraction of images reconstructed better with the prompt",
                     static_cast<double>(better) / static_cast<double>(n), 0.8)};
}

using SuiteFn = std::vector<Check> (*)(const VerifyOptions&);

const std::map<std::string, SuiteFn>& registry() {
    static const std::map<std::string, SuiteFn> r{
        {"limits", suite_limits},     {"inverse", suite_inverse},     {"oracle", suite_oracle},
        {"marginals", suite_marginals}, {"roundtrip", suite_roundtrip}, {"gradcheck", suite_gradcheck},
        {"sde", suite_sde},           {"masking", suite_masking},     {"fused", suite_fused},
        {"blobmove", suite_blobmove}, {"training", suite_training}};
    return r;
}

} // namespace

const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names{"limits",   "inverse", "oracle",  "marginals", "roundtrip", "gradcheck",
                                                "sde",      "masking", "fused",   "blobmove",  "training"};
    return names;
}

SuiteReport run_suite(const std::string& name, const VerifyOptions& opts) {
    auto it = registry().find(name);
    if (it == registry().end()) throw ConfigError("unknown verify suite '" + name + "'");
    auto t0 = std::chrono::steady_clock::now();
    SuiteReport r;
    r.suite = name;
    r.checks = it->second(opts);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

GmmPrior blob_move_prior(std::size_t size) { return blob_position_prior(size, 2.0, 4, 0.05); }

BlobMoveCase make_blob_move_case(std::uint64_t seed, std::size_t size) {
    if (size < 24) throw ConfigError("blob moves need a grid of at least 24 pixels");
    std::mt19937_64 rng(seed);
    const int lo = 8, hi = static_cast<int>(size) - 9;
    std::uniform_int_distribution<int> pos(lo, hi);
    BlobMoveCase c;
    c.src_row = pos(rng);
    c.src_col = pos(rng);
    double d = 0.0;
    do {
        c.dst_row = pos(rng);
        c.dst_col = pos(rng);
        d = std::hypot(c.dst_row - c.src_row, c.dst_col - c.src_col);
    } while (d < 6.0 || d > 10.0);
    c.source = render_blob(size, size, {double(c.src_row), double(c.src_col), 2.0, 2.0, 0});
    c.spec = make_move_spec(size, c.src_row, c.src_col, c.dst_row, c.dst_col, 6.0);
    return c;
}

MoveMetrics move_metrics(const Tensor& edited, const BlobMoveCase& c) {
    check_same_shape(edited, c.source, "move_metrics");
    MoveMetrics m;
    auto [r, col] = blob_centroid(edited);
    m.centroid_error = std::hypot(r - c.dst_row, col - c.dst_col);
    std::size_t nin = 0, nout = 0;
    for (std::size_t j = 0; j < edited.size(); ++j) {
        const double d = (edited[j] - c.source[j]) * (edited[j] - c.source[j]);
        if (c.spec.mask[j] > 0.0) {
            m.in_mask_mse += d;
            ++nin;
        } else {
            m.out_mask_mse += d;
            ++nout;
        }
    }
    m.in_mask_mse /= static_cast<double>(std::max<std::size_t>(nin, 1));
    m.out_mask_mse /= static_cast<double>(std::max<std::size_t>(nout, 1));
    return m;
}

} // namespace diffedit
