#include "diffedit/sampler.hpp"

#include <cmath>
#include <string>

#include "diffedit/error.hpp"

namespace diffedit {

Tensor ddim_step(const Tensor& z_t, const Tensor& eps, double a_t, double a_prev, double sigma, const Tensor* noise) {
    check_same_shape(z_t, eps, "ddim_step");
    if (noise) check_same_shape(z_t, *noise, "ddim_step noise");
    if (sigma != 0.0 && !noise) throw ConfigError("ddim_step with sigma > 0 needs a noise tensor");
    const double dir2 = 1.0 - a_prev - sigma * sigma;
    if (dir2 < 0.0) {
        throw ConfigError("sigma " + std::to_string(sigma) + " too large for the step (1 - a_prev - sigma^2 < 0)");
    }
    const double c_x0 = std::sqrt(a_prev) / std::sqrt(a_t);
    const double c_t = std::sqrt(1.0 - a_t);
    const double c_dir = std::sqrt(dir2);
    Tensor out(z_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = c_x0 * (z_t[i] - c_t * eps[i]) + c_dir * eps[i];
        if (sigma != 0.0) v += sigma * (*noise)[i];
        out[i] = v;
    }
    return out;
}

Tensor ddim_step(const NoiseSchedule& s, const Tensor& z_t, const Tensor& eps, int t, int t_prev, double sigma,
                 const Tensor* noise) {
    if (!(t_prev < t)) throw RangeError("ddim_step needs t_prev < t");
    return ddim_step(z_t, eps, s.alpha_bar(t), s.alpha_bar(t_prev), sigma, noise);
}

Tensor ddim_invert_step(const Tensor& z_prev, const Tensor& eps, double a_t, double a_prev) {
    check_same_shape(z_prev, eps, "ddim_invert_step");
    const double c = std::sqrt(a_t) / std::sqrt(a_prev);
    const double c_prev = std::sqrt(1.0 - a_prev);
    const double c_t = std::sqrt(1.0 - a_t);
    Tensor out(z_prev.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * (z_prev[i] - c_prev * eps[i]) + c_t * eps[i];
    return out;
}

Tensor ddim_invert_step(const NoiseSchedule& s, const Tensor& z_prev, const Tensor& eps, int t, int t_prev) {
    if (!(t_prev < t)) throw RangeError("ddim_invert_step needs t_prev < t");
    return ddim_invert_step(z_prev, eps, s.alpha_bar(t), s.alpha_bar(t_prev));
}

SdeStep regional_sde_step(const NoiseSchedule& s, const Tensor& z_t, const Tensor& eps, int t, int t_prev,
                          const Tensor& mask, double eta1, double eta2, bool in_tau_sde, Rng& rng) {
    check_same_shape(z_t, mask, "regional_sde_step mask");
    if (!in_tau_sde) return SdeStep{ddim_step(s, z_t, eps, t, t_prev, 0.0), 0.0, 0.0};
    SdeStep r;
    r.sigma_in = s.sigma(t, t_prev, eta1);
    r.sigma_out = s.sigma(t, t_prev, eta2);
    Tensor noise(z_t.shape());
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : noise.values()) v = normal(rng);
    Tensor inside = ddim_step(s, z_t, eps, t, t_prev, r.sigma_in, &noise);
    Tensor outside = ddim_step(s, z_t, eps, t, t_prev, r.sigma_out, &noise);
    r.z_prev = Tensor(z_t.shape());
    for (std::size_t i = 0; i < z_t.size(); ++i) {
        const double m = mask[i];
        if (m == 0.0) {
            r.z_prev[i] = outside[i];
        } else if (m == 1.0) {
            r.z_prev[i] = inside[i];
        } else {
            r.z_prev[i] = m * inside[i] + (1.0 - m) * outside[i];
        }
    }
    return r;
}

Tensor time_travel_rollback(const NoiseSchedule& s, const Tensor& z_prev, const Tensor& cached_eps, int t,
                            int t_prev) {
    return ddim_invert_step(s, z_prev, cached_eps, t, t_prev);
}

void SamplerConfig::validate(std::size_t steps) const {
    const int total = static_cast<int>(steps);
    if (n < 0 || n > total) throw ConfigError("n must lie in [0, " + std::to_string(total) + "]");
    if (guidance_stride < 1) throw ConfigError("guidance_stride must be at least 1");
    if (tau_sde < 0 || tau_sde > total) throw ConfigError("tau_sde must lie in [0, " + std::to_string(total) + "]");
    if (tau_tt < 0 || tau_tt > total) throw ConfigError("tau_tt must lie in [0, " + std::to_string(total) + "]");
    if (U < 1) throw ConfigError("U must be at least 1");
    if (!(eta2 >= 0.0 && eta2 <= eta1 && eta1 <= 1.0)) throw ConfigError("need 0 <= eta2 <= eta1 <= 1");
    if (!(guidance_lr >= 0.0) || !std::isfinite(guidance_lr)) throw ConfigError("guidance_lr must be finite and >= 0");
    if (!std::isfinite(cfg_scale)) throw ConfigError("cfg_scale must be finite");
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be finite and >= 0");
}

namespace {

// Re-raises the active exception with the timestep prepended, keeping its type.
[[noreturn]] void rethrow_at(int t) {
    const std::string at = "timestep " + std::to_string(t) + ": ";
    try {
        throw;
    } catch (const DimensionError& e) {
        throw DimensionError(at + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(at + e.what());
    } catch (const RangeError& e) {
        throw RangeError(at + e.what());
    } catch (const GraphError& e) {
        throw GraphError(at + e.what());
    } catch (const BankError& e) {
        throw BankError(at + e.what());
    } catch (const Error& e) {
        throw Error(at + e.what());
    }
}

struct Trajectory {
    std::vector<Tensor> latents;             // latents[i] sits at timesteps()[i]
    std::vector<std::vector<LayerKV>> kv;    // K/V at the same states
};

Trajectory invert_one(const Tensor& x0, const ConditionBundle& cond, const Denoiser& model,
                      const NoiseSchedule& schedule) {
    const auto& ts = schedule.timesteps();
    const std::size_t steps = ts.size();
    Trajectory tr;
    tr.latents.resize(steps);
    tr.kv.resize(steps);
    Tensor z = x0;
    for (std::size_t j = steps; j-- > 0;) {
        const int t = ts[j], t_prev = schedule.prev_timestep(j);
        try {
            Tensor eps = model.predict_eps(z, t, cond);
            z = ddim_invert_step(schedule, z, eps, t, t_prev);
            if (!z.all_finite()) throw RangeError("inversion produced a non-finite latent");
            if (model.has_attention()) {
                AttentionHooks hooks;
                hooks.capture = true;
                model.predict_eps(z, t, cond, &hooks);
                tr.kv[j] = std::move(hooks.captured);
            }
        } catch (const Error&) {
            rethrow_at(t);
        }
        tr.latents[j] = z;
    }
    return tr;
}

std::vector<LayerKV> bank_kv(const BankEntry& e) {
    std::vector<LayerKV> out = e.kv_gud;
    if (!e.kv_ref.empty()) {
        for (std::size_t l = 0; l < out.size(); ++l) {
            const LayerKV& r = e.kv_ref[l];
            std::vector<double> k = out[l].k.values(), v = out[l].v.values();
            k.insert(k.end(), r.k.values().begin(), r.k.values().end());
            v.insert(v.end(), r.v.values().begin(), r.v.values().end());
            out[l].k = Tensor({out[l].k.rows() + r.k.rows(), r.k.cols()}, std::move(k));
            out[l].v = Tensor({out[l].v.rows() + r.v.rows(), r.v.cols()}, std::move(v));
        }
    }
    return out;
}

} // namespace

Inversion invert(const Tensor& x0, const Tensor* x0_ref, const ConditionBundle& cond, const Denoiser& model,
                 const NoiseSchedule& schedule) {
    if (x0.rank() != 2) throw DimensionError("invert expects a 2-D image, got " + shape_str(x0.shape()));
    if (x0_ref && !x0_ref->same_shape(x0)) {
        throw DimensionError("reference " + shape_str(x0_ref->shape()) + " does not match source " +
                             shape_str(x0.shape()));
    }
    Trajectory src = invert_one(x0, cond, model, schedule);
    std::optional<Trajectory> ref;
    if (x0_ref) ref = invert_one(*x0_ref, cond, model, schedule);
    Inversion inv;
    const auto& ts = schedule.timesteps();
    for (std::size_t i = 0; i < ts.size(); ++i) {
        BankEntry e;
        e.z_gud = src.latents[i];
        e.kv_gud = src.kv[i];
        if (ref) {
            e.z_ref = ref->latents[i];
            e.kv_ref = ref->kv[i];
        }
        inv.bank.put(ts[i], std::move(e));
    }
    inv.z_T = src.latents.front();
    return inv;
}

Tensor reconstruct(const Tensor& z_T, const ConditionBundle& cond, const Denoiser& model,
                   const NoiseSchedule& schedule) {
    const auto& ts = schedule.timesteps();
    Tensor z = z_T;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i], t_prev = schedule.prev_timestep(i);
        try {
            z = ddim_step(schedule, z, predict_eps_cfg(model, z, t, cond), t, t_prev, 0.0);
        } catch (const Error&) {
            rethrow_at(t);
        }
    }
    return z;
}

EditResult run_edit(const Tensor& x0, const Tensor* x0_ref, const EditSpec& spec, const ConditionBundle& cond,
                    const Denoiser& model, const NoiseSchedule& schedule, const SamplerConfig& cfg) {
    spec.validate(x0.shape());
    if (spec.uses_reference() && !x0_ref) throw ConfigError(to_string(spec.task) + " needs a reference image");
    return run_edit(invert(x0, x0_ref, cond, model, schedule), spec, cond, model, schedule, cfg);
}

EditResult run_edit(const Inversion& inv, const EditSpec& spec, const ConditionBundle& cond, const Denoiser& model,
                    const NoiseSchedule& schedule, const SamplerConfig& cfg) {
    const auto& ts = schedule.timesteps();
    cfg.validate(ts.size());
    spec.validate(inv.z_T.shape());
    ConditionBundle c = cond;
    c.cfg_scale = cfg.cfg_scale;
    c.gamma = cfg.gamma;

    EditResult result;
    if (spec.is_identity()) {
        result.identity = true;
        result.image = reconstruct(inv.z_T, c, model, schedule);
        return result;
    }

    const bool xattn = cfg.visual_xattn && model.has_attention();
    Rng rng(cfg.rng_seed);
    Tensor z = inv.z_T;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i], t_prev = schedule.prev_timestep(i);
        const int idx = static_cast<int>(i);
        StepLog log;
        log.index = i;
        log.t = t;
        log.t_prev = t_prev;
        log.guided = idx < cfg.n && idx % cfg.guidance_stride == 0;
        log.sde = idx < cfg.tau_sde;
        log.iterations = log.guided && idx < cfg.tau_tt ? cfg.U : 1;
        try {
            const BankEntry& entry = inv.bank.at(t);
            AttentionHooks hooks;
            if (xattn) hooks.inject = bank_kv(entry);
            const double lr = cfg.guidance_lr * std::sqrt(1.0 - schedule.alpha_bar(t));
            Tensor z_prev;
            for (int u = 0; u < log.iterations; ++u) {
                Tensor eps = predict_eps_cfg(model, z, t, c, xattn ? &hooks : nullptr);
                if (log.guided) {
                    EnergyReport report = regional_gradient(z, inv.bank, spec, t);
                    log.e_edit = report.e_edit;
                    log.e_content = report.e_content;
                    eps = guided_eps(eps, report, lr);
                }
                SdeStep step = regional_sde_step(schedule, z, eps, t, t_prev, spec.mask, cfg.eta1, cfg.eta2, log.sde,
                                                 rng);
                log.sigma_in = step.sigma_in;
                log.sigma_out = step.sigma_out;
                z_prev = std::move(step.z_prev);
                if (u + 1 < log.iterations) z = time_travel_rollback(schedule, z_prev, eps, t, t_prev);
            }
            if (!z_prev.all_finite()) throw RangeError("edit produced a non-finite latent");
            z = std::move(z_prev);
        } catch (const Error&) {
            rethrow_at(t);
        }
        result.steps.push_back(log);
    }
    result.image = std::move(z);
    return result;
}

} // namespace diffedit
