#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "diffedit/denoiser.hpp"
#include "diffedit/guidance.hpp"
#include "diffedit/schedule.hpp"

namespace diffedit {

using Rng = std::mt19937_64;

// Deterministic-family DDIM update between cumulative coefficients a_t < a_prev.
Tensor ddim_step(const Tensor& z_t, const Tensor& eps, double a_t, double a_prev, double sigma,
                 const Tensor* noise = nullptr);
Tensor ddim_step(const NoiseSchedule& s, const Tensor& z_t, const Tensor& eps, int t, int t_prev, double sigma,
                 const Tensor* noise = nullptr);

/// Exact inverse of the sigma = 0 step for a fixed eps.
Tensor ddim_invert_step(const Tensor& z_prev, const Tensor& eps, double a_t, double a_prev);
Tensor ddim_invert_step(const NoiseSchedule& s, const Tensor& z_prev, const Tensor& eps, int t, int t_prev);

struct SdeStep {
    Tensor z_prev;
    double sigma_in = 0.0;   // sigma inside the mask
    double sigma_out = 0.0;  // sigma outside
};

/// mask * step(eta1) + (1 - mask) * step(eta2) with one shared standard-normal
/// draw. Outside the SDE interval both etas are zero and nothing is drawn.
SdeStep regional_sde_step(const NoiseSchedule& s, const Tensor& z_t, const Tensor& eps, int t, int t_prev,
                          const Tensor& mask, double eta1, double eta2, bool in_tau_sde, Rng& rng);

/// Undo a step by deterministic inversion with the eps that produced it.
Tensor time_travel_rollback(const NoiseSchedule& s, const Tensor& z_prev, const Tensor& cached_eps, int t,
                            int t_prev);

struct SamplerConfig {
    int n = 30;                // guidance runs on steps i < n
    int guidance_stride = 2;   // ... with i % stride == 0
    int tau_sde = 25;          // regional SDE on steps i < tau_sde
    int tau_tt = 25;           // time travel on guided steps i < tau_tt
    int U = 3;
    double eta1 = 0.4;
    double eta2 = 0.2;
    double guidance_lr = 2.0;  // scaled by sqrt(1 - alpha_bar_t) at each step
    double cfg_scale = 5.0;
    double gamma = 0.5;
    std::uint64_t rng_seed = 0;
    bool visual_xattn = true;

    void validate(std::size_t steps) const;
};

struct Inversion {
    Tensor z_T;
    MemoryBank bank;
};

/// DDIM inversion of x0 (and x0_ref when given) with the conditional
/// prediction. The bank stores each latent under its timestep together with
/// the self-attention K/V seen when predicting at that latent.
Inversion invert(const Tensor& x0, const Tensor* x0_ref, const ConditionBundle& cond, const Denoiser& model,
                 const NoiseSchedule& schedule);

/// Deterministic sampling from z_T with classifier-free guidance at cond.cfg_scale.
Tensor reconstruct(const Tensor& z_T, const ConditionBundle& cond, const Denoiser& model,
                   const NoiseSchedule& schedule);

struct StepLog {
    std::size_t index = 0;
    int t = 0;
    int t_prev = 0;
    bool guided = false;
    int iterations = 1;
    bool sde = false;
    double sigma_in = 0.0;
    double sigma_out = 0.0;
    double e_edit = 0.0;
    double e_content = 0.0;
};

struct EditResult {
    Tensor image;
    std::vector<StepLog> steps;
    bool identity = false;
};

EditResult run_edit(const Tensor& x0, const Tensor* x0_ref, const EditSpec& spec, const ConditionBundle& cond,
                    const Denoiser& model, const NoiseSchedule& schedule, const SamplerConfig& cfg);
/// Same loop on an existing inversion.
EditResult run_edit(const Inversion& inv, const EditSpec& spec, const ConditionBundle& cond, const Denoiser& model,
                    const NoiseSchedule& schedule, const SamplerConfig& cfg);

} // namespace diffedit
