#include <doctest.h>

#include "../oracles.hpp"
#include "diffedit/error.hpp"
#include "diffedit/sampler.hpp"
#include "diffedit/tiny_denoiser.hpp"

using namespace diffedit;

namespace {

constexpr std::size_t S = 8;

GmmPrior small_prior(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    GmmPrior p;
    p.weights = {0.2, 0.3, 0.5};
    p.means = oracle::normal({3, S * S}, 0.8, rng);
    p.std = 0.4;
    return p;
}

struct Fixture {
    NoiseSchedule schedule;
    GmmDenoiser model{small_prior(1), schedule};
    ConditionBundle cond;
    Tensor x0;
    EditSpec spec = make_move_spec(S, 3, 3, 4, 5, 1.5);

    // A draw from the prior's second component.
    Fixture() {
        std::mt19937_64 rng(2);
        const GmmPrior& p = model.prior();
        x0 = Tensor({S, S});
        Tensor n = oracle::normal({S, S}, p.std, rng);
        for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = p.means.at(1, i) + n[i];
    }
};

// Fails on one timestep so error context can be checked.
class FailingDenoiser final : public Denoiser {
public:
    explicit FailingDenoiser(int bad) : bad_(bad) {}
    Tensor predict_eps(const Tensor& z, int t, const ConditionBundle&, AttentionHooks*) const override {
        if (t == bad_) throw DimensionError("synthetic failure");
        return Tensor(z.shape(), 0.0);
    }

private:
    int bad_;
};

} // namespace

TEST_CASE("ddim step examples") {
    Tensor one = Tensor::scalar(1.0), zero = Tensor::scalar(0.0);
    CHECK(std::abs(ddim_step(one, zero, 0.5, 0.7, 0.0).item() - 1.1832160) < 1e-7);

    NoiseSchedule s;
    std::mt19937_64 rng(3);
    Tensor x0 = oracle::normal({S, S}, 1.0, rng), eps = oracle::normal({S, S}, 1.0, rng);
    const auto& ts = s.timesteps();
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i], tp = s.prev_timestep(i);
        Tensor zt = s.q_sample(x0, t, eps);
        CHECK(oracle::max_diff(ddim_step(s, zt, eps, t, tp, 0.0), s.q_sample(x0, tp, eps)) < 1e-12);
    }
    Tensor z20 = s.q_sample(x0, 20, eps);
    CHECK(oracle::max_diff(ddim_step(s, z20, eps, 20, 0, 0.0), x0) < 1e-12);
}

TEST_CASE("ddim step errors") {
    Tensor z({2}, 1.0), e({2}, 0.0), noise({2}, 1.0);
    CHECK_THROWS_AS(ddim_step(z, e, 0.5, 0.7, 0.8, &noise), ConfigError);
    CHECK_THROWS_AS(ddim_step(z, e, 0.5, 0.7, 0.1), ConfigError);
    CHECK_THROWS_AS(ddim_step(z, Tensor({3}, 0.0), 0.5, 0.7, 0.0), DimensionError);
    NoiseSchedule s;
    CHECK_THROWS_AS(ddim_step(s, z, e, 480, 500, 0.0), RangeError);
}

TEST_CASE("inverse identities hold on every step pair") {
    NoiseSchedule s;
    std::mt19937_64 rng(4);
    const auto& ts = s.timesteps();
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i], tp = s.prev_timestep(i);
        Tensor z = oracle::normal({S, S}, 1.0, rng), eps = oracle::normal({S, S}, 1.0, rng);
        Tensor stepped = ddim_step(s, z, eps, t, tp, 0.0);
        CHECK(oracle::max_diff(ddim_invert_step(s, stepped, eps, t, tp), z) < 1e-12);
        CHECK(oracle::max_diff(time_travel_rollback(s, stepped, eps, t, tp), z) < 1e-12);

        Tensor rescale = ddim_invert_step(s, z, Tensor({S, S}, 0.0), t, tp);
        const double k = std::sqrt(s.alpha_bar(t) / s.alpha_bar(tp));
        CHECK(oracle::max_diff(rescale, k * z) < 1e-14);

        // Rolling back a noisy step splits into the noise-free latent plus the rescaled injected noise.
        const double sigma = s.sigma(t, tp, 0.7);
        Tensor noise = oracle::normal({S, S}, 1.0, rng);
        Tensor noisy = ddim_step(s, z, eps, t, tp, sigma, &noise);
        Tensor expect = time_travel_rollback(s, noisy - sigma * noise, eps, t, tp) + (k * sigma) * noise;
        CHECK(oracle::max_diff(time_travel_rollback(s, noisy, eps, t, tp), expect) < 1e-12);
    }
}

TEST_CASE("noise-free and ancestral limits") {
    NoiseSchedule s;
    const auto& ts = s.timesteps();
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i], tp = s.prev_timestep(i);
        CHECK(s.sigma(t, tp, 0.0) == 0.0);
        CHECK(std::abs(s.sigma(t, tp, 1.0) - oracle::ddpm_std(s.alpha_bar(t), s.alpha_bar(tp))) < 1e-12);
    }
}

TEST_CASE("regional SDE step") {
    NoiseSchedule s;
    std::mt19937_64 g(5);
    Tensor z = oracle::normal({S, S}, 1.0, g), eps = oracle::normal({S, S}, 1.0, g);
    Tensor mask({S, S}, 0.0);
    for (std::size_t i = 0; i < S * S / 2; ++i) mask[i] = 1.0;
    const int t = 500, tp = 480;
    Tensor det = ddim_step(s, z, eps, t, tp, 0.0);

    SUBCASE("outside the interval") {
        Rng rng(1);
        SdeStep r = regional_sde_step(s, z, eps, t, tp, mask, 0.4, 0.2, false, rng);
        CHECK(r.z_prev == det);
        CHECK(rng() == Rng(1)());  // nothing drawn
    }
    SUBCASE("eta2 zero leaves the outside deterministic") {
        Rng rng(2);
        SdeStep r = regional_sde_step(s, z, eps, t, tp, mask, 0.4, 0.0, true, rng);
        for (std::size_t i = 0; i < z.size(); ++i) {
            if (mask[i] == 0.0) CHECK(r.z_prev[i] == det[i]);
            else CHECK(r.z_prev[i] != det[i]);
        }
    }
    SUBCASE("Monte-Carlo spread") {
        Rng rng(3);
        const int draws = 10000;
        std::vector<double> sum(z.size(), 0.0), sq(z.size(), 0.0);
        SdeStep r;
        for (int k = 0; k < draws; ++k) {
            r = regional_sde_step(s, z, eps, t, tp, mask, 0.4, 0.2, true, rng);
            for (std::size_t i = 0; i < z.size(); ++i) {
                const double d = r.z_prev[i] - det[i];
                sum[i] += d;
                sq[i] += d * d;
            }
        }
        const double in = s.sigma(t, tp, 0.4), out = s.sigma(t, tp, 0.2);
        CHECK(r.sigma_in == in);
        CHECK(r.sigma_out == out);
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double mean = sum[i] / draws;
            const double sd = std::sqrt(sq[i] / draws - mean * mean);
            const double expect = mask[i] == 1.0 ? in : out;
            CHECK(std::abs(sd / expect - 1.0) < 0.05);
        }
    }
    SUBCASE("bad mask shape") {
        Rng rng(4);
        CHECK_THROWS_AS(regional_sde_step(s, z, eps, t, tp, Tensor({S, S + 1}, 0.0), 0.4, 0.2, true, rng),
                        DimensionError);
    }
}

TEST_CASE("inversion") {
    Fixture f;
    Inversion inv = invert(f.x0, nullptr, f.cond, f.model, f.schedule);
    CHECK(inv.bank.size() == f.schedule.timesteps().size());
    for (int t : f.schedule.timesteps()) CHECK(inv.bank.contains(t));
    CHECK(inv.z_T == inv.bank.at(1000).z_gud);
    CHECK(!inv.bank.has_reference());

    Tensor rec = reconstruct(inv.z_T, f.cond, f.model, f.schedule);
    double err = 0, norm = 0;
    for (std::size_t i = 0; i < rec.size(); ++i) {
        err += (rec[i] - f.x0[i]) * (rec[i] - f.x0[i]);
        norm += f.x0[i] * f.x0[i];
    }
    const double rel = err / norm;
    CHECK(rel < 1e-2);

    Inversion again = invert(f.x0, nullptr, f.cond, f.model, f.schedule);
    CHECK(again.z_T == inv.z_T);
    CHECK(reconstruct(again.z_T, f.cond, f.model, f.schedule) == rec);

    Tensor ref = 0.5 * f.x0;
    Inversion both = invert(f.x0, &ref, f.cond, f.model, f.schedule);
    CHECK(both.bank.has_reference());
    CHECK(both.z_T == inv.z_T);
    Tensor wrong({S, S + 1}, 0.0);
    CHECK_THROWS_AS(invert(f.x0, &wrong, f.cond, f.model, f.schedule), DimensionError);
}

TEST_CASE("inverted latents of prior samples are standard normal") {
    NoiseSchedule s;
    GmmPrior p;
    p.weights = {1.0};
    p.means = Tensor({1, 4}, 0.0);
    p.std = 1.0;
    GmmDenoiser model(p, s);
    std::mt19937_64 rng(6);
    const int count = 1000;
    std::vector<double> sum(4, 0.0), sq(4, 0.0);
    for (int k = 0; k < count; ++k) {
        Tensor zT = invert(oracle::normal({2, 2}, 1.0, rng), nullptr, {}, model, s).z_T;
        for (std::size_t i = 0; i < 4; ++i) {
            sum[i] += zT[i];
            sq[i] += zT[i] * zT[i];
        }
    }
    for (std::size_t i = 0; i < 4; ++i) {
        const double mean = sum[i] / count, var = sq[i] / count - mean * mean;
        CHECK(std::abs(mean) < 0.1);
        CHECK(std::abs(var - 1.0) < 0.1);
    }
}

TEST_CASE("edit loop") {
    Fixture f;
    Inversion inv = invert(f.x0, nullptr, f.cond, f.model, f.schedule);
    SamplerConfig cfg;

    SUBCASE("deterministic") {
        EditResult a = run_edit(f.x0, nullptr, f.spec, f.cond, f.model, f.schedule, cfg);
        EditResult b = run_edit(f.x0, nullptr, f.spec, f.cond, f.model, f.schedule, cfg);
        CHECK(a.image == b.image);
        CHECK(a.steps.size() == 50);
        cfg.rng_seed = 9;
        CHECK(!(run_edit(inv, f.spec, f.cond, f.model, f.schedule, cfg).image == a.image));
    }
    SUBCASE("gating") {
        EditResult r = run_edit(inv, f.spec, f.cond, f.model, f.schedule, cfg);
        for (const auto& st : r.steps) {
            const int i = static_cast<int>(st.index);
            CHECK(st.guided == (i < 30 && i % 2 == 0));
            CHECK(st.sde == (i < 25));
            CHECK(st.iterations == (st.guided && i < 25 ? 3 : 1));
            CHECK(st.t == f.schedule.timesteps()[st.index]);
            if (!st.sde) CHECK(st.sigma_in == 0.0);
        }
    }
    SUBCASE("identity edit equals reconstruction") {
        EditSpec id;
        id.mask = Tensor({S, S}, 0.0);
        EditResult r = run_edit(f.x0, nullptr, id, f.cond, f.model, f.schedule, cfg);
        CHECK(r.identity);
        ConditionBundle c = f.cond;
        c.cfg_scale = cfg.cfg_scale;
        CHECK(r.image == reconstruct(inv.z_T, c, f.model, f.schedule));
    }
    SUBCASE("ODE degeneracy") {
        cfg.eta1 = cfg.eta2 = 0.0;
        cfg.U = 1;
        cfg.n = 0;
        cfg.visual_xattn = false;
        CHECK(run_edit(inv, f.spec, f.cond, f.model, f.schedule, cfg).image ==
              reconstruct(inv.z_T, f.cond, f.model, f.schedule));
    }
    SUBCASE("n = 0 is unguided regional SDE sampling") {
        cfg.n = 0;
        Rng rng(cfg.rng_seed);
        Tensor z = inv.z_T;
        const auto& ts = f.schedule.timesteps();
        for (std::size_t i = 0; i < ts.size(); ++i) {
            Tensor eps = f.model.predict_eps(z, ts[i], f.cond);
            z = regional_sde_step(f.schedule, z, eps, ts[i], f.schedule.prev_timestep(i), f.spec.mask, cfg.eta1,
                                  cfg.eta2, static_cast<int>(i) < cfg.tau_sde, rng)
                    .z_prev;
        }
        CHECK(run_edit(inv, f.spec, f.cond, f.model, f.schedule, cfg).image == z);
    }
    SUBCASE("U = 1 equals disabling time travel") {
        SamplerConfig a = cfg, b = cfg;
        a.U = 1;
        b.tau_tt = 0;
        b.U = 5;
        CHECK(run_edit(inv, f.spec, f.cond, f.model, f.schedule, a).image ==
              run_edit(inv, f.spec, f.cond, f.model, f.schedule, b).image);
    }
    SUBCASE("config validation") {
        for (auto mutate : std::vector<std::function<void(SamplerConfig&)>>{
                 [](SamplerConfig& c) { c.U = 0; }, [](SamplerConfig& c) { c.n = 51; },
                 [](SamplerConfig& c) { c.eta2 = 0.5; }, [](SamplerConfig& c) { c.eta1 = 1.2; },
                 [](SamplerConfig& c) { c.guidance_stride = 0; }, [](SamplerConfig& c) { c.tau_sde = -1; }}) {
            SamplerConfig bad = cfg;
            mutate(bad);
            CHECK_THROWS_AS(run_edit(inv, f.spec, f.cond, f.model, f.schedule, bad), ConfigError);
        }
        CHECK_THROWS_AS(run_edit(f.x0, nullptr, make_paste_spec(S, 3, 3, 4, 4, 1.0), f.cond, f.model, f.schedule, cfg),
                        ConfigError);
    }
}

TEST_CASE("errors name the timestep") {
    NoiseSchedule s;
    FailingDenoiser model(620);
    EditSpec spec = make_move_spec(S, 3, 3, 4, 5, 1.5);
    Inversion inv{Tensor({S, S}, 0.1), {}};
    for (int t : s.timesteps()) inv.bank.put(t, BankEntry{Tensor({S, S}, 0.1), std::nullopt, {}, {}});
    CHECK_THROWS_WITH_AS(run_edit(inv, spec, {}, model, s, SamplerConfig{}), doctest::Contains("timestep 620"),
                         DimensionError);
    CHECK_THROWS_WITH_AS(reconstruct(inv.z_T, {}, model, s), doctest::Contains("timestep 620"), DimensionError);

    FailingDenoiser ok(-1);
    Inversion missing = inv;
    missing = Inversion{inv.z_T, {}};
    for (int t : s.timesteps())
        if (t != 300) missing.bank.put(t, inv.bank.at(t));
    CHECK_THROWS_WITH_AS(run_edit(missing, spec, {}, ok, s, SamplerConfig{}), doctest::Contains("300"), BankError);
}

TEST_CASE("visual cross-attention with the tiny denoiser") {
    NoiseSchedule s;
    TinyDenoiserConfig c;
    c.image_height = c.image_width = 16;
    c.patch = 4;
    TinyAttentionDenoiser model(c);
    std::mt19937_64 rng(7);
    for (auto& [name, t] : model.params()) t += oracle::normal(t.shape(), 0.05, rng);
    Tensor x0 = oracle::normal({16, 16}, 0.5, rng);
    ConditionBundle cond = model.condition(1, 1.0);
    Inversion inv = invert(x0, nullptr, cond, model, s);
    REQUIRE(inv.bank.at(500).kv_gud.size() == c.blocks);

    // Bank K/V belong to the bank latent, so injecting them there only duplicates keys.
    for (int t : {1000, 500, 20}) {
        const BankEntry& e = inv.bank.at(t);
        AttentionHooks hooks;
        hooks.inject = e.kv_gud;
        CHECK(oracle::max_diff(model.predict_eps(e.z_gud, t, cond, &hooks), model.predict_eps(e.z_gud, t, cond)) <
              1e-10);
    }

    SamplerConfig cfg;
    cfg.cfg_scale = 1.0;
    EditSpec spec = make_move_spec(16, 5, 5, 8, 8, 2.0);
    Tensor with = run_edit(inv, spec, cond, model, s, cfg).image;
    cfg.visual_xattn = false;
    CHECK(!(run_edit(inv, spec, cond, model, s, cfg).image == with));
}
