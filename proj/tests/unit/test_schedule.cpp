#include <doctest.h>

#include "../oracles.hpp"
#include "diffedit/error.hpp"
#include "diffedit/schedule.hpp"

using namespace diffedit;

TEST_CASE("default schedule coefficients") {
    NoiseSchedule s;
    CHECK(s.alpha_bar(0) == 1.0);
    CHECK(std::abs(s.alpha_bar(1) - 0.9999) < 1e-15);
    CHECK(s.alpha_bar(1000) < 0.01);

    auto table = oracle::alpha_bar_table(1000, 1e-4, 2e-2);
    double worst = 0.0;
    for (int t = 0; t <= 1000; ++t) worst = std::max(worst, std::abs(s.alpha_bar(t) - table[t]));
    CHECK(worst < 1e-12);
}

TEST_CASE("alpha_bar is strictly decreasing and every beta is in (0, 1)") {
    for (auto p : {ScheduleParams{}, ScheduleParams{200, 1e-3, 5e-2, 10}, ScheduleParams{50, 0.1, 0.1, 50}}) {
        NoiseSchedule s(p);
        for (int t = 1; t <= p.t_train; ++t) {
            CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
            CHECK(s.beta(t) > 0.0);
            CHECK(s.beta(t) < 1.0);
        }
    }
}

TEST_CASE("schedule parameters are validated") {
    CHECK_THROWS_AS(NoiseSchedule(ScheduleParams{1000, 0.0, 0.02, 50}), ConfigError);
    CHECK_THROWS_AS(NoiseSchedule(ScheduleParams{1000, 0.03, 0.02, 50}), ConfigError);
    CHECK_THROWS_AS(NoiseSchedule(ScheduleParams{1000, 1e-4, 1.0, 50}), ConfigError);
    CHECK_THROWS_AS(NoiseSchedule(ScheduleParams{100, 1e-4, 0.02, 101}), ConfigError);
}

TEST_CASE("inference timesteps") {
    NoiseSchedule s;
    const auto& ts = s.timesteps();
    REQUIRE(ts.size() == 50);
    CHECK(ts.front() == 1000);
    CHECK(ts.back() == 20);
    for (std::size_t i = 1; i < ts.size(); ++i) {
        CHECK(ts[i] < ts[i - 1]);
        CHECK(ts[i - 1] - ts[i] == 20);
        CHECK(s.prev_timestep(i - 1) == ts[i]);
    }
    CHECK(s.prev_timestep(49) == 0);
    CHECK_THROWS_AS(s.prev_timestep(50), RangeError);
}

TEST_CASE("q_sample") {
    NoiseSchedule s;
    Tensor x0 = Tensor::vector({2.0, -1.0}), eps = Tensor::vector({1.0, 0.5});
    CHECK(s.q_sample(x0, 0, eps) == x0);
    CHECK(std::abs(q_sample(Tensor::scalar(2.0), 0.25, Tensor::scalar(1.0)).item() - 1.8660254) < 1e-7);
    Tensor zero_eps(x0.shape(), 0.0);
    Tensor scaled = s.q_sample(x0, 300, zero_eps);
    CHECK(scaled[0] == std::sqrt(s.alpha_bar(300)) * 2.0);
    CHECK_THROWS_AS(s.q_sample(x0, 1001, eps), RangeError);
    CHECK_THROWS_AS(s.q_sample(x0, 10, Tensor::vector({1.0})), DimensionError);
}

TEST_CASE("sigma") {
    NoiseSchedule s;
    CHECK(ddim_sigma(0.5, 0.7, 1.0) == doctest::Approx(0.4140393).epsilon(1e-7));
    const auto& ts = s.timesteps();
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i], tp = s.prev_timestep(i);
        CHECK(s.sigma(t, tp, 0.0) == 0.0);
        const double one = s.sigma(t, tp, 1.0);
        CHECK(std::abs(one - oracle::ddpm_std(s.alpha_bar(t), s.alpha_bar(tp))) < 1e-12);
        CHECK(std::abs(one - s.ddpm_posterior_std(t, tp)) < 1e-12);
        for (double eta : {0.2, 0.4, 0.73})
            CHECK(std::abs(s.sigma(t, tp, eta) - eta * one) <= 1e-15);
    }
    CHECK_THROWS_AS(s.sigma(20, 40, 1.0), RangeError);
}

TEST_CASE("exact denoising with the true noise recovers x0") {
    NoiseSchedule s;
    std::mt19937_64 rng(5);
    Tensor x0 = oracle::normal({4, 4}, 1.0, rng), eps = oracle::normal({4, 4}, 1.0, rng);
    for (int t : {1, 17, 500, 1000}) {
        Tensor z = s.q_sample(x0, t, eps);
        const double a = s.alpha_bar(t);
        Tensor rec(x0.shape());
        for (std::size_t i = 0; i < rec.size(); ++i) rec[i] = (z[i] - std::sqrt(1.0 - a) * eps[i]) / std::sqrt(a);
        CHECK(oracle::max_diff(rec, x0) < 1e-12);
    }
}
