#include "diffedit/schedule.hpp"

#include <cmath>
#include <string>

#include "diffedit/error.hpp"

namespace diffedit {

double ddim_sigma(double a_t, double a_prev, double eta) {
    if (eta == 0.0) return 0.0;
    return eta * std::sqrt((1.0 - a_prev) / (1.0 - a_t)) * std::sqrt(1.0 - a_t / a_prev);
}

NoiseSchedule::NoiseSchedule(const ScheduleParams& params) : params_(params) {
    const auto& p = params_;
    if (p.t_train < 1) throw ConfigError("t_train must be positive, got " + std::to_string(p.t_train));
    if (!(p.beta_min > 0.0 && p.beta_min <= p.beta_max && p.beta_max < 1.0)) {
        throw ConfigError("need 0 < beta_min <= beta_max < 1, got beta_min=" + std::to_string(p.beta_min) +
                          " beta_max=" + std::to_string(p.beta_max));
    }
    if (p.infer_steps < 1 || p.infer_steps > p.t_train) {
        throw ConfigError("infer_steps must lie in [1, t_train], got " + std::to_string(p.infer_steps));
    }
    const int T = p.t_train;
    beta_.assign(static_cast<std::size_t>(T) + 1, 0.0);
    alpha_bar_.assign(static_cast<std::size_t>(T) + 1, 1.0);
    for (int t = 1; t <= T; ++t) {
        double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(T - 1);
        beta_[t] = p.beta_min + frac * (p.beta_max - p.beta_min);
        alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - beta_[t]);
    }
    const int stride = T / p.infer_steps;
    for (int i = p.infer_steps; i >= 1; --i) timesteps_.push_back(i * stride);
}

void NoiseSchedule::check_t(int t, int lo) const {
    if (t < lo || t > params_.t_train) {
        throw RangeError("timestep " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                         std::to_string(params_.t_train) + "]");
    }
}

double NoiseSchedule::beta(int t) const {
    check_t(t, 1);
    return beta_[static_cast<std::size_t>(t)];
}

double NoiseSchedule::alpha_bar(int t) const {
    check_t(t, 0);
    return alpha_bar_[static_cast<std::size_t>(t)];
}

int NoiseSchedule::prev_timestep(std::size_t i) const {
    if (i >= timesteps_.size()) throw RangeError("inference step index " + std::to_string(i) + " out of range");
    return i + 1 < timesteps_.size() ? timesteps_[i + 1] : 0;
}

double NoiseSchedule::sigma(int t, int t_prev, double eta) const {
    if (!(t_prev < t)) throw RangeError("sigma needs t_prev < t");
    if (eta < 0.0) throw ConfigError("eta must be non-negative");
    return ddim_sigma(alpha_bar(t), alpha_bar(t_prev), eta);
}

double NoiseSchedule::ddpm_posterior_std(int t, int t_prev) const {
    if (!(t_prev < t)) throw RangeError("posterior std needs t_prev < t");
    // Gaussian conditioning: prior x_prev | x0 has variance 1 - a_prev, and
    // x_t | x_prev = sqrt(a_t/a_prev) x_prev + noise of variance 1 - a_t/a_prev.
    const double a_t = alpha_bar(t), a_prev = alpha_bar(t_prev);
    const double prior_var = 1.0 - a_prev;
    if (prior_var == 0.0) return 0.0;
    const double gain2 = a_t / a_prev;
    const double trans_var = 1.0 - gain2;
    return std::sqrt(1.0 / (1.0 / prior_var + gain2 / trans_var));
}

Tensor NoiseSchedule::q_sample(const Tensor& x0, int t, const Tensor& eps) const {
    check_t(t, 0);
    return diffedit::q_sample(x0, alpha_bar_[static_cast<std::size_t>(t)], eps);
}

Tensor q_sample(const Tensor& x0, double a, const Tensor& eps) {
    check_same_shape(x0, eps, "q_sample");
    if (!(a > 0.0 && a <= 1.0)) throw RangeError("alpha_bar must lie in (0, 1]");
    if (a == 1.0) return x0;
    const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
    Tensor out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sa * x0[i] + sn * eps[i];
    return out;
}

} // namespace diffedit
