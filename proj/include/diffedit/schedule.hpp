#pragma once

#include <vector>

#include "diffedit/tensor.hpp"

namespace diffedit {

/// sigma for a step between cumulative coefficients a_t < a_prev.
double ddim_sigma(double a_t, double a_prev, double eta);

/// sqrt(a) x0 + sqrt(1 - a) eps; a == 1 returns x0 exactly.
Tensor q_sample(const Tensor& x0, double alpha_bar, const Tensor& eps);

struct ScheduleParams {
    int t_train = 1000;
    double beta_min = 1e-4;
    double beta_max = 2e-2;
    int infer_steps = 50;
};

/// Linear-beta noise schedule with a uniformly strided inference subsequence.
///
/// alpha_bar(t) is the cumulative signal coefficient, alpha_bar(0) == 1.
/// Inference timesteps run strictly downward from T_train; the step after
/// the last listed timestep lands on t = 0.
class NoiseSchedule {
public:
    explicit NoiseSchedule(const ScheduleParams& params = {});

    const ScheduleParams& params() const { return params_; }
    int t_train() const { return params_.t_train; }

    double beta(int t) const;
    double alpha_bar(int t) const;

    /// Strictly decreasing inference timesteps, e.g. 1000, 980, ..., 20.
    const std::vector<int>& timesteps() const { return timesteps_; }
    /// Timestep reached after stepping down from timesteps()[i].
    int prev_timestep(std::size_t i) const;

    /// DDIM sigma between t and t_prev: eta * sqrt((1-a_prev)/(1-a_t)) * sqrt(1 - a_t/a_prev).
    double sigma(int t, int t_prev, double eta) const;
    /// Std of the DDPM posterior q(x_{t_prev} | x_t, x_0) over the same pair.
    double ddpm_posterior_std(int t, int t_prev) const;

    Tensor q_sample(const Tensor& x0, int t, const Tensor& eps) const;

private:
    void check_t(int t, int lo) const;

    ScheduleParams params_;
    std::vector<double> beta_;       // index t, beta_[0] unused
    std::vector<double> alpha_bar_;  // index t
    std::vector<int> timesteps_;
};

} // namespace diffedit
