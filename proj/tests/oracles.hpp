#pragma once
// Independent reference computations used by the tests. Nothing here calls
// the library routine it is meant to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "diffedit/tensor.hpp"

namespace oracle {

using diffedit::Tensor;

inline Tensor uniform(diffedit::Shape shape, double lo, double hi, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& v : t.values()) v = u(rng);
    return t;
}

inline Tensor normal(diffedit::Shape shape, double std, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> n(0.0, std);
    for (double& v : t.values()) v = n(rng);
    return t;
}

/// Central-difference gradient of a scalar function of one tensor.
inline Tensor fd_grad(const std::function<double(const Tensor&)>& f, Tensor x, double h = 1e-5) {
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double up = f(x);
        x[i] = orig - h;
        const double down = f(x);
        x[i] = orig;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

inline double rel_err(const Tensor& got, const Tensor& want) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        num += (got[i] - want[i]) * (got[i] - want[i]);
        den += want[i] * want[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-8);
}

inline double max_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Cumulative product of (1 - beta) for a linear ramp, index 0..T.
inline std::vector<double> alpha_bar_table(int T, double beta_min, double beta_max) {
    std::vector<double> ab(static_cast<std::size_t>(T) + 1, 1.0);
    for (int t = 1; t <= T; ++t) {
        const double beta = beta_min + (beta_max - beta_min) * (t - 1) / (T - 1);
        ab[static_cast<std::size_t>(t)] = ab[static_cast<std::size_t>(t) - 1] * (1.0 - beta);
    }
    return ab;
}

/// DDPM posterior std over a (possibly strided) step: sqrt(beta_tilde) with
/// beta = 1 - a_t/a_prev and beta_tilde = beta (1 - a_prev) / (1 - a_t).
inline double ddpm_std(double a_t, double a_prev) {
    const double beta = 1.0 - a_t / a_prev;
    return std::sqrt(beta * (1.0 - a_prev) / (1.0 - a_t));
}

/// log of sum_k w_k N(z; sqrt(a) mu_k, (a s^2 + 1 - a) I).
inline double gmm_log_density(const std::vector<double>& w, const Tensor& means, double s, const Tensor& z,
                              double a) {
    const double v = a * s * s + 1.0 - a;
    const std::size_t D = z.size();
    double best = -INFINITY;
    std::vector<double> terms;
    for (std::size_t k = 0; k < w.size(); ++k) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < D; ++j) {
            const double d = z[j] - std::sqrt(a) * means[k * D + j];
            d2 += d * d;
        }
        terms.push_back(std::log(w[k]) - d2 / (2.0 * v) - 0.5 * static_cast<double>(D) * std::log(2.0 * M_PI * v));
        best = std::max(best, terms.back());
    }
    double acc = 0.0;
    for (double l : terms) acc += std::exp(l - best);
    return best + std::log(acc);
}

/// Plain O(n^3) matrix product written independently of the library kernel.
inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = acc;
        }
    return c;
}

/// softmax(q k^T / sqrt(d)) v, row by row.
inline Tensor naive_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    const std::size_t m = q.dim(0), d = q.dim(1), n = k.dim(0), dv = v.dim(1);
    Tensor out({m, dv});
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<double> logits(n);
        double mx = -INFINITY;
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < d; ++p) acc += q[i * d + p] * k[j * d + p];
            logits[j] = acc / std::sqrt(static_cast<double>(d));
            mx = std::max(mx, logits[j]);
        }
        double z = 0.0;
        for (double& l : logits) z += (l = std::exp(l - mx));
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < dv; ++p) out[i * dv + p] += logits[j] / z * v[j * dv + p];
    }
    return out;
}

} // namespace oracle
