#pragma once

#include <map>
#include <optional>
#include <random>
#include <string>

#include "diffedit/tape.hpp"
#include "diffedit/tensor_io.hpp"

namespace diffedit {

/// softmax(q k^T / sqrt(d)) v with d = q's width.
Var attention(Var q, Var k, Var v);

/// Dual-branch attention: softmax(q k1^T/sqrt d) v1 + gamma * softmax(q k2^T/sqrt d) v2.
/// The second branch is optional; omitting it with gamma != 0 is a ConfigError.
Var fused_attention(Var q, Var k1, Var v1, std::optional<Var> k2, std::optional<Var> v2, double gamma);

Tensor fused_attention(const Tensor& q, const Tensor& k1, const Tensor& v1, const std::optional<Tensor>& k2,
                       const std::optional<Tensor>& v2, double gamma);

/// Bundle tensors placed on a tape, as trainable leaves or as constants.
class BoundParams {
public:
    BoundParams(Tape& tape, const Bundle& params, bool trainable);

    Var operator()(const std::string& name) const;
    const std::map<std::string, Var>& vars() const { return vars_; }

private:
    std::map<std::string, Var> vars_;
};

/// Gradients of `loss` for every bound parameter, keyed by name.
Bundle parameter_gradients(Tape& tape, Var loss, const BoundParams& params);

/// In-place p -= lr * g for every gradient entry.
void sgd_update(Bundle& params, const Bundle& grads, double lr);

/// Global L2 norm over every gradient tensor.
double gradient_norm(const Bundle& grads);
/// Rescales all gradients so their global norm is at most max_norm; returns the norm before clipping.
/// max_norm <= 0 disables clipping.
double clip_gradients(Bundle& grads, double max_norm);

Tensor random_normal(Shape shape, double stddev, std::mt19937_64& rng);

} // namespace diffedit
