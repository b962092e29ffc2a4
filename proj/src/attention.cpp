#include "diffedit/attention.hpp"

#include <cmath>

#include "diffedit/error.hpp"

namespace diffedit {

Var attention(Var q, Var k, Var v) {
    const std::size_t d = q.value().cols();
    if (k.value().cols() != d) {
        throw DimensionError("attention: query width " + std::to_string(d) + " vs key shape " + shape_str(k.shape()));
    }
    if (k.value().rows() != v.value().rows()) {
        throw DimensionError("attention: keys " + shape_str(k.shape()) + " and values " + shape_str(v.shape()) +
                             " disagree on token count");
    }
    Var scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
    return matmul(softmax_rows(scores), v);
}

Var fused_attention(Var q, Var k1, Var v1, std::optional<Var> k2, std::optional<Var> v2, double gamma) {
    if (k2.has_value() != v2.has_value()) throw ConfigError("fused_attention: second branch needs both K and V");
    Var text = attention(q, k1, v1);
    if (!k2) {
        if (gamma != 0.0) throw ConfigError("fused_attention: gamma != 0 without image-prompt keys/values");
        return text;
    }
    if (gamma == 0.0) return text;
    return add(text, scale(attention(q, *k2, *v2), gamma));
}

Tensor fused_attention(const Tensor& q, const Tensor& k1, const Tensor& v1, const std::optional<Tensor>& k2,
                       const std::optional<Tensor>& v2, double gamma) {
    Tape tape;
    std::optional<Var> vk2, vv2;
    if (k2) vk2 = tape.constant(*k2);
    if (v2) vv2 = tape.constant(*v2);
    Var out = fused_attention(tape.constant(q), tape.constant(k1), tape.constant(v1), vk2, vv2, gamma);
    return out.value();
}

BoundParams::BoundParams(Tape& tape, const Bundle& params, bool trainable) {
    for (const auto& [name, value] : params) {
        vars_.emplace(name, trainable ? tape.leaf(value) : tape.constant(value));
    }
}

Var BoundParams::operator()(const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ConfigError("missing parameter '" + name + "'");
    return it->second;
}

Bundle parameter_gradients(Tape& tape, Var loss, const BoundParams& params) {
    std::vector<Var> inputs;
    std::vector<std::string> names;
    for (const auto& [name, v] : params.vars()) {
        names.push_back(name);
        inputs.push_back(v);
    }
    auto grads = tape.gradients(loss, inputs);
    Bundle out;
    for (std::size_t i = 0; i < names.size(); ++i) out.emplace(names[i], std::move(grads[i]));
    return out;
}

void sgd_update(Bundle& params, const Bundle& grads, double lr) {
    for (const auto& [name, g] : grads) {
        Tensor& p = params.at(name);
        check_same_shape(p, g, "sgd_update");
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
    }
}

double gradient_norm(const Bundle& grads) {
    double acc = 0.0;
    for (const auto& [_, g] : grads) acc += squared_norm(g);
    return std::sqrt(acc);
}

double clip_gradients(Bundle& grads, double max_norm) {
    const double norm = gradient_norm(grads);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& [_, g] : grads)
            for (double& v : g.values()) v *= s;
    }
    return norm;
}

Tensor random_normal(Shape shape, double stddev, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> n(0.0, stddev);
    for (auto& v : t.values()) v = n(rng);
    return t;
}

} // namespace diffedit
