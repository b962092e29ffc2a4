#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "diffedit/tensor.hpp"

namespace diffedit {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode recorder over a closed set of primitives.
///
/// Nodes are appended in evaluation order, so reverse index order is a valid
/// topological order for the backward sweep. Nodes that do not depend on any
/// leaf are recorded without a backward closure and never visited.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var leaf(Tensor value);

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Gradients of a scalar `output` with respect to each of `inputs`.
    std::vector<Tensor> gradients(Var output, std::span<const Var> inputs);

    // Used by primitive implementations.
    using Backward = std::function<void(Tape&, const Tensor& grad_out)>;
    Var record(Tensor value, std::vector<std::size_t> parents, Backward backward);
    void accumulate(std::size_t id, const Tensor& g);
    Var owned(Var v) const;

private:
    struct Node {
        Tensor value;
        bool requires_grad = false;
        Backward backward;
    };
    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
};

/// Gradient of scalar `output` w.r.t. `input`. Throws GraphError when the
/// input does not belong to the output's tape.
Tensor grad(Tape& tape, Var output, Var input);

// Primitive set. Binary elementwise ops require identical shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var add_row(Var a, Var row);         // a[m x n] + row[n] on every row
Var mul_row(Var a, Var row);         // a[m x n] * row[n] on every row
Var matmul(Var a, Var b);
Var transpose(Var a);
Var softmax_rows(Var x);
Var layer_norm_rows(Var x, double eps = 1e-5);
Var gelu(Var x);
Var tanh(Var x);
Var reshape(Var x, Shape shape);
Var slice_rows(Var x, std::size_t begin, std::size_t count);
Var concat_rows(std::span<const Var> parts);
Var gather(Var x, std::vector<std::size_t> flat_indices, Shape out_shape);
Var sum(Var x);
Var mean(Var x);
Var cosine_rows(Var a, Var b, double norm_floor = 1e-12);  // -> [m]

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// Composites.
Var mse(Var a, Var b);

} // namespace diffedit
