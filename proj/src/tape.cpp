#include "diffedit/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "diffedit/error.hpp"

namespace diffedit {

const Tensor& Var::value() const {
    if (!tape) throw GraphError("unbound Var");
    return tape->value(id);
}

Var Tape::constant(Tensor value) { return record(std::move(value), {}, nullptr); }

Var Tape::leaf(Tensor value) {
    nodes_.push_back(Node{std::move(value), true, nullptr});
    return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, Backward backward) {
    bool needs = std::any_of(parents.begin(), parents.end(), [&](std::size_t p) { return nodes_[p].requires_grad; });
    nodes_.push_back(Node{std::move(value), needs, needs ? std::move(backward) : nullptr});
    return Var{this, nodes_.size() - 1};
}

Var Tape::owned(Var v) const {
    if (v.tape != this || v.id >= nodes_.size()) throw GraphError("Var does not belong to this tape");
    return v;
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
    if (!nodes_[id].requires_grad) return;
    Tensor& slot = grads_[id];
    if (slot.empty()) {
        slot = g;
    } else {
        slot += g;
    }
}

std::vector<Tensor> Tape::gradients(Var output, std::span<const Var> inputs) {
    owned(output);
    for (const Var& in : inputs) {
        if (in.tape != this || in.id >= nodes_.size()) throw GraphError("gradient input is not on the output's tape");
    }
    if (output.value().size() != 1) {
        throw GraphError("gradient output must be scalar, got " + shape_str(output.shape()));
    }
    grads_.assign(nodes_.size(), Tensor{});
    if (nodes_[output.id].requires_grad) {
        grads_[output.id] = Tensor(output.shape(), 1.0);
        for (std::size_t i = output.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.backward || grads_[i].empty()) continue;
            n.backward(*this, grads_[i]);
        }
    }
    std::vector<Tensor> out;
    out.reserve(inputs.size());
    for (const Var& in : inputs) {
        const Tensor& g = grads_[in.id];
        out.push_back(g.empty() ? Tensor(in.shape(), 0.0) : g);
    }
    grads_.clear();
    return out;
}

Tensor grad(Tape& tape, Var output, Var input) {
    Var in[] = {input};
    return std::move(tape.gradients(output, in).front());
}

namespace {

Tape& tape_of(Var a, Var b) {
    if (!a.tape || a.tape != b.tape) throw GraphError("operands live on different tapes");
    return *a.tape;
}

// out[m x n] = a[m x k] * b[n x k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor out({m, n});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += pa[i * k + p] * pb[j * k + p];
            out[i * n + j] = s;
        }
    }
    return out;
}

// out[k x n] = a[m x k]^T * b[m x n]
Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({k, n});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            const double* brow = pb + i * n;
            double* orow = po + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

void require_row(const Tensor& a, const Tensor& row, const char* op) {
    require_matrix(a, op);
    if (row.size() != a.dim(1)) {
        throw DimensionError(std::string(op) + ": row of shape " + shape_str(row.shape()) + " does not match " +
                             shape_str(a.shape()));
    }
}

constexpr double kGeluC = 0.044715;

} // namespace

Var add(Var a, Var b) {
    Tape& t = tape_of(a, b);
    Tensor out = a.value() + b.value();
    return t.record(std::move(out), {a.id, b.id}, [a, b](Tape& tp, const Tensor& g) {
        tp.accumulate(a.id, g);
        tp.accumulate(b.id, g);
    });
}

Var sub(Var a, Var b) {
    Tape& t = tape_of(a, b);
    Tensor out = a.value() - b.value();
    return t.record(std::move(out), {a.id, b.id}, [a, b](Tape& tp, const Tensor& g) {
        tp.accumulate(a.id, g);
        tp.accumulate(b.id, -1.0 * g);
    });
}

Var mul(Var a, Var b) {
    Tape& t = tape_of(a, b);
    Tensor out = a.value() * b.value();
    return t.record(std::move(out), {a.id, b.id}, [a, b](Tape& tp, const Tensor& g) {
        if (tp.requires_grad(a)) tp.accumulate(a.id, g * tp.value(b.id));
        if (tp.requires_grad(b)) tp.accumulate(b.id, g * tp.value(a.id));
    });
}

Var scale(Var a, double s) {
    Tape& t = *a.tape;
    return t.record(s * a.value(), {a.id}, [a, s](Tape& tp, const Tensor& g) { tp.accumulate(a.id, s * g); });
}

Var add_scalar(Var a, double s) {
    Tape& t = *a.tape;
    Tensor out = a.value();
    for (auto& v : out.values()) v += s;
    return t.record(std::move(out), {a.id}, [a](Tape& tp, const Tensor& g) { tp.accumulate(a.id, g); });
}

Var add_row(Var a, Var row) {
    Tape& t = tape_of(a, row);
    const Tensor& av = a.value();
    const Tensor& rv = row.value();
    require_row(av, rv, "add_row");
    const std::size_t m = av.dim(0), n = av.dim(1);
    Tensor out = av;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += rv[j];
    return t.record(std::move(out), {a.id, row.id}, [a, row, m, n](Tape& tp, const Tensor& g) {
        tp.accumulate(a.id, g);
        if (tp.requires_grad(row)) {
            Tensor gr(tp.value(row.id).shape(), 0.0);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
            tp.accumulate(row.id, gr);
        }
    });
}

Var mul_row(Var a, Var row) {
    Tape& t = tape_of(a, row);
    const Tensor& av = a.value();
    const Tensor& rv = row.value();
    require_row(av, rv, "mul_row");
    const std::size_t m = av.dim(0), n = av.dim(1);
    Tensor out = av;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] *= rv[j];
    return t.record(std::move(out), {a.id, row.id}, [a, row, m, n](Tape& tp, const Tensor& g) {
        const Tensor& av = tp.value(a.id);
        const Tensor& rv = tp.value(row.id);
        if (tp.requires_grad(a)) {
            Tensor ga = g;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] *= rv[j];
            tp.accumulate(a.id, ga);
        }
        if (tp.requires_grad(row)) {
            Tensor gr(rv.shape(), 0.0);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j] * av[i * n + j];
            tp.accumulate(row.id, gr);
        }
    });
}

Var matmul(Var a, Var b) {
    Tape& t = tape_of(a, b);
    Tensor out = matmul(a.value(), b.value());
    return t.record(std::move(out), {a.id, b.id}, [a, b](Tape& tp, const Tensor& g) {
        if (tp.requires_grad(a)) tp.accumulate(a.id, matmul_nt(g, tp.value(b.id)));
        if (tp.requires_grad(b)) tp.accumulate(b.id, matmul_tn(tp.value(a.id), g));
    });
}

Var transpose(Var a) {
    Tape& t = *a.tape;
    require_matrix(a.value(), "transpose");
    return t.record(transpose(a.value()), {a.id},
                    [a](Tape& tp, const Tensor& g) { tp.accumulate(a.id, transpose(g)); });
}

Var softmax_rows(Var x) {
    Tape& t = *x.tape;
    require_matrix(x.value(), "softmax_rows");
    const std::size_t out_id = t.size();
    return t.record(softmax_rows(x.value()), {x.id}, [x, out_id](Tape& tp, const Tensor& g) {
        const Tensor& y = tp.value(out_id);
        const std::size_t m = y.dim(0), n = y.dim(1);
        Tensor gx(y.shape());
        for (std::size_t i = 0; i < m; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * y[i * n + j];
            for (std::size_t j = 0; j < n; ++j) gx[i * n + j] = y[i * n + j] * (g[i * n + j] - s);
        }
        tp.accumulate(x.id, gx);
    });
}

Var layer_norm_rows(Var x, double eps) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    require_matrix(xv, "layer_norm_rows");
    const std::size_t m = xv.dim(0), n = xv.dim(1);
    Tensor y(xv.shape());
    std::vector<double> inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += xv[i * n + j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            double d = xv[i * n + j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) y[i * n + j] = (xv[i * n + j] - mu) * inv_std[i];
    }
    const std::size_t out_id = t.size();
    return t.record(std::move(y), {x.id}, [x, out_id, inv_std = std::move(inv_std)](Tape& tp, const Tensor& g) {
        const Tensor& y = tp.value(out_id);
        const std::size_t m = y.dim(0), n = y.dim(1);
        const double inv_n = 1.0 / static_cast<double>(n);
        Tensor gx(y.shape());
        for (std::size_t i = 0; i < m; ++i) {
            double gm = 0.0, gy = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                gm += g[i * n + j];
                gy += g[i * n + j] * y[i * n + j];
            }
            gm *= inv_n;
            gy *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
                gx[i * n + j] = inv_std[i] * (g[i * n + j] - gm - y[i * n + j] * gy);
            }
        }
        tp.accumulate(x.id, gx);
    });
}

Var gelu(Var x) {
    Tape& t = *x.tape;
    const double k = std::sqrt(2.0 / std::numbers::pi);
    Tensor y = x.value();
    for (auto& v : y.values()) v = 0.5 * v * (1.0 + std::tanh(k * (v + kGeluC * v * v * v)));
    return t.record(std::move(y), {x.id}, [x, k](Tape& tp, const Tensor& g) {
        const Tensor& xv = tp.value(x.id);
        Tensor gx(xv.shape());
        for (std::size_t i = 0; i < xv.size(); ++i) {
            double v = xv[i];
            double th = std::tanh(k * (v + kGeluC * v * v * v));
            double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * k * (1.0 + 3.0 * kGeluC * v * v);
            gx[i] = g[i] * d;
        }
        tp.accumulate(x.id, gx);
    });
}

Var tanh(Var x) {
    Tape& t = *x.tape;
    Tensor y = x.value();
    for (auto& v : y.values()) v = std::tanh(v);
    const std::size_t out_id = t.size();
    return t.record(std::move(y), {x.id}, [x, out_id](Tape& tp, const Tensor& g) {
        const Tensor& y = tp.value(out_id);
        Tensor gx(y.shape());
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] = g[i] * (1.0 - y[i] * y[i]);
        tp.accumulate(x.id, gx);
    });
}

Var reshape(Var x, Shape shape) {
    Tape& t = *x.tape;
    Tensor y = x.value().reshaped(std::move(shape));
    return t.record(std::move(y), {x.id}, [x](Tape& tp, const Tensor& g) {
        tp.accumulate(x.id, g.reshaped(tp.value(x.id).shape()));
    });
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    require_matrix(xv, "slice_rows");
    if (count == 0 || begin + count > xv.dim(0)) {
        throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                             ") out of range for " + shape_str(xv.shape()));
    }
    const std::size_t n = xv.dim(1);
    std::vector<double> data(xv.values().begin() + static_cast<std::ptrdiff_t>(begin * n),
                             xv.values().begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
    return t.record(Tensor({count, n}, std::move(data)), {x.id}, [x, begin, n](Tape& tp, const Tensor& g) {
        Tensor gx(tp.value(x.id).shape(), 0.0);
        std::copy(g.values().begin(), g.values().end(), gx.values().begin() + static_cast<std::ptrdiff_t>(begin * n));
        tp.accumulate(x.id, gx);
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    Tape& t = *parts.front().tape;
    const std::size_t n = parts.front().value().cols();
    std::vector<double> data;
    std::vector<std::size_t> ids;
    std::vector<std::size_t> row_counts;
    std::size_t rows = 0;
    for (const Var& p : parts) {
        t.owned(p);
        const Tensor& v = p.value();
        if (v.rank() != 2 || v.dim(1) != n) {
            throw DimensionError("concat_rows: width mismatch " + shape_str(v.shape()) + " vs width " +
                                 std::to_string(n));
        }
        data.insert(data.end(), v.values().begin(), v.values().end());
        ids.push_back(p.id);
        row_counts.push_back(v.dim(0));
        rows += v.dim(0);
    }
    return t.record(Tensor({rows, n}, std::move(data)), ids, [ids, row_counts, n](Tape& tp, const Tensor& g) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            const std::size_t len = row_counts[k] * n;
            if (tp.requires_grad(ids[k])) {
                std::vector<double> part(g.values().begin() + static_cast<std::ptrdiff_t>(offset),
                                         g.values().begin() + static_cast<std::ptrdiff_t>(offset + len));
                tp.accumulate(ids[k], Tensor({row_counts[k], n}, std::move(part)));
            }
            offset += len;
        }
    });
}

Var gather(Var x, std::vector<std::size_t> flat_indices, Shape out_shape) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    if (shape_size(out_shape) != flat_indices.size()) {
        throw DimensionError("gather: " + std::to_string(flat_indices.size()) + " indices for output shape " +
                             shape_str(out_shape));
    }
    Tensor y(std::move(out_shape));
    for (std::size_t i = 0; i < flat_indices.size(); ++i) {
        if (flat_indices[i] >= xv.size()) throw RangeError("gather: index out of range");
        y[i] = xv[flat_indices[i]];
    }
    return t.record(std::move(y), {x.id}, [x, idx = std::move(flat_indices)](Tape& tp, const Tensor& g) {
        Tensor gx(tp.value(x.id).shape(), 0.0);
        for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += g[i];
        tp.accumulate(x.id, gx);
    });
}

Var sum(Var x) {
    Tape& t = *x.tape;
    return t.record(Tensor::scalar(sum(x.value())), {x.id}, [x](Tape& tp, const Tensor& g) {
        tp.accumulate(x.id, Tensor(tp.value(x.id).shape(), g[0]));
    });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var cosine_rows(Var a, Var b, double norm_floor) {
    Tape& t = tape_of(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    check_same_shape(av, bv, "cosine_rows");
    const std::size_t m = av.rows(), n = av.cols();
    Tensor c({m});
    std::vector<double> na(m), nb(m);
    for (std::size_t i = 0; i < m; ++i) {
        double ab = 0.0, aa = 0.0, bb = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            ab += av[i * n + j] * bv[i * n + j];
            aa += av[i * n + j] * av[i * n + j];
            bb += bv[i * n + j] * bv[i * n + j];
        }
        na[i] = std::max(std::sqrt(aa), norm_floor);
        nb[i] = std::max(std::sqrt(bb), norm_floor);
        c[i] = ab / (na[i] * nb[i]);
    }
    const std::size_t out_id = t.size();
    return t.record(std::move(c), {a.id, b.id},
                    [a, b, out_id, m, n, norm_floor, na = std::move(na), nb = std::move(nb)](Tape& tp, const Tensor& g) {
                        const Tensor& av = tp.value(a.id);
                        const Tensor& bv = tp.value(b.id);
                        const Tensor& c = tp.value(out_id);
                        // Below the floor the norm is a constant, so its derivative term drops.
                        auto side = [&](const Tensor& self, const Tensor& other, const std::vector<double>& ns,
                                        const std::vector<double>& no) {
                            Tensor gs(self.shape());
                            for (std::size_t i = 0; i < m; ++i) {
                                const bool clamped = ns[i] <= norm_floor;
                                for (std::size_t j = 0; j < n; ++j) {
                                    double d = other[i * n + j] / (ns[i] * no[i]);
                                    if (!clamped) d -= c[i] * self[i * n + j] / (ns[i] * ns[i]);
                                    gs[i * n + j] = g[i] * d;
                                }
                            }
                            return gs;
                        };
                        if (tp.requires_grad(a)) tp.accumulate(a.id, side(av, bv, na, nb));
                        if (tp.requires_grad(b)) tp.accumulate(b.id, side(bv, av, nb, na));
                    });
}

Var mse(Var a, Var b) {
    Var d = sub(a, b);
    return mean(mul(d, d));
}

} // namespace diffedit
