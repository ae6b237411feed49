#include "imnav/numcore/ops.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "imnav/errors.hpp"
#include "imnav/numcore/kernels.hpp"

namespace imnav::nc {

namespace {

template <typename T>
std::string shape_str(BasicVar<T> v) { return std::to_string(v.rows()) + "x" + std::to_string(v.cols()); }

template <typename T>
void require_same_tape(BasicVar<T> a, BasicVar<T> b) {
    if (a.tape != b.tape) throw ContractError("operands recorded on different tapes");
}

template <typename T>
void require_same_shape(BasicVar<T> a, BasicVar<T> b, const char* op) {
    require_same_tape(a, b);
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T, typename F>
BasicVar<T> unary(BasicVar<T> a, F f, typename BasicTape<T>::Backward bw) {
    BasicTape<T>& t = *a.tape;
    const T* x = a.data();
    std::vector<T> out(a.size());
    for (int i = 0; i < a.size(); ++i) out[i] = f(x[i]);
    return t.push(a.rows(), a.cols(), std::move(out), t.any_needs_grad({a}), std::move(bw));
}

}  // namespace

template <typename T>
BasicVar<T> matmul(BasicVar<T> a, BasicVar<T> b, bool transpose_b) {
    require_same_tape(a, b);
    const int m = a.rows();
    const int k = a.cols();
    const int kb = transpose_b ? b.cols() : b.rows();
    const int n = transpose_b ? b.rows() : b.cols();
    if (k != kb) throw ShapeError("matmul: inner dimensions differ " + shape_str(a) + " vs " + shape_str(b));
    std::vector<T> out(static_cast<std::size_t>(m) * n);
    kernels::gemm<T>({a.data(), b.data(), out.data(), m, k, n, false, transpose_b, false});
    const int ia = a.id, ib = b.id;
    return a.tape->push(m, n, std::move(out), a.tape->any_needs_grad({a, b}),
                        [ia, ib, m, k, n, transpose_b](BasicTape<T>& t, int self) {
                            const T* g = t.node(self).grad.data();
                            if (t.node(ia).needs_grad) {
                                kernels::gemm<T>({g, t.node(ib).data(), t.grad_of(ia), m, n, k, false, !transpose_b, true});
                            }
                            if (t.node(ib).needs_grad) {
                                if (!transpose_b) {
                                    kernels::gemm<T>({t.node(ia).data(), g, t.grad_of(ib), k, m, n, true, false, true});
                                } else {
                                    kernels::gemm<T>({g, t.node(ia).data(), t.grad_of(ib), n, m, k, true, false, true});
                                }
                            }
                        });
}

template <typename T>
BasicVar<T> add(BasicVar<T> a, BasicVar<T> b) {
    require_same_shape(a, b, "add");
    std::vector<T> out(a.size());
    const T* x = a.data();
    const T* y = b.data();
    for (int i = 0; i < a.size(); ++i) out[i] = x[i] + y[i];
    const int ia = a.id, ib = b.id;
    return a.tape->push(a.rows(), a.cols(), std::move(out), a.tape->any_needs_grad({a, b}), [ia, ib](BasicTape<T>& t, int self) {
        const auto& g = t.node(self).grad;
        for (int in : {ia, ib}) {
            if (!t.node(in).needs_grad) continue;
            T* d = t.grad_of(in);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
    });
}

template <typename T>
BasicVar<T> sub(BasicVar<T> a, BasicVar<T> b) {
    require_same_shape(a, b, "sub");
    std::vector<T> out(a.size());
    const T* x = a.data();
    const T* y = b.data();
    for (int i = 0; i < a.size(); ++i) out[i] = x[i] - y[i];
    const int ia = a.id, ib = b.id;
    return a.tape->push(a.rows(), a.cols(), std::move(out), a.tape->any_needs_grad({a, b}), [ia, ib](BasicTape<T>& t, int self) {
        const auto& g = t.node(self).grad;
        if (t.node(ia).needs_grad) {
            T* d = t.grad_of(ia);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
        if (t.node(ib).needs_grad) {
            T* d = t.grad_of(ib);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
        }
    });
}

template <typename T>
BasicVar<T> mul(BasicVar<T> a, BasicVar<T> b) {
    require_same_shape(a, b, "mul");
    std::vector<T> out(a.size());
    const T* x = a.data();
    const T* y = b.data();
    for (int i = 0; i < a.size(); ++i) out[i] = x[i] * y[i];
    const int ia = a.id, ib = b.id;
    return a.tape->push(a.rows(), a.cols(), std::move(out), a.tape->any_needs_grad({a, b}), [ia, ib](BasicTape<T>& t, int self) {
        const auto& g = t.node(self).grad;
        const T* x = t.node(ia).data();
        const T* y = t.node(ib).data();
        if (t.node(ia).needs_grad) {
            T* d = t.grad_of(ia);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i];
        }
        if (t.node(ib).needs_grad) {
            T* d = t.grad_of(ib);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * x[i];
        }
    });
}

template <typename T>
BasicVar<T> add_row(BasicVar<T> a, BasicVar<T> row) {
    require_same_tape(a, row);
    if (row.rows() != 1 || row.cols() != a.cols())
        throw ShapeError("add_row: expected 1x" + std::to_string(a.cols()) + " row, got " + shape_str(row));
    const int m = a.rows(), n = a.cols();
    std::vector<T> out(a.size());
    const T* x = a.data();
    const T* r = row.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] + r[j];
    const int ia = a.id, ir = row.id;
    return a.tape->push(m, n, std::move(out), a.tape->any_needs_grad({a, row}), [ia, ir, m, n](BasicTape<T>& t, int self) {
        const auto& g = t.node(self).grad;
        if (t.node(ia).needs_grad) {
            T* d = t.grad_of(ia);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
        if (t.node(ir).needs_grad) {
            T* d = t.grad_of(ir);
            for (int j = 0; j < n; ++j) {
                double s = 0.0;
                for (int i = 0; i < m; ++i) s += g[i * n + j];
                d[j] += static_cast<T>(s);
            }
        }
    });
}

template <typename T>
BasicVar<T> scale(BasicVar<T> a, double s) {
    const int ia = a.id;
    return unary(a, [s](T x) { return x * s; }, [ia, s](BasicTape<T>& t, int self) {
        const auto& g = t.node(self).grad;
        T* d = t.grad_of(ia);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * s;
    });
}

template <typename T>
BasicVar<T> add_const(BasicVar<T> a, double c) {
    const int ia = a.id;
    return unary(a, [c](T x) { return x + c; }, [ia](BasicTape<T>& t, int self) {
        const auto& g = t.node(self).grad;
        T* d = t.grad_of(ia);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    });
}

template <typename T>
BasicVar<T> relu(BasicVar<T> a) {
    const int ia = a.id;
    if (a.tape->tracing_branches()) {
        const T* x = a.data();
        for (int i = 0; i < a.size(); ++i) a.tape->branch_trace().push_back(x[i] > T(0));
    }
    return unary(a, [](T x) { return x > T(0) ? x : T(0); }, [ia](BasicTape<T>& t, int self) {
        const auto& g = t.node(self).grad;
        const T* x = t.node(ia).data();
        T* d = t.grad_of(ia);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] > T(0)) d[i] += g[i];
    });
}

template <typename T>
BasicVar<T> sigmoid(BasicVar<T> a) {
    const int ia = a.id;
    return unary(a, [](T x) { return static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x)))); },
                 [ia](BasicTape<T>& t, int self) {
                     const auto& g = t.node(self).grad;
                     const T* y = t.node(self).data();
                     T* d = t.grad_of(ia);
                     for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i] * (T(1) - y[i]);
                 });
}

template <typename T>
BasicVar<T> softmax(BasicVar<T> a, int axis) {
    if (axis != 0 && axis != 1) throw ShapeError("softmax: axis must be 0 or 1");
    const int m = a.rows(), n = a.cols();
    // Lines along the reduction axis: count, length, and strides.
    const int lines = axis == 1 ? m : n;
    const int len = axis == 1 ? n : m;
    const int line_stride = axis == 1 ? n : 1;
    const int elem_stride = axis == 1 ? 1 : n;
    const T* x = a.data();
    std::vector<T> out(a.size());
    for (int l = 0; l < lines; ++l) {
        const int base = l * line_stride;
        double mx = -std::numeric_limits<double>::infinity();
        for (int e = 0; e < len; ++e) mx = std::max(mx, static_cast<double>(x[base + e * elem_stride]));
        double s = 0.0;
        for (int e = 0; e < len; ++e) s += std::exp(x[base + e * elem_stride] - mx);
        for (int e = 0; e < len; ++e)
            out[base + e * elem_stride] = static_cast<T>(std::exp(x[base + e * elem_stride] - mx) / s);
    }
    const int ia = a.id;
    return a.tape->push(m, n, std::move(out), a.tape->any_needs_grad({a}),
                        [ia, lines, len, line_stride, elem_stride](BasicTape<T>& t, int self) {
                            const auto& g = t.node(self).grad;
                            const T* y = t.node(self).data();
                            T* d = t.grad_of(ia);
                            for (int l = 0; l < lines; ++l) {
                                const int base = l * line_stride;
                                double dot = 0.0;
                                for (int e = 0; e < len; ++e) {
                                    const int i = base + e * elem_stride;
                                    dot += static_cast<double>(g[i]) * y[i];
                                }
                                for (int e = 0; e < len; ++e) {
                                    const int i = base + e * elem_stride;
                                    d[i] += static_cast<T>(y[i] * (g[i] - dot));
                                }
                            }
                        });
}

template <typename T>
BasicVar<T> dropout(BasicVar<T> a, double rate, Rng& rng, bool train) {
    if (!(rate >= T(0) && rate < T(1))) throw ContractError("dropout: rate must be in [0, 1)");
    if (!train || rate == T(0)) return a;
    const T keep_scale = T(1) / (T(1) - rate);
    std::vector<T> mask(a.size());
    std::bernoulli_distribution keep(1.0 - rate);
    for (auto& v : mask) v = keep(rng) ? keep_scale : T(0);
    std::vector<T> out(a.size());
    const T* x = a.data();
    for (int i = 0; i < a.size(); ++i) out[i] = x[i] * mask[i];
    const int ia = a.id;
    BasicVar<T> r = a.tape->push(a.rows(), a.cols(), std::move(out), a.tape->any_needs_grad({a}), [ia](BasicTape<T>& t, int self) {
        const auto& g = t.node(self).grad;
        const auto& mk = t.node(self).saved;
        T* d = t.grad_of(ia);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * mk[i];
    });
    a.tape->node(r.id).saved = std::move(mask);
    return r;
}

template <typename T>
BasicVar<T> concat(const std::vector<BasicVar<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
    BasicTape<T>& t = *parts.front().tape;
    int rows = 0, cols = 0;
    bool needs = false;
    for (const BasicVar<T>& p : parts) {
        if (p.tape != &t) throw ContractError("concat: operands on different tapes");
        needs = needs || t.node(p.id).needs_grad;
        if (axis == 0) {
            if (cols == 0) cols = p.cols();
            if (p.cols() != cols) throw ShapeError("concat: column counts differ");
            rows += p.rows();
        } else {
            if (rows == 0) rows = p.rows();
            if (p.rows() != rows) throw ShapeError("concat: row counts differ");
            cols += p.cols();
        }
    }
    std::vector<T> out(static_cast<std::size_t>(rows) * cols);
    std::vector<int> ids;
    int offset = 0;
    for (const BasicVar<T>& p : parts) {
        ids.push_back(p.id);
        const T* x = p.data();
        if (axis == 0) {
            std::copy(x, x + p.size(), out.begin() + static_cast<long>(offset) * cols);
            offset += p.rows();
        } else {
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < p.cols(); ++c) out[r * cols + offset + c] = x[r * p.cols() + c];
            offset += p.cols();
        }
    }
    return t.push(rows, cols, std::move(out), needs && t.grad_enabled(), [ids, axis, cols](BasicTape<T>& tp, int self) {
        const auto& g = tp.node(self).grad;
        int off = 0;
        for (int id : ids) {
            const int pr = tp.node(id).rows, pc = tp.node(id).cols;
            if (tp.node(id).needs_grad) {
                T* d = tp.grad_of(id);
                for (int r = 0; r < pr; ++r)
                    for (int c = 0; c < pc; ++c)
                        d[r * pc + c] += axis == 0 ? g[(off + r) * cols + c] : g[r * cols + off + c];
            }
            off += axis == 0 ? pr : pc;
        }
    });
}

template <typename T>
BasicVar<T> mean(BasicVar<T> a, int axis) {
    if (axis != 0 && axis != 1) throw ShapeError("mean: axis must be 0 or 1");
    const int m = a.rows(), n = a.cols();
    const T* x = a.data();
    std::vector<T> out(axis == 0 ? n : m);
    if (axis == 0) {
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int i = 0; i < m; ++i) s += x[i * n + j];
            out[j] = static_cast<T>(s / m);
        }
    } else {
        for (int i = 0; i < m; ++i) {
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += x[i * n + j];
            out[i] = static_cast<T>(s / n);
        }
    }
    const int ia = a.id;
    return a.tape->push(axis == 0 ? 1 : m, axis == 0 ? n : 1, std::move(out), a.tape->any_needs_grad({a}),
                        [ia, axis, m, n](BasicTape<T>& t, int self) {
                            const auto& g = t.node(self).grad;
                            T* d = t.grad_of(ia);
                            for (int i = 0; i < m; ++i)
                                for (int j = 0; j < n; ++j)
                                    d[i * n + j] += axis == 0 ? g[j] / static_cast<T>(m) : g[i] / static_cast<T>(n);
                        });
}

template <typename T>
BasicVar<T> sum(BasicVar<T> a) {
    double s = 0.0;
    const T* x = a.data();
    for (int i = 0; i < a.size(); ++i) s += x[i];
    const int ia = a.id;
    return a.tape->push(1, 1, {static_cast<T>(s)}, a.tape->any_needs_grad({a}), [ia](BasicTape<T>& t, int self) {
        const T g = t.node(self).grad[0];
        T* d = t.grad_of(ia);
        for (int i = 0; i < t.node(ia).size(); ++i) d[i] += g;
    });
}

template <typename T>
BasicVar<T> l2_norm(BasicVar<T> a) {
    double s = 0.0;
    const T* x = a.data();
    for (int i = 0; i < a.size(); ++i) s += static_cast<double>(x[i]) * x[i];
    const double norm = std::sqrt(s);
    const int ia = a.id;
    return a.tape->push(1, 1, {static_cast<T>(norm)}, a.tape->any_needs_grad({a}), [ia, norm](BasicTape<T>& t, int self) {
        if (norm == 0.0) return;
        const double g = t.node(self).grad[0];
        const T* x = t.node(ia).data();
        T* d = t.grad_of(ia);
        for (int i = 0; i < t.node(ia).size(); ++i) d[i] += static_cast<T>(g * x[i] / norm);
    });
}

template <typename T>
BasicVar<T> transpose(BasicVar<T> a) {
    const int m = a.rows(), n = a.cols();
    const T* x = a.data();
    std::vector<T> out(a.size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
    const int ia = a.id;
    return a.tape->push(n, m, std::move(out), a.tape->any_needs_grad({a}), [ia, m, n](BasicTape<T>& t, int self) {
        const auto& g = t.node(self).grad;
        T* d = t.grad_of(ia);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) d[i * n + j] += g[j * m + i];
    });
}

template <typename T>
BasicVar<T> gather_rows(BasicVar<T> a, const std::vector<int>& rows) {
    const int n = a.cols();
    const T* x = a.data();
    std::vector<T> out(rows.size() * static_cast<std::size_t>(n));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] < 0 || rows[r] >= a.rows()) throw LookupError("gather_rows: row index out of range");
        std::copy(x + static_cast<long>(rows[r]) * n, x + static_cast<long>(rows[r] + 1) * n,
                  out.begin() + static_cast<long>(r) * n);
    }
    const int ia = a.id;
    return a.tape->push(static_cast<int>(rows.size()), n, std::move(out), a.tape->any_needs_grad({a}),
                        [ia, rows, n](BasicTape<T>& t, int self) {
                            const auto& g = t.node(self).grad;
                            T* d = t.grad_of(ia);
                            for (std::size_t r = 0; r < rows.size(); ++r)
                                for (int j = 0; j < n; ++j) d[rows[r] * n + j] += g[r * n + j];
                        });
}

template <typename T>
BasicVar<T> slice_rows(BasicVar<T> a, int start, int count) {
    if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("slice_rows: range out of bounds");
    std::vector<int> idx(count);
    for (int i = 0; i < count; ++i) idx[i] = start + i;
    return gather_rows(a, idx);
}

template <typename T>
BasicVar<T> cosine_similarity(BasicVar<T> a, BasicVar<T> b) {
    require_same_tape(a, b);
    if (a.size() != b.size()) throw ShapeError("cosine_similarity: size mismatch");
    const T* x = a.data();
    const T* y = b.data();
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (int i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(x[i]) * y[i];
        nx += static_cast<double>(x[i]) * x[i];
        ny += static_cast<double>(y[i]) * y[i];
    }
    nx = std::sqrt(nx);
    ny = std::sqrt(ny);
    if (nx <= kNormEpsilon || ny <= kNormEpsilon)
        return a.tape->push(1, 1, {T(0)}, false, [](BasicTape<T>&, int) {});
    const double c = dot / (nx * ny);
    const int ia = a.id, ib = b.id;
    return a.tape->push(1, 1, {static_cast<T>(c)}, a.tape->any_needs_grad({a, b}),
                        [ia, ib, nx, ny, c](BasicTape<T>& t, int self) {
                            const double g = t.node(self).grad[0];
                            const T* x = t.node(ia).data();
                            const T* y = t.node(ib).data();
                            const int n = t.node(ia).size();
                            if (t.node(ia).needs_grad) {
                                T* d = t.grad_of(ia);
                                for (int i = 0; i < n; ++i)
                                    d[i] += static_cast<T>(g * (y[i] / (nx * ny) - c * x[i] / (nx * nx)));
                            }
                            if (t.node(ib).needs_grad) {
                                T* d = t.grad_of(ib);
                                for (int i = 0; i < n; ++i)
                                    d[i] += static_cast<T>(g * (x[i] / (nx * ny) - c * y[i] / (ny * ny)));
                            }
                        });
}

template <typename T>
BasicVar<T> cross_entropy(BasicVar<T> logits, int target) {
    const int n = logits.size();
    if (target < 0 || target >= n) throw LookupError("cross_entropy: target index out of range");
    const T* x = logits.data();
    double mx = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) mx = std::max(mx, static_cast<double>(x[i]));
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::exp(x[i] - mx);
    const double lse = mx + std::log(s);
    const double loss = lse - x[target];
    const int il = logits.id;
    return logits.tape->push(1, 1, {static_cast<T>(loss)}, logits.tape->any_needs_grad({logits}),
                             [il, target, lse, n](BasicTape<T>& t, int self) {
                                 const double g = t.node(self).grad[0];
                                 const T* x = t.node(il).data();
                                 T* d = t.grad_of(il);
                                 for (int i = 0; i < n; ++i) {
                                     const double p = std::exp(x[i] - lse);
                                     d[i] += static_cast<T>(g * (p - (i == target ? 1.0 : 0.0)));
                                 }
                             });
}

template <typename T>
BasicVar<T> attention(BasicVar<T> q, BasicVar<T> k, BasicVar<T> v, int heads, const std::vector<std::uint8_t>& key_mask, AttentionWeights* record) {
    require_same_tape(q, k);
    require_same_tape(q, v);
    const int m = q.rows(), n = k.rows(), d = q.cols();
    if (k.cols() != d || v.cols() != d || v.rows() != n) throw ShapeError("attention: q/k/v shapes disagree");
    if (heads <= 0 || d % heads != 0) throw ShapeError("attention: width not divisible by head count");
    if (!key_mask.empty() && static_cast<int>(key_mask.size()) != n) throw ShapeError("attention: mask length != key count");
    const int dh = d / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    const T* Q = q.data();
    const T* K = k.data();
    const T* V = v.data();
    std::vector<T> probs(static_cast<std::size_t>(heads) * m * n, T(0));
    std::vector<T> out(static_cast<std::size_t>(m) * d, T(0));
    std::vector<double> scores(n);
    std::vector<double> acc(dh);
    for (int h = 0; h < heads; ++h) {
        const int off = h * dh;
        for (int i = 0; i < m; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < n; ++j) {
                if (!key_mask.empty() && !key_mask[j]) {
                    scores[j] = -std::numeric_limits<double>::infinity();
                    continue;
                }
                double s = 0.0;
                for (int c = 0; c < dh; ++c) s += static_cast<double>(Q[i * d + off + c]) * K[j * d + off + c];
                scores[j] = s * sc;
                mx = std::max(mx, scores[j]);
            }
            T* p = probs.data() + (static_cast<std::size_t>(h) * m + i) * n;
            if (mx == -std::numeric_limits<double>::infinity()) continue;  // every key masked
            double total = 0.0;
            for (int j = 0; j < n; ++j) {
                scores[j] = std::exp(scores[j] - mx);
                total += scores[j];
            }
            for (int j = 0; j < n; ++j) p[j] = static_cast<T>(scores[j] / total);
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int j = 0; j < n; ++j) {
                const double w = p[j];
                for (int c = 0; c < dh; ++c) acc[c] += w * V[j * d + off + c];
            }
            for (int c = 0; c < dh; ++c) out[i * d + off + c] = static_cast<T>(acc[c]);
        }
    }
    if (record) *record = AttentionWeights{heads, m, n, std::vector<float>(probs.begin(), probs.end())};
    const int iq = q.id, ik = k.id, iv = v.id;
    BasicVar<T> r = q.tape->push(m, d, std::move(out), q.tape->any_needs_grad({q, k, v}),
                         [iq, ik, iv, m, n, d, heads, dh, sc](BasicTape<T>& t, int self) {
                             const auto& G = t.node(self).grad;
                             const auto& P = t.node(self).saved;
                             const T* Q = t.node(iq).data();
                             const T* K = t.node(ik).data();
                             const T* V = t.node(iv).data();
                             T* dQ = t.node(iq).needs_grad ? t.grad_of(iq) : nullptr;
                             T* dK = t.node(ik).needs_grad ? t.grad_of(ik) : nullptr;
                             T* dV = t.node(iv).needs_grad ? t.grad_of(iv) : nullptr;
                             std::vector<double> dp(n);
                             for (int h = 0; h < heads; ++h) {
                                 const int off = h * dh;
                                 for (int i = 0; i < m; ++i) {
                                     const T* p = P.data() + (static_cast<std::size_t>(h) * m + i) * n;
                                     double row = 0.0;
                                     for (int j = 0; j < n; ++j) {
                                         double s = 0.0;
                                         for (int c = 0; c < dh; ++c)
                                             s += static_cast<double>(G[i * d + off + c]) * V[j * d + off + c];
                                         dp[j] = s;
                                         row += s * p[j];
                                     }
                                     for (int j = 0; j < n; ++j) {
                                         if (p[j] == T(0)) continue;
                                         if (dV)
                                             for (int c = 0; c < dh; ++c) dV[j * d + off + c] += p[j] * G[i * d + off + c];
                                         const double ds = p[j] * (dp[j] - row) * sc;
                                         if (dQ)
                                             for (int c = 0; c < dh; ++c)
                                                 dQ[i * d + off + c] += static_cast<T>(ds * K[j * d + off + c]);
                                         if (dK)
                                             for (int c = 0; c < dh; ++c)
                                                 dK[j * d + off + c] += static_cast<T>(ds * Q[i * d + off + c]);
                                     }
                                 }
                             }
                         });
    if (q.tape->node(r.id).needs_grad) q.tape->node(r.id).saved = std::move(probs);
    return r;
}

#define IMNAV_INSTANTIATE_OPS(T)                                                                  \
    template BasicVar<T> matmul(BasicVar<T>, BasicVar<T>, bool);                                  \
    template BasicVar<T> add(BasicVar<T>, BasicVar<T>);                                           \
    template BasicVar<T> sub(BasicVar<T>, BasicVar<T>);                                           \
    template BasicVar<T> mul(BasicVar<T>, BasicVar<T>);                                           \
    template BasicVar<T> add_row(BasicVar<T>, BasicVar<T>);                                       \
    template BasicVar<T> scale(BasicVar<T>, double);                                              \
    template BasicVar<T> add_const(BasicVar<T>, double);                                          \
    template BasicVar<T> relu(BasicVar<T>);                                                       \
    template BasicVar<T> sigmoid(BasicVar<T>);                                                    \
    template BasicVar<T> softmax(BasicVar<T>, int);                                               \
    template BasicVar<T> dropout(BasicVar<T>, double, Rng&, bool);                                \
    template BasicVar<T> concat(const std::vector<BasicVar<T>>&, int);                            \
    template BasicVar<T> mean(BasicVar<T>, int);                                                  \
    template BasicVar<T> sum(BasicVar<T>);                                                        \
    template BasicVar<T> l2_norm(BasicVar<T>);                                                    \
    template BasicVar<T> transpose(BasicVar<T>);                                                  \
    template BasicVar<T> gather_rows(BasicVar<T>, const std::vector<int>&);                       \
    template BasicVar<T> slice_rows(BasicVar<T>, int, int);                                       \
    template BasicVar<T> cosine_similarity(BasicVar<T>, BasicVar<T>);                             \
    template BasicVar<T> cross_entropy(BasicVar<T>, int);                                         \
    template BasicVar<T> attention(BasicVar<T>, BasicVar<T>, BasicVar<T>, int,                    \
                                   const std::vector<std::uint8_t>&, AttentionWeights*);

IMNAV_INSTANTIATE_OPS(float)
IMNAV_INSTANTIATE_OPS(double)

}  // namespace imnav::nc
