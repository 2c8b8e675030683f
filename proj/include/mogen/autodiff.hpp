#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mogen/array.hpp"
#include "mogen/errors.hpp"

namespace mogen {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool defined() const { return tape != nullptr && id >= 0; }
};

// Reverse-mode tape. Nodes are appended in forward order, which is a
// topological order by construction; backward() replays them in reverse.
// Gradients of nodes that do not participate in the loss stay zero.
class Tape {
public:
    using Pull = std::function<void(Tape&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Array value, bool requires_grad = true) {
        nodes_.push_back(Node{std::move(value), Array(), requires_grad, nullptr});
        return Var{this, static_cast<int>(nodes_.size()) - 1};
    }
    Var constant(Array value) { return leaf(std::move(value), false); }
    Var constant_scalar(float v) { return constant(Array::scalar(v)); }

    // Id the next pushed node will receive; ops use it to close over their
    // own output when building the pull.
    int next_id() const { return static_cast<int>(nodes_.size()); }

    Var push(Array value, bool requires_grad, Pull pull) {
        nodes_.push_back(
            Node{std::move(value), Array(), requires_grad, requires_grad ? std::move(pull) : nullptr});
        return Var{this, static_cast<int>(nodes_.size()) - 1};
    }

    const Array& val(Var v) const { return node(v).value; }
    const Array& val_of(int id) const { return nodes_[static_cast<size_t>(id)].value; }

    // Gradient of v after backward(); zeros if v never participated.
    const Array& grad(Var v) {
        ensure_grad(v.id);
        return node(v).grad;
    }

    Array& grad_mut(int id) {
        ensure_grad(id);
        return nodes_[static_cast<size_t>(id)].grad;
    }

    bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

    void backward(Var loss) {
        const Node& ln = node(loss);
        if (ln.value.numel() != 1) {
            throw shape_error("backward: loss must be scalar, got " + ln.value.shape_string());
        }
        grad_mut(loss.id)[0] = 1.0f;
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.pull && !n.grad.empty()) n.pull(*this);
        }
    }

    int num_nodes() const { return static_cast<int>(nodes_.size()); }

private:
    struct Node {
        Array value;
        Array grad;  // lazily allocated, zero-initialized
        bool requires_grad;
        Pull pull;
    };

    const Node& node(Var v) const {
        if (v.tape != this || v.id < 0 || v.id >= num_nodes()) {
            throw shape_error("Var does not belong to this tape");
        }
        return nodes_[static_cast<size_t>(v.id)];
    }

    void ensure_grad(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.empty()) n.grad = Array(n.value.shape());
    }

    std::vector<Node> nodes_;
};

namespace ad {

inline Tape& same_tape(std::initializer_list<Var> vs, const char* op) {
    Tape* t = nullptr;
    for (Var v : vs) {
        if (!v.defined()) throw shape_error(std::string(op) + ": undefined operand");
        if (t == nullptr) t = v.tape;
        if (v.tape != t) throw shape_error(std::string(op) + ": operands on different tapes");
    }
    return *t;
}

inline void require_rank2(const Array& a, const char* op) {
    if (a.rank() != 2) {
        throw shape_error(std::string(op) + ": expected rank-2 operand, got " + a.shape_string());
    }
}

inline void require_finite(const Array& a, const char* op) {
    if (!a.all_finite()) throw numeric_error(std::string(op) + ": non-finite input");
}

inline bool rg(Tape& t, std::initializer_list<Var> vs) {
    for (Var v : vs)
        if (t.requires_grad(v.id)) return true;
    return false;
}

}  // namespace ad

// ---------------------------------------------------------------- elementwise

inline Var add(Var a, Var b) {
    Tape& t = ad::same_tape({a, b}, "add");
    require_same_shape(t.val(a), t.val(b), "add");
    Array out = t.val(a) + t.val(b);
    int oid = t.next_id(), ia = a.id, ib = b.id;
    return t.push(std::move(out), ad::rg(t, {a, b}), [oid, ia, ib](Tape& tp) {
        const Array& g = tp.grad_mut(oid);
        if (tp.requires_grad(ia)) add_inplace(tp.grad_mut(ia), g);
        if (tp.requires_grad(ib)) add_inplace(tp.grad_mut(ib), g);
    });
}

inline Var sub(Var a, Var b) {
    Tape& t = ad::same_tape({a, b}, "sub");
    require_same_shape(t.val(a), t.val(b), "sub");
    Array out = t.val(a) - t.val(b);
    int oid = t.next_id(), ia = a.id, ib = b.id;
    return t.push(std::move(out), ad::rg(t, {a, b}), [oid, ia, ib](Tape& tp) {
        const Array& g = tp.grad_mut(oid);
        if (tp.requires_grad(ia)) add_inplace(tp.grad_mut(ia), g);
        if (tp.requires_grad(ib)) {
            Array& gb = tp.grad_mut(ib);
            for (size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
        }
    });
}

inline Var mul(Var a, Var b) {
    Tape& t = ad::same_tape({a, b}, "mul");
    require_same_shape(t.val(a), t.val(b), "mul");
    Array out(t.val(a).shape());
    for (size_t i = 0; i < out.numel(); ++i) out[i] = t.val(a)[i] * t.val(b)[i];
    int oid = t.next_id(), ia = a.id, ib = b.id;
    return t.push(std::move(out), ad::rg(t, {a, b}), [oid, ia, ib](Tape& tp) {
        const Array& g = tp.grad_mut(oid);
        const Array& av = tp.val_of(ia);
        const Array& bv = tp.val_of(ib);
        if (tp.requires_grad(ia)) {
            Array& ga = tp.grad_mut(ia);
            for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
        }
        if (tp.requires_grad(ib)) {
            Array& gb = tp.grad_mut(ib);
            for (size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

inline Var scale(Var a, float c) {
    Tape& t = ad::same_tape({a}, "scale");
    Array out = scaled(t.val(a), c);
    int oid = t.next_id(), ia = a.id;
    return t.push(std::move(out), ad::rg(t, {a}), [oid, ia, c](Tape& tp) {
        const Array& g = tp.grad_mut(oid);
        Array& ga = tp.grad_mut(ia);
        for (size_t i = 0; i < g.numel(); ++i) ga[i] += c * g[i];
    });
}

// Broadcasts bias over the rows of x: out[r][c] = x[r][c] + b[c].
inline Var add_bias(Var x, Var b) {
    Tape& t = ad::same_tape({x, b}, "add_bias");
    const Array& xv = t.val(x);
    const Array& bv = t.val(b);
    if (xv.cols() != static_cast<int>(bv.numel())) {
        throw shape_error("add_bias: " + xv.shape_string() + " vs " + bv.shape_string());
    }
    Array out(xv.shape());
    const int rows = xv.rows(), cols = xv.cols();
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) out.at(r, c) = xv.at(r, c) + bv[static_cast<size_t>(c)];
    int oid = t.next_id(), ix = x.id, ib = b.id;
    return t.push(std::move(out), ad::rg(t, {x, b}), [oid, ix, ib, rows, cols](Tape& tp) {
        const Array& g = tp.grad_mut(oid);
        if (tp.requires_grad(ix)) add_inplace(tp.grad_mut(ix), g);
        if (tp.requires_grad(ib)) {
            Array& gb = tp.grad_mut(ib);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) gb[static_cast<size_t>(c)] += g.at(r, c);
        }
    });
}

// Adds a constant row vector (or same-shape constant) to every row of a.
inline Var add_const_rows(Var a, const Array& rowvec) {
    Tape& t = ad::same_tape({a}, "add_const_rows");
    const Array& av = t.val(a);
    Array out(av.shape());
    if (rowvec.same_shape(av)) {
        for (size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + rowvec[i];
    } else if (static_cast<int>(rowvec.numel()) == av.cols()) {
        for (int r = 0; r < av.rows(); ++r)
            for (int c = 0; c < av.cols(); ++c)
                out.at(r, c) = av.at(r, c) + rowvec[static_cast<size_t>(c)];
    } else {
        throw shape_error("add_const_rows: " + av.shape_string() + " vs " + rowvec.shape_string());
    }
    int oid = t.next_id(), ia = a.id;
    return t.push(std::move(out), ad::rg(t, {a}), [oid, ia](Tape& tp) {
        add_inplace(tp.grad_mut(ia), tp.grad_mut(oid));
    });
}

// ---------------------------------------------------------------- linear algebra

inline Var matmul(Var a, Var b) {
    Tape& t = ad::same_tape({a, b}, "matmul");
    const Array& av = t.val(a);
    const Array& bv = t.val(b);
    ad::require_rank2(av, "matmul");
    ad::require_rank2(bv, "matmul");
    if (av.dim(1) != bv.dim(0)) {
        throw shape_error("matmul: inner extents differ, " + av.shape_string() + " vs " +
                          bv.shape_string());
    }
    const int m = av.dim(0), k = av.dim(1), p = bv.dim(1);
    Array out({m, p});
    std::vector<double> acc(static_cast<size_t>(p));
    for (int i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int kk = 0; kk < k; ++kk) {
            const double aik = av.at(i, kk);
            const float* brow = bv.data() + static_cast<size_t>(kk) * p;
            for (int j = 0; j < p; ++j) acc[static_cast<size_t>(j)] += aik * brow[j];
        }
        float* orow = out.data() + static_cast<size_t>(i) * p;
        for (int j = 0; j < p; ++j) orow[j] = static_cast<float>(acc[static_cast<size_t>(j)]);
    }
    int oid = t.next_id(), ia = a.id, ib = b.id;
    return t.push(std::move(out), ad::rg(t, {a, b}), [oid, ia, ib, m, k, p](Tape& tp) {
        const Array& g = tp.grad_mut(oid);
        const Array& av2 = tp.val_of(ia);
        const Array& bv2 = tp.val_of(ib);
        if (tp.requires_grad(ia)) {
            // gA[i][kk] += sum_j g[i][j] * b[kk][j]
            Array& ga = tp.grad_mut(ia);
            for (int i = 0; i < m; ++i) {
                const float* grow = g.data() + static_cast<size_t>(i) * p;
                for (int kk = 0; kk < k; ++kk) {
                    const float* brow = bv2.data() + static_cast<size_t>(kk) * p;
                    double acc = 0.0;
                    for (int j = 0; j < p; ++j) acc += static_cast<double>(grow[j]) * brow[j];
                    ga.at(i, kk) += static_cast<float>(acc);
                }
            }
        }
        if (tp.requires_grad(ib)) {
            // gB[kk][j] += sum_i a[i][kk] * g[i][j]
            Array& gb = tp.grad_mut(ib);
            std::vector<double> acc(static_cast<size_t>(p));
            for (int kk = 0; kk < k; ++kk) {
                std::fill(acc.begin(), acc.end(), 0.0);
                for (int i = 0; i < m; ++i) {
                    const double aik = av2.at(i, kk);
                    const float* grow = g.data() + static_cast<size_t>(i) * p;
                    for (int j = 0; j < p; ++j) acc[static_cast<size_t>(j)] += aik * grow[j];
                }
                float* gbrow = gb.data() + static_cast<size_t>(kk) * p;
                for (int j = 0; j < p; ++j)
                    gbrow[j] += static_cast<float>(acc[static_cast<size_t>(j)]);
            }
        }
    });
}

inline Var transpose(Var a) {
    Tape& t = ad::same_tape({a}, "transpose");
    const Array& av = t.val(a);
    ad::require_rank2(av, "transpose");
    const int m = av.dim(0), n = av.dim(1);
    Array out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = av.at(i, j);
    int oid = t.next_id(), ia = a.id;
    return t.push(std::move(out), ad::rg(t, {a}), [oid, ia, m, n](Tape& tp) {
        const Array& g = tp.grad_mut(oid);
        Array& ga = tp.grad_mut(ia);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) ga.at(i, j) += g.at(j, i);
    });
}

// ---------------------------------------------------------------- activations

inline Var relu(Var a) {
    Tape& t = ad::same_tape({a}, "relu");
    const Array& av = t.val(a);
    Array out(av.shape());
    for (size_t i = 0; i < out.numel(); ++i) out[i] = av[i] > 0.0f ? av[i] : 0.0f;
    int oid = t.next_id(), ia = a.id;
    return t.push(std::move(out), ad::rg(t, {a}), [oid, ia](Tape& tp) {
        const Array& g = tp.grad_mut(oid);
        const Array& av2 = tp.val_of(ia);
        Array& ga = tp.grad_mut(ia);
        for (size_t i = 0; i < g.numel(); ++i)
            if (av2[i] > 0.0f) ga[i] += g[i];
    });
}

// Exact GELU, x * Phi(x).
inline Var gelu(Var a) {
    Tape& t = ad::same_tape({a}, "gelu");
    const Array& av = t.val(a);
    ad::require_finite(av, "gelu");
    Array out(av.shape());
    for (size_t i = 0; i < out.numel(); ++i) {
        double x = av[i];
        out[i] = static_cast<float>(x * 0.5 * (1.0 + std::erf(x * M_SQRT1_2)));
    }
    int oid = t.next_id(), ia = a.id;
    return t.push(std::move(out), ad::rg(t, {a}), [oid, ia](Tape& tp) {
        const Array& g = tp.grad_mut(oid);
        const Array& av2 = tp.val_of(ia);
        Array& ga = tp.grad_mut(ia);
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (size_t i = 0; i < g.numel(); ++i) {
            double x = av2[i];
            double phi = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
            double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
            ga[i] += static_cast<float>(g[i] * (phi + x * pdf));
        }
    });
}

// Row-wise softmax over the last axis.
inline Var softmax(Var a) {
    Tape& t = ad::same_tape({a}, "softmax");
    const Array& av = t.val(a);
    ad::require_finite(av, "softmax");
    const int rows = av.rows(), cols = av.cols();
    Array out(av.shape());
    for (int r = 0; r < rows; ++r) {
        const float* xr = av.data() + static_cast<size_t>(r) * cols;
        float* yr = out.data() + static_cast<size_t>(r) * cols;
        double mx = xr[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, static_cast<double>(xr[c]));
        double z = 0.0;
        for (int c = 0; c < cols; ++c) {
            double e = std::exp(static_cast<double>(xr[c]) - mx);
            yr[c] = static_cast<float>(e);
            z += e;
        }
        for (int c = 0; c < cols; ++c) yr[c] = static_cast<float>(yr[c] / z);
    }
    int oid = t.next_id(), ia = a.id;
    return t.push(std::move(out), ad::rg(t, {a}), [oid, ia, rows, cols](Tape& tp) {
        const Array& g = tp.grad_mut(oid);
        const Array& y = tp.val_of(oid);
        Array& ga = tp.grad_mut(ia);
        for (int r = 0; r < rows; ++r) {
            const float* gr = g.data() + static_cast<size_t>(r) * cols;
            const float* yr = y.data() + static_cast<size_t>(r) * cols;
            float* gar = ga.data() + static_cast<size_t>(r) * cols;
            double dot = 0.0;
            for (int c = 0; c < cols; ++c) dot += static_cast<double>(gr[c]) * yr[c];
            for (int c = 0; c < cols; ++c)
                gar[c] += static_cast<float>(yr[c] * (static_cast<double>(gr[c]) - dot));
        }
    });
}

// Row-wise layer normalization with affine parameters.
// Constant rows map to zeros before the affine transform (eps inside the sqrt).
inline Var layernorm(Var x, Var gain, Var bias, float eps = 1e-5f) {
    Tape& t = ad::same_tape({x, gain, bias}, "layernorm");
    const Array& xv = t.val(x);
    ad::require_finite(xv, "layernorm");
    const int rows = xv.rows(), cols = xv.cols();
    const Array& gv = t.val(gain);
    const Array& bv = t.val(bias);
    if (static_cast<int>(gv.numel()) != cols || static_cast<int>(bv.numel()) != cols) {
        throw shape_error("layernorm: affine params " + gv.shape_string() + "/" +
                          bv.shape_string() + " do not match row width " + std::to_string(cols));
    }
    Array out(xv.shape());
    auto xhat = std::make_shared<std::vector<float>>(xv.numel());
    auto inv_std = std::make_shared<std::vector<float>>(static_cast<size_t>(rows));
    for (int r = 0; r < rows; ++r) {
        const float* xr = xv.data() + static_cast<size_t>(r) * cols;
        double mean = 0.0;
        for (int c = 0; c < cols; ++c) mean += xr[c];
        mean /= cols;
        double var = 0.0;
        for (int c = 0; c < cols; ++c) {
            double d = xr[c] - mean;
            var += d * d;
        }
        var /= cols;
        double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
        (*inv_std)[static_cast<size_t>(r)] = static_cast<float>(inv);
        float* yr = out.data() + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) {
            float xh = static_cast<float>((xr[c] - mean) * inv);
            (*xhat)[static_cast<size_t>(r) * cols + c] = xh;
            yr[c] = xh * gv[static_cast<size_t>(c)] + bv[static_cast<size_t>(c)];
        }
    }
    int oid = t.next_id(), ix = x.id, ig = gain.id, ib = bias.id;
    return t.push(std::move(out), ad::rg(t, {x, gain, bias}),
                  [oid, ix, ig, ib, rows, cols, xhat, inv_std](Tape& tp) {
                      const Array& g = tp.grad_mut(oid);
                      const Array& gv2 = tp.val_of(ig);
                      if (tp.requires_grad(ig)) {
                          Array& gg = tp.grad_mut(ig);
                          for (int r = 0; r < rows; ++r)
                              for (int c = 0; c < cols; ++c)
                                  gg[static_cast<size_t>(c)] +=
                                      g.at(r, c) * (*xhat)[static_cast<size_t>(r) * cols + c];
                      }
                      if (tp.requires_grad(ib)) {
                          Array& gb = tp.grad_mut(ib);
                          for (int r = 0; r < rows; ++r)
                              for (int c = 0; c < cols; ++c) gb[static_cast<size_t>(c)] += g.at(r, c);
                      }
                      if (tp.requires_grad(ix)) {
                          Array& gx = tp.grad_mut(ix);
                          for (int r = 0; r < rows; ++r) {
                              double m1 = 0.0, m2 = 0.0;
                              for (int c = 0; c < cols; ++c) {
                                  double dyg = static_cast<double>(g.at(r, c)) *
                                               gv2[static_cast<size_t>(c)];
                                  m1 += dyg;
                                  m2 += dyg * (*xhat)[static_cast<size_t>(r) * cols + c];
                              }
                              m1 /= cols;
                              m2 /= cols;
                              const double inv = (*inv_std)[static_cast<size_t>(r)];
                              for (int c = 0; c < cols; ++c) {
                                  double dyg = static_cast<double>(g.at(r, c)) *
                                               gv2[static_cast<size_t>(c)];
                                  double xh = (*xhat)[static_cast<size_t>(r) * cols + c];
                                  gx.at(r, c) += static_cast<float>(inv * (dyg - m1 - xh * m2));
                              }
                          }
                      }
                  });
}

// ---------------------------------------------------------------- convolution

// 1-D convolution over a channel-major sequence: x is [C_in x T],
// w is [C_out x C_in x K], b is [C_out]; zero padding.
inline Var conv1d(Var x, Var w, Var b, int stride, int pad) {
    Tape& t = ad::same_tape({x, w, b}, "conv1d");
    const Array& xv = t.val(x);
    const Array& wv = t.val(w);
    const Array& bv = t.val(b);
    ad::require_finite(xv, "conv1d");
    if (xv.rank() != 2 || wv.rank() != 3) {
        throw shape_error("conv1d: expected x[Cin x T], w[Cout x Cin x K], got " +
                          xv.shape_string() + " and " + wv.shape_string());
    }
    if (stride < 1 || pad < 0) throw domain_error("conv1d: stride must be >=1, pad >=0");
    const int cin = xv.dim(0), tlen = xv.dim(1);
    const int cout = wv.dim(0), kw = wv.dim(2);
    if (wv.dim(1) != cin) {
        throw shape_error("conv1d: weight in-channels " + wv.shape_string() + " vs input " +
                          xv.shape_string());
    }
    if (static_cast<int>(bv.numel()) != cout) {
        throw shape_error("conv1d: bias " + bv.shape_string() + " vs out channels " +
                          std::to_string(cout));
    }
    const int tout = (tlen + 2 * pad - kw) / stride + 1;
    if (tout < 1) {
        throw shape_error("conv1d: sequence length " + std::to_string(tlen) +
                          " too short for kernel " + std::to_string(kw));
    }
    Array out({cout, tout});
    for (int co = 0; co < cout; ++co) {
        for (int to = 0; to < tout; ++to) {
            double acc = bv[static_cast<size_t>(co)];
            for (int ci = 0; ci < cin; ++ci) {
                const float* xr = xv.data() + static_cast<size_t>(ci) * tlen;
                const float* wr = wv.data() + (static_cast<size_t>(co) * cin + ci) * kw;
                for (int kk = 0; kk < kw; ++kk) {
                    int ti = to * stride - pad + kk;
                    if (ti >= 0 && ti < tlen) acc += static_cast<double>(xr[ti]) * wr[kk];
                }
            }
            out.at(co, to) = static_cast<float>(acc);
        }
    }
    int oid = t.next_id(), ix = x.id, iw = w.id, ib = b.id;
    return t.push(std::move(out), ad::rg(t, {x, w, b}),
                  [oid, ix, iw, ib, cin, tlen, cout, kw, tout, stride, pad](Tape& tp) {
                      const Array& g = tp.grad_mut(oid);
                      const Array& xv2 = tp.val_of(ix);
                      const Array& wv2 = tp.val_of(iw);
                      const bool need_x = tp.requires_grad(ix);
                      const bool need_w = tp.requires_grad(iw);
                      const bool need_b = tp.requires_grad(ib);
                      Array* gx = need_x ? &tp.grad_mut(ix) : nullptr;
                      Array* gw = need_w ? &tp.grad_mut(iw) : nullptr;
                      Array* gb = need_b ? &tp.grad_mut(ib) : nullptr;
                      for (int co = 0; co < cout; ++co) {
                          const float* grow = g.data() + static_cast<size_t>(co) * tout;
                          if (need_b) {
                              double acc = 0.0;
                              for (int to = 0; to < tout; ++to) acc += grow[to];
                              (*gb)[static_cast<size_t>(co)] += static_cast<float>(acc);
                          }
                          for (int ci = 0; ci < cin; ++ci) {
                              const float* xr = xv2.data() + static_cast<size_t>(ci) * tlen;
                              const float* wr =
                                  wv2.data() + (static_cast<size_t>(co) * cin + ci) * kw;
                              float* gxr =
                                  need_x ? gx->data() + static_cast<size_t>(ci) * tlen : nullptr;
                              float* gwr = need_w ? gw->data() +
                                                        (static_cast<size_t>(co) * cin + ci) * kw
                                                  : nullptr;
                              for (int kk = 0; kk < kw; ++kk) {
                                  double wacc = 0.0;
                                  for (int to = 0; to < tout; ++to) {
                                      int ti = to * stride - pad + kk;
                                      if (ti < 0 || ti >= tlen) continue;
                                      if (need_x) gxr[ti] += wr[kk] * grow[to];
                                      if (need_w) wacc += static_cast<double>(xr[ti]) * grow[to];
                                  }
                                  if (need_w) gwr[kk] += static_cast<float>(wacc);
                              }
                          }
                      }
                  });
}

// Nearest-neighbor upsampling along the sequence axis of [C x T].
inline Var upsample_nearest(Var x, int factor) {
    Tape& t = ad::same_tape({x}, "upsample_nearest");
    const Array& xv = t.val(x);
    ad::require_rank2(xv, "upsample_nearest");
    if (factor < 1) throw domain_error("upsample_nearest: factor must be >= 1");
    const int c = xv.dim(0), tlen = xv.dim(1);
    Array out({c, tlen * factor});
    for (int ci = 0; ci < c; ++ci)
        for (int ti = 0; ti < tlen * factor; ++ti) out.at(ci, ti) = xv.at(ci, ti / factor);
    int oid = t.next_id(), ix = x.id;
    return t.push(std::move(out), ad::rg(t, {x}), [oid, ix, c, tlen, factor](Tape& tp) {
        const Array& g = tp.grad_mut(oid);
        Array& gx = tp.grad_mut(ix);
        for (int ci = 0; ci < c; ++ci)
            for (int ti = 0; ti < tlen * factor; ++ti) gx.at(ci, ti / factor) += g.at(ci, ti);
    });
}

// ---------------------------------------------------------------- gather / layout

// Row gather: out[i] = table[ids[i]].
inline Var embedding(Var table, const std::vector<int>& ids) {
    Tape& t = ad::same_tape({table}, "embedding");
    const Array& tv = t.val(table);
    ad::require_rank2(tv, "embedding");
    const int k = tv.dim(0), h = tv.dim(1);
    const int n = static_cast<int>(ids.size());
    if (n == 0) throw shape_error("embedding: empty id list");
    for (int id : ids) {
        if (id < 0 || id >= k) {
            throw token_error("embedding: id " + std::to_string(id) + " outside table of " +
                              std::to_string(k) + " rows");
        }
    }
    Array out({n, h});
    for (int i = 0; i < n; ++i) {
        const float* src = tv.data() + static_cast<size_t>(ids[static_cast<size_t>(i)]) * h;
        std::copy(src, src + h, out.data() + static_cast<size_t>(i) * h);
    }
    int oid = t.next_id(), it = table.id;
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    return t.push(std::move(out), ad::rg(t, {table}), [oid, it, h, ids_copy](Tape& tp) {
        const Array& g = tp.grad_mut(oid);
        Array& gt = tp.grad_mut(it);
        for (size_t i = 0; i < ids_copy->size(); ++i) {
            float* dst = gt.data() + static_cast<size_t>((*ids_copy)[i]) * h;
            const float* src = g.data() + i * h;
            for (int c = 0; c < h; ++c) dst[c] += src[c];
        }
    });
}

inline Var slice_rows(Var a, int start, int count) {
    Tape& t = ad::same_tape({a}, "slice_rows");
    const Array& av = t.val(a);
    ad::require_rank2(av, "slice_rows");
    if (start < 0 || count < 1 || start + count > av.dim(0)) {
        throw shape_error("slice_rows: range [" + std::to_string(start) + ", " +
                          std::to_string(start + count) + ") outside " + av.shape_string());
    }
    const int cols = av.dim(1);
    Array out({count, cols});
    std::copy(av.data() + static_cast<size_t>(start) * cols,
              av.data() + static_cast<size_t>(start + count) * cols, out.data());
    int oid = t.next_id(), ia = a.id;
    return t.push(std::move(out), ad::rg(t, {a}), [oid, ia, start, count, cols](Tape& tp) {
        const Array& g = tp.grad_mut(oid);
        Array& ga = tp.grad_mut(ia);
        for (int r = 0; r < count; ++r)
            for (int c = 0; c < cols; ++c) ga.at(start + r, c) += g.at(r, c);
    });
}

inline Var slice_cols(Var a, int start, int count) {
    Tape& t = ad::same_tape({a}, "slice_cols");
    const Array& av = t.val(a);
    ad::require_rank2(av, "slice_cols");
    if (start < 0 || count < 1 || start + count > av.dim(1)) {
        throw shape_error("slice_cols: range [" + std::to_string(start) + ", " +
                          std::to_string(start + count) + ") outside " + av.shape_string());
    }
    const int rows = av.dim(0);
    Array out({rows, count});
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < count; ++c) out.at(r, c) = av.at(r, start + c);
    int oid = t.next_id(), ia = a.id;
    return t.push(std::move(out), ad::rg(t, {a}), [oid, ia, start, count, rows](Tape& tp) {
        const Array& g = tp.grad_mut(oid);
        Array& ga = tp.grad_mut(ia);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < count; ++c) ga.at(r, start + c) += g.at(r, c);
    });
}

inline Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw shape_error("concat_rows: no parts");
    Tape& t = *parts.front().tape;
    int cols = t.val(parts.front()).cols();
    int rows = 0;
    bool rg = false;
    for (Var p : parts) {
        ad::same_tape({parts.front(), p}, "concat_rows");
        ad::require_rank2(t.val(p), "concat_rows");
        if (t.val(p).dim(1) != cols) {
            throw shape_error("concat_rows: column mismatch " + t.val(p).shape_string());
        }
        rows += t.val(p).dim(0);
        rg = rg || t.requires_grad(p.id);
    }
    Array out({rows, cols});
    int off = 0;
    std::vector<std::pair<int, int>> spans;  // (input id, row count)
    for (Var p : parts) {
        const Array& pv = t.val(p);
        std::copy(pv.data(), pv.data() + pv.numel(), out.data() + static_cast<size_t>(off) * cols);
        spans.emplace_back(p.id, pv.dim(0));
        off += pv.dim(0);
    }
    int oid = t.next_id();
    return t.push(std::move(out), rg, [oid, spans, cols](Tape& tp) {
        const Array& g = tp.grad_mut(oid);
        int row = 0;
        for (auto [pid, cnt] : spans) {
            if (tp.requires_grad(pid)) {
                Array& gp = tp.grad_mut(pid);
                for (int r = 0; r < cnt; ++r)
                    for (int c = 0; c < cols; ++c) gp.at(r, c) += g.at(row + r, c);
            }
            row += cnt;
        }
    });
}

inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw shape_error("concat_cols: no parts");
    Tape& t = *parts.front().tape;
    int rows = t.val(parts.front()).rows();
    int cols = 0;
    bool rg = false;
    for (Var p : parts) {
        ad::same_tape({parts.front(), p}, "concat_cols");
        ad::require_rank2(t.val(p), "concat_cols");
        if (t.val(p).dim(0) != rows) {
            throw shape_error("concat_cols: row mismatch " + t.val(p).shape_string());
        }
        cols += t.val(p).dim(1);
        rg = rg || t.requires_grad(p.id);
    }
    Array out({rows, cols});
    int off = 0;
    std::vector<std::pair<int, int>> spans;
    for (Var p : parts) {
        const Array& pv = t.val(p);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < pv.dim(1); ++c) out.at(r, off + c) = pv.at(r, c);
        spans.emplace_back(p.id, pv.dim(1));
        off += pv.dim(1);
    }
    int oid = t.next_id();
    return t.push(std::move(out), rg, [oid, spans, rows](Tape& tp) {
        const Array& g = tp.grad_mut(oid);
        int col = 0;
        for (auto [pid, cnt] : spans) {
            if (tp.requires_grad(pid)) {
                Array& gp = tp.grad_mut(pid);
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < cnt; ++c) gp.at(r, c) += g.at(r, col + c);
            }
            col += cnt;
        }
    });
}

// ---------------------------------------------------------------- reductions

inline Var sum(Var a) {
    Tape& t = ad::same_tape({a}, "sum");
    const Array& av = t.val(a);
    double acc = 0.0;
    for (size_t i = 0; i < av.numel(); ++i) acc += av[i];
    int oid = t.next_id(), ia = a.id;
    return t.push(Array::scalar(static_cast<float>(acc)), ad::rg(t, {a}), [oid, ia](Tape& tp) {
        const float g = tp.grad_mut(oid)[0];
        Array& ga = tp.grad_mut(ia);
        for (size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    });
}

inline Var mean(Var a) {
    Tape& t = ad::same_tape({a}, "mean");
    const size_t n = t.val(a).numel();
    return scale(sum(a), 1.0f / static_cast<float>(n));
}

// Mean of squared entries.
inline Var mean_sq(Var a) {
    Tape& t = ad::same_tape({a}, "mean_sq");
    const Array& av = t.val(a);
    const size_t n = av.numel();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += static_cast<double>(av[i]) * av[i];
    int oid = t.next_id(), ia = a.id;
    return t.push(Array::scalar(static_cast<float>(acc / static_cast<double>(n))),
                  ad::rg(t, {a}), [oid, ia, n](Tape& tp) {
                      const float g = tp.grad_mut(oid)[0];
                      const Array& av2 = tp.val_of(ia);
                      Array& ga = tp.grad_mut(ia);
                      const float c = 2.0f * g / static_cast<float>(n);
                      for (size_t i = 0; i < n; ++i) ga[i] += c * av2[i];
                  });
}

// ---------------------------------------------------------------- gradient control

// Forward identity (bit-exact); contributes zero gradient to its input.
inline Var stop_gradient(Var a) {
    Tape& t = ad::same_tape({a}, "stop_gradient");
    return t.push(t.val(a), false, nullptr);
}

// ---------------------------------------------------------------- losses

// Cross-entropy over rows of logits with per-row weights; the result is the
// weighted sum of -log p(target) divided by the total weight.
inline Var masked_cross_entropy(Var logits, const std::vector<int>& targets,
                                const std::vector<float>& weights) {
    Tape& t = ad::same_tape({logits}, "masked_cross_entropy");
    const Array& lv = t.val(logits);
    ad::require_rank2(lv, "masked_cross_entropy");
    ad::require_finite(lv, "masked_cross_entropy");
    const int rows = lv.dim(0), cols = lv.dim(1);
    if (static_cast<int>(targets.size()) != rows || static_cast<int>(weights.size()) != rows) {
        throw shape_error("masked_cross_entropy: targets/weights length vs " + lv.shape_string());
    }
    double total_w = 0.0;
    for (float w : weights) total_w += w;
    if (total_w <= 0.0) throw domain_error("masked_cross_entropy: no supervised rows");

    auto probs = std::make_shared<std::vector<float>>(lv.numel());
    double loss = 0.0;
    for (int r = 0; r < rows; ++r) {
        const float* xr = lv.data() + static_cast<size_t>(r) * cols;
        double mx = xr[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, static_cast<double>(xr[c]));
        double z = 0.0;
        for (int c = 0; c < cols; ++c) z += std::exp(static_cast<double>(xr[c]) - mx);
        const double logz = std::log(z) + mx;
        for (int c = 0; c < cols; ++c)
            (*probs)[static_cast<size_t>(r) * cols + c] =
                static_cast<float>(std::exp(static_cast<double>(xr[c]) - logz));
        if (weights[static_cast<size_t>(r)] != 0.0f) {
            int tgt = targets[static_cast<size_t>(r)];
            if (tgt < 0 || tgt >= cols) {
                throw token_error("masked_cross_entropy: target " + std::to_string(tgt) +
                                  " outside vocabulary " + std::to_string(cols));
            }
            loss += weights[static_cast<size_t>(r)] * (logz - xr[tgt]);
        }
    }
    loss /= total_w;
    int oid = t.next_id(), il = logits.id;
    auto tg = std::make_shared<std::vector<int>>(targets);
    auto wt = std::make_shared<std::vector<float>>(weights);
    return t.push(Array::scalar(static_cast<float>(loss)), ad::rg(t, {logits}),
                  [oid, il, rows, cols, probs, tg, wt, total_w](Tape& tp) {
                      const float g = tp.grad_mut(oid)[0];
                      Array& gl = tp.grad_mut(il);
                      for (int r = 0; r < rows; ++r) {
                          const float w = (*wt)[static_cast<size_t>(r)];
                          if (w == 0.0f) continue;
                          const float scale_rw = static_cast<float>(g * w / total_w);
                          const int tgt = (*tg)[static_cast<size_t>(r)];
                          float* glr = gl.data() + static_cast<size_t>(r) * cols;
                          const float* pr = probs->data() + static_cast<size_t>(r) * cols;
                          for (int c = 0; c < cols; ++c) glr[c] += scale_rw * pr[c];
                          glr[tgt] -= scale_rw;
                      }
                  });
}

// Mean absolute error against a constant target, weighted per row; the mean
// runs over weighted rows times columns.
inline Var masked_l1(Var pred, const Array& target, const std::vector<float>& row_weights) {
    Tape& t = ad::same_tape({pred}, "masked_l1");
    const Array& pv = t.val(pred);
    require_same_shape(pv, target, "masked_l1");
    const int rows = pv.rows(), cols = pv.cols();
    if (static_cast<int>(row_weights.size()) != rows) {
        throw shape_error("masked_l1: row_weights length vs " + pv.shape_string());
    }
    double total_w = 0.0;
    for (float w : row_weights) total_w += w;
    if (total_w <= 0.0) throw domain_error("masked_l1: no weighted rows");
    const double denom = total_w * cols;
    double loss = 0.0;
    for (int r = 0; r < rows; ++r) {
        const float w = row_weights[static_cast<size_t>(r)];
        if (w == 0.0f) continue;
        for (int c = 0; c < cols; ++c)
            loss += w * std::fabs(static_cast<double>(pv.at(r, c)) - target.at(r, c));
    }
    loss /= denom;
    int oid = t.next_id(), ip = pred.id;
    auto tgt = std::make_shared<Array>(target);
    auto wt = std::make_shared<std::vector<float>>(row_weights);
    return t.push(Array::scalar(static_cast<float>(loss)), ad::rg(t, {pred}),
                  [oid, ip, rows, cols, tgt, wt, denom](Tape& tp) {
                      const float g = tp.grad_mut(oid)[0];
                      const Array& pv2 = tp.val_of(ip);
                      Array& gp = tp.grad_mut(ip);
                      for (int r = 0; r < rows; ++r) {
                          const float w = (*wt)[static_cast<size_t>(r)];
                          if (w == 0.0f) continue;
                          const float s = static_cast<float>(g * w / denom);
                          for (int c = 0; c < cols; ++c) {
                              float d = pv2.at(r, c) - tgt->at(r, c);
                              if (d > 0.0f) gp.at(r, c) += s;
                              else if (d < 0.0f) gp.at(r, c) -= s;
                          }
                      }
                  });
}

// ---------------------------------------------------------------- attention

// Scaled dot-product attention over one head. q, k, v are [T x hd]; the
// optional additive bias is either [Tk] (applied to every query row) or
// [Tq x Tk]. Composite of primitive nodes, so gradients need no special case.
inline Var attention(Var q, Var k, Var v, const Array* score_bias = nullptr) {
    Tape& t = ad::same_tape({q, k, v}, "attention");
    ad::require_finite(t.val(q), "attention");
    ad::require_finite(t.val(k), "attention");
    ad::require_finite(t.val(v), "attention");
    const int hd = t.val(q).dim(1);
    if (t.val(k).dim(1) != hd || t.val(k).dim(0) != t.val(v).dim(0)) {
        throw shape_error("attention: q" + t.val(q).shape_string() + " k" +
                          t.val(k).shape_string() + " v" + t.val(v).shape_string());
    }
    Var scores = scale(matmul(q, transpose(k)), 1.0f / std::sqrt(static_cast<float>(hd)));
    if (score_bias != nullptr) scores = add_const_rows(scores, *score_bias);
    return matmul(softmax(scores), v);
}

}  // namespace mogen
