#pragma once

#include <string>

#include "mogen/autodiff.hpp"
#include "mogen/optim.hpp"
#include "mogen/rng.hpp"

namespace mogen {

// Parameter-holding building blocks. Each exposes
//   create(...)           construction with seeded init
//   bind(tape, binding)   per-step vars (constants when binding is null)
//   visit(prefix, f)      stable parameter enumeration

struct ConvLayer {
    Array w;  // [Cout x Cin x K]
    Array b;  // [Cout]
    int stride = 1;
    int pad = 1;

    struct B {
        Var w, b;
        int stride, pad;
    };

    static ConvLayer create(int cin, int cout, int k, int stride, int pad, Rng& rng) {
        ConvLayer l;
        l.w = Array({cout, cin, k});
        init_fanin(l.w, rng, cin * k);
        l.b = Array({cout});
        l.stride = stride;
        l.pad = pad;
        return l;
    }

    B bind(Tape& t, Binding* bind, const std::string& prefix) {
        if (bind != nullptr) {
            return B{bind->bind(t, prefix + ".w", w), bind->bind(t, prefix + ".b", b), stride, pad};
        }
        return B{t.constant(w), t.constant(b), stride, pad};
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".w", w);
        f(prefix + ".b", b);
    }
};

inline Var apply_conv(const ConvLayer::B& l, Var x) { return conv1d(x, l.w, l.b, l.stride, l.pad); }

struct ResBlock {
    ConvLayer c3, c1;

    struct B {
        ConvLayer::B c3, c1;
    };

    static ResBlock create(int channels, Rng& rng) {
        ResBlock r;
        r.c3 = ConvLayer::create(channels, channels, 3, 1, 1, rng);
        r.c1 = ConvLayer::create(channels, channels, 1, 1, 0, rng);
        return r;
    }

    B bind(Tape& t, Binding* bind, const std::string& prefix) {
        return B{c3.bind(t, bind, prefix + ".c3"), c1.bind(t, bind, prefix + ".c1")};
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        c3.visit(prefix + ".c3", f);
        c1.visit(prefix + ".c1", f);
    }
};

inline Var apply_res(const ResBlock::B& r, Var x) {
    return add(x, apply_conv(r.c1, relu(apply_conv(r.c3, x))));
}

struct Dense {
    Array w;  // [in x out]
    Array b;  // [out]

    struct B {
        Var w, b;
    };

    static Dense create(int in, int out, Rng& rng) {
        Dense d;
        d.w = Array({in, out});
        init_fanin(d.w, rng, in);
        d.b = Array({out});
        return d;
    }

    B bind(Tape& t, Binding* bind, const std::string& prefix) {
        if (bind != nullptr) {
            return B{bind->bind(t, prefix + ".w", w), bind->bind(t, prefix + ".b", b)};
        }
        return B{t.constant(w), t.constant(b)};
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".w", w);
        f(prefix + ".b", b);
    }
};

inline Var apply_dense(const Dense::B& d, Var x) { return add_bias(matmul(x, d.w), d.b); }

struct EmbeddingTable {
    Array t;  // [K x h]

    struct B {
        Var t;
    };

    static EmbeddingTable create(int k, int h, Rng& rng, float std_dev = 0.02f) {
        EmbeddingTable e;
        e.t = Array({k, h});
        init_normal(e.t, rng, std_dev);
        return e;
    }

    B bind(Tape& tp, Binding* bind, const std::string& prefix) {
        if (bind != nullptr) return B{bind->bind(tp, prefix + ".t", t)};
        return B{tp.constant(t)};
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".t", t);
    }
};

struct LayerNormParams {
    Array gain, bias;

    struct B {
        Var gain, bias;
    };

    static LayerNormParams create(int h) {
        LayerNormParams p;
        p.gain = Array({h});
        p.gain.fill(1.0f);
        p.bias = Array({h});
        return p;
    }

    B bind(Tape& t, Binding* bind, const std::string& prefix) {
        if (bind != nullptr) {
            return B{bind->bind(t, prefix + ".gain", gain), bind->bind(t, prefix + ".bias", bias)};
        }
        return B{t.constant(gain), t.constant(bias)};
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".gain", gain);
        f(prefix + ".bias", bias);
    }
};

inline Var apply_ln(const LayerNormParams::B& p, Var x) { return layernorm(x, p.gain, p.bias); }

}  // namespace mogen
