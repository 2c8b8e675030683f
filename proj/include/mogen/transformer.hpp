#pragma once

#include <string>
#include <vector>

#include "mogen/autodiff.hpp"
#include "mogen/layers.hpp"
#include "mogen/optim.hpp"
#include "mogen/rng.hpp"

namespace mogen {

// Conditioning input: a corpus label or the null condition used for
// unconditional training and classifier-free guidance.
struct Condition {
    bool is_null = true;
    int label_id = 0;

    static Condition null_cond() { return Condition{}; }
    static Condition label(int id) { return Condition{false, id}; }
};

// Pre-norm bidirectional transformer block; no causal masking anywhere.
struct TransformerBlock {
    LayerNormParams ln1, ln2;
    Dense qkv;   // h -> 3h
    Dense proj;  // h -> h
    Dense mlp1;  // h -> 4h
    Dense mlp2;  // 4h -> h

    struct B {
        LayerNormParams::B ln1, ln2;
        Dense::B qkv, proj, mlp1, mlp2;
    };

    static TransformerBlock create(int hidden, Rng& rng) {
        TransformerBlock b;
        b.ln1 = LayerNormParams::create(hidden);
        b.ln2 = LayerNormParams::create(hidden);
        b.qkv = Dense::create(hidden, 3 * hidden, rng);
        b.proj = Dense::create(hidden, hidden, rng);
        b.mlp1 = Dense::create(hidden, 4 * hidden, rng);
        b.mlp2 = Dense::create(4 * hidden, hidden, rng);
        return b;
    }

    B bind(Tape& t, Binding* bind, const std::string& prefix) {
        return B{ln1.bind(t, bind, prefix + ".ln1"), ln2.bind(t, bind, prefix + ".ln2"),
                 qkv.bind(t, bind, prefix + ".qkv"), proj.bind(t, bind, prefix + ".proj"),
                 mlp1.bind(t, bind, prefix + ".mlp1"), mlp2.bind(t, bind, prefix + ".mlp2")};
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        ln1.visit(prefix + ".ln1", f);
        ln2.visit(prefix + ".ln2", f);
        qkv.visit(prefix + ".qkv", f);
        proj.visit(prefix + ".proj", f);
        mlp1.visit(prefix + ".mlp1", f);
        mlp2.visit(prefix + ".mlp2", f);
    }
};

struct Trunk {
    int hidden = 0;
    int heads = 0;
    std::vector<TransformerBlock> blocks;
    LayerNormParams ln_f;

    struct B {
        std::vector<TransformerBlock::B> blocks;
        LayerNormParams::B ln_f;
        int heads;
    };

    static Trunk create(int hidden, int layers, int heads, Rng& rng) {
        Trunk t;
        t.hidden = hidden;
        t.heads = heads;
        for (int i = 0; i < layers; ++i) t.blocks.push_back(TransformerBlock::create(hidden, rng));
        t.ln_f = LayerNormParams::create(hidden);
        return t;
    }

    B bind(Tape& t, Binding* bind, const std::string& prefix) {
        B b;
        b.heads = heads;
        for (size_t i = 0; i < blocks.size(); ++i) {
            b.blocks.push_back(blocks[i].bind(t, bind, prefix + ".block" + std::to_string(i)));
        }
        b.ln_f = ln_f.bind(t, bind, prefix + ".ln_f");
        return b;
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        for (size_t i = 0; i < blocks.size(); ++i) {
            blocks[i].visit(prefix + ".block" + std::to_string(i), f);
        }
        ln_f.visit(prefix + ".ln_f", f);
    }
};

// Full-context trunk forward over x [T x h]. `key_bias`, when present, is a
// length-T additive score bias (-1e9 attends a key out for every query).
inline Var run_trunk(Tape& t, const Trunk::B& trunk, Var x, const Array* key_bias = nullptr) {
    const int hidden = t.val(x).dim(1);
    const int hd = hidden / trunk.heads;
    for (const TransformerBlock::B& blk : trunk.blocks) {
        Var a = apply_ln(blk.ln1, x);
        Var qkv = apply_dense(blk.qkv, a);
        std::vector<Var> heads;
        heads.reserve(static_cast<size_t>(trunk.heads));
        for (int h = 0; h < trunk.heads; ++h) {
            Var q = slice_cols(qkv, h * hd, hd);
            Var k = slice_cols(qkv, hidden + h * hd, hd);
            Var v = slice_cols(qkv, 2 * hidden + h * hd, hd);
            heads.push_back(attention(q, k, v, key_bias));
        }
        x = add(x, apply_dense(blk.proj, concat_cols(heads)));
        Var m = apply_ln(blk.ln2, x);
        x = add(x, apply_dense(blk.mlp2, gelu(apply_dense(blk.mlp1, m))));
    }
    return apply_ln(trunk.ln_f, x);
}

}  // namespace mogen
