#pragma once

#include <string>
#include <vector>

#include "mogen/autodiff.hpp"
#include "mogen/codec.hpp"
#include "mogen/config.hpp"
#include "mogen/transformer.hpp"

namespace mogen {

// Single residual transformer for layers 1..V. Layer-j tokens are predicted
// from the summed embeddings of layers 0..j-1 plus a layer indicator added at
// every position. The prediction head for layer j is the layer-j token
// embedding table used transposed, so head and embedding are one storage.
struct RTransformerParams {
    int codebook_size = 0;
    int num_quant_layers = 0;  // V+1
    int num_labels = 0;
    int max_len = 0;

    std::vector<EmbeddingTable> tok;  // V+1 tables, K x h
    EmbeddingTable layer_ind;         // V x h, row j-1 for target layer j
    EmbeddingTable cond;              // (labels+1) x h
    EmbeddingTable pos;               // (max_len+1) x h
    Trunk trunk;

    int null_label() const { return num_labels; }
    int residual_layers() const { return num_quant_layers - 1; }  // V

    struct B {
        std::vector<EmbeddingTable::B> tok;
        EmbeddingTable::B layer_ind, cond, pos;
        Trunk::B trunk;
    };

    static RTransformerParams create(int codebook_size, int num_quant_layers, int num_labels,
                                     const MformerDims& dims, Rng& rng) {
        if (num_quant_layers < 2) {
            throw config_error("rformer: need at least one residual layer (V+1 >= 2)");
        }
        Rng init = rng.stream("rformer.init");
        RTransformerParams p;
        p.codebook_size = codebook_size;
        p.num_quant_layers = num_quant_layers;
        p.num_labels = num_labels;
        p.max_len = dims.max_len;
        for (int v = 0; v < num_quant_layers; ++v) {
            p.tok.push_back(EmbeddingTable::create(codebook_size, dims.hidden, init));
        }
        p.layer_ind = EmbeddingTable::create(num_quant_layers - 1, dims.hidden, init);
        p.cond = EmbeddingTable::create(num_labels + 1, dims.hidden, init);
        p.pos = EmbeddingTable::create(dims.max_len + 1, dims.hidden, init);
        p.trunk = Trunk::create(dims.hidden, dims.layers, dims.heads, init);
        return p;
    }

    B bind(Tape& t, Binding* bind) {
        B b;
        for (size_t v = 0; v < tok.size(); ++v) {
            b.tok.push_back(tok[v].bind(t, bind, "rformer.tok." + std::to_string(v)));
        }
        b.layer_ind = layer_ind.bind(t, bind, "rformer.layer_ind");
        b.cond = cond.bind(t, bind, "rformer.cond");
        b.pos = pos.bind(t, bind, "rformer.pos");
        b.trunk = trunk.bind(t, bind, "rformer.trunk");
        return b;
    }

    template <typename F>
    void visit_params(F&& f) {
        for (size_t v = 0; v < tok.size(); ++v) {
            tok[v].visit("rformer.tok." + std::to_string(v), f);
        }
        layer_ind.visit("rformer.layer_ind", f);
        cond.visit("rformer.cond", f);
        pos.visit("rformer.pos", f);
        trunk.visit("rformer.trunk", f);
    }

    // Tie records for the checkpoint config snapshot: head j <- embedding j.
    std::map<std::string, std::string> tie_records() const {
        std::map<std::string, std::string> ties;
        for (int j = 1; j < num_quant_layers; ++j) {
            ties["rformer.tie.head" + std::to_string(j)] = "rformer.tok." + std::to_string(j) + ".t";
        }
        return ties;
    }
};

// Logits [n x K] for layer j given rows 0..j-1 of a token stack.
inline Var rformer_logits(Tape& t, const RTransformerParams::B& b, const RTransformerParams& p,
                          const std::vector<std::vector<int>>& rows_below, int j,
                          const Condition& cond) {
    if (j < 1 || j > p.residual_layers()) {
        throw domain_error("rformer_forward: layer " + std::to_string(j) + " outside [1, " +
                           std::to_string(p.residual_layers()) + "]");
    }
    if (static_cast<int>(rows_below.size()) != j) {
        throw shape_error("rformer_forward: expected " + std::to_string(j) + " input rows, got " +
                          std::to_string(rows_below.size()));
    }
    const int n = static_cast<int>(rows_below.front().size());
    if (n < 1) throw shape_error("rformer_forward: empty rows");
    if (n > p.max_len) {
        throw domain_error("rformer_forward: sequence length " + std::to_string(n) +
                           " exceeds max_len " + std::to_string(p.max_len));
    }
    // summed per-layer embeddings
    Var x = embedding(b.tok[0].t, rows_below[0]);
    for (int v = 1; v < j; ++v) {
        if (static_cast<int>(rows_below[static_cast<size_t>(v)].size()) != n) {
            throw shape_error("rformer_forward: ragged input rows");
        }
        x = add(x, embedding(b.tok[static_cast<size_t>(v)].t, rows_below[static_cast<size_t>(v)]));
    }
    // layer indicator at every position
    Var ind = embedding(b.layer_ind.t, {j - 1});
    x = add_bias(x, ind);

    Var cond_emb = embedding(b.cond.t, {condition_row(cond, p.num_labels)});
    x = concat_rows({cond_emb, x});
    std::vector<int> pos_ids(static_cast<size_t>(n) + 1);
    for (int i = 0; i <= n; ++i) pos_ids[static_cast<size_t>(i)] = i;
    x = add(x, embedding(b.pos.t, pos_ids));

    Var h = run_trunk(t, b.trunk, x, nullptr);
    Var body = slice_rows(h, 1, n);
    // tied head: the layer-j embedding table, transposed
    return matmul(body, transpose(b.tok[static_cast<size_t>(j)].t));
}

inline Array rformer_forward(RTransformerParams& p,
                             const std::vector<std::vector<int>>& rows_below, int j,
                             const Condition& cond) {
    Tape t;
    auto b = p.bind(t, nullptr);
    return t.val(rformer_logits(t, b, p, rows_below, j, cond));
}

// Per-batch deterministic loss: one layer j for the whole batch,
// cross-entropy over every position of that layer.
struct RformerBatchItem {
    const TokenStack* stack;
    Condition cond;
};

inline Var rformer_loss_core(Tape& t, const RTransformerParams::B& b,
                             const RTransformerParams& p,
                             const std::vector<RformerBatchItem>& items, int j,
                             double* accuracy = nullptr) {
    if (items.empty()) throw domain_error("rformer_loss: empty batch");
    Var total = t.constant_scalar(0.0f);
    int hits = 0, count = 0;
    for (const RformerBatchItem& item : items) {
        const TokenStack& stack = *item.stack;
        if (stack.num_layers() != p.num_quant_layers) {
            throw shape_error("rformer_loss: stack has " + std::to_string(stack.num_layers()) +
                              " layers, model expects " + std::to_string(p.num_quant_layers));
        }
        std::vector<std::vector<int>> below(stack.rows.begin(), stack.rows.begin() + j);
        Var logits = rformer_logits(t, b, p, below, j, item.cond);
        const std::vector<int>& targets = stack.rows[static_cast<size_t>(j)];
        std::vector<float> ones(targets.size(), 1.0f);
        total = add(total, masked_cross_entropy(logits, targets, ones));
        if (accuracy != nullptr) {
            const Array& lv = t.val(logits);
            for (int i = 0; i < lv.dim(0); ++i) {
                int best = 0;
                for (int c = 1; c < lv.cols(); ++c) {
                    if (lv.at(i, c) > lv.at(i, best)) best = c;
                }
                ++count;
                if (best == targets[static_cast<size_t>(i)]) ++hits;
            }
        }
    }
    if (accuracy != nullptr) *accuracy = count > 0 ? static_cast<double>(hits) / count : 0.0;
    return scale(total, 1.0f / static_cast<float>(items.size()));
}

struct RformerTrainResult {
    RTransformerParams params;
    std::vector<TrainLogEntry> log;
};

// Stacked training sample: the full token stack of one motion plus its label.
struct StackedSample {
    TokenStack stack;
    Condition cond;
};

inline RformerTrainResult train_rformer(const std::vector<StackedSample>& data, int codebook_size,
                                        int num_quant_layers, int num_labels,
                                        const MformerDims& dims, uint64_t seed) {
    if (data.empty()) throw config_error("train_rformer: no tokenized stacks");
    Rng root(seed);
    Rng init = root.stream("rformer");
    Rng batch_rng = root.stream("rformer.batch");
    Rng layer_rng = root.stream("rformer.layer");
    Rng cond_rng = root.stream("rformer.cond");

    RformerTrainResult out{
        RTransformerParams::create(codebook_size, num_quant_layers, num_labels, dims, init), {}};
    std::vector<NamedParam> named;
    out.params.visit_params([&](const std::string& n, Array& a) { named.push_back({n, &a}); });
    Adam opt;

    for (int step = 1; step <= dims.steps; ++step) {
        std::vector<RformerBatchItem> items;
        for (int i = 0; i < dims.batch; ++i) {
            const auto& s = data[static_cast<size_t>(batch_rng.uniform_int(
                static_cast<int>(data.size())))];
            Condition c = s.cond;
            if (cond_rng.uniform() < static_cast<double>(dims.null_cond_prob)) {
                c = Condition::null_cond();
            }
            items.push_back({&s.stack, c});
        }
        const int j = 1 + layer_rng.uniform_int(num_quant_layers - 1);  // uniform over [1, V]

        Tape tape;
        Binding binding;
        auto bound = out.params.bind(tape, &binding);
        double acc = 0.0;
        Var loss = rformer_loss_core(tape, bound, out.params, items, j, &acc);
        const float loss_value = tape.val(loss)[0];
        if (!std::isfinite(loss_value)) {
            throw numeric_error("train_rformer: loss diverged at step " + std::to_string(step));
        }
        tape.backward(loss);
        opt.step(named, tape, binding, warmup_lr(dims.lr, step, dims.warmup));
        if (step % 25 == 0 || step == 1 || step == dims.steps) {
            out.log.push_back({step, loss_value, static_cast<float>(acc)});
        }
    }
    return out;
}

}  // namespace mogen
