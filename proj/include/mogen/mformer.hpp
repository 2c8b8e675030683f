#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mogen/autodiff.hpp"
#include "mogen/config.hpp"
#include "mogen/schedule.hpp"
#include "mogen/transformer.hpp"

namespace mogen {

// Bidirectional masked transformer over base-layer tokens. The condition is
// injected as one prepended token; the output vocabulary covers codebook ids
// only, never the mask or pad id.
struct MTransformerParams {
    int codebook_size = 0;  // K_base
    int num_labels = 0;
    int max_len = 0;

    EmbeddingTable tok;   // (K+2) x h: codebook ids + mask + pad
    EmbeddingTable cond;  // (labels+1) x h: labels + null row
    EmbeddingTable pos;   // (max_len+1) x h: condition slot + sequence
    Trunk trunk;
    Dense head;           // h -> K

    int mask_id() const { return codebook_size; }
    int pad_id() const { return codebook_size + 1; }
    int null_label() const { return num_labels; }

    struct B {
        EmbeddingTable::B tok, cond, pos;
        Trunk::B trunk;
        Dense::B head;
    };

    static MTransformerParams create(int codebook_size, int num_labels, const MformerDims& dims,
                                     Rng& rng) {
        Rng init = rng.stream("mformer.init");
        MTransformerParams p;
        p.codebook_size = codebook_size;
        p.num_labels = num_labels;
        p.max_len = dims.max_len;
        p.tok = EmbeddingTable::create(codebook_size + 2, dims.hidden, init);
        p.cond = EmbeddingTable::create(num_labels + 1, dims.hidden, init);
        p.pos = EmbeddingTable::create(dims.max_len + 1, dims.hidden, init);
        p.trunk = Trunk::create(dims.hidden, dims.layers, dims.heads, init);
        p.head = Dense::create(dims.hidden, codebook_size, init);
        return p;
    }

    B bind(Tape& t, Binding* bind) {
        return B{tok.bind(t, bind, "mformer.tok"), cond.bind(t, bind, "mformer.cond"),
                 pos.bind(t, bind, "mformer.pos"), trunk.bind(t, bind, "mformer.trunk"),
                 head.bind(t, bind, "mformer.head")};
    }

    template <typename F>
    void visit_params(F&& f) {
        tok.visit("mformer.tok", f);
        cond.visit("mformer.cond", f);
        pos.visit("mformer.pos", f);
        trunk.visit("mformer.trunk", f);
        head.visit("mformer.head", f);
    }
};

inline int condition_row(const Condition& c, int num_labels) {
    if (c.is_null) return num_labels;
    if (c.label_id < 0 || c.label_id >= num_labels) {
        throw token_error("condition label " + std::to_string(c.label_id) +
                          " outside vocabulary of " + std::to_string(num_labels));
    }
    return c.label_id;
}

// Logits [n x K] for a (possibly corrupted) base-layer row. Pad positions are
// attended out for every query; their output rows carry no supervision.
inline Var mformer_logits(Tape& t, const MTransformerParams::B& b, const MTransformerParams& p,
                          const std::vector<int>& row, const Condition& cond) {
    const int n = static_cast<int>(row.size());
    if (n < 1) throw shape_error("mformer_forward: empty row");
    if (n > p.max_len) {
        throw domain_error("mformer_forward: sequence length " + std::to_string(n) +
                           " exceeds max_len " + std::to_string(p.max_len));
    }
    for (int id : row) {
        if (id < 0 || id > p.pad_id()) {
            throw token_error("mformer_forward: token id " + std::to_string(id) +
                              " outside vocabulary (codebook + mask + pad)");
        }
    }
    Var cond_emb = embedding(b.cond.t, {condition_row(cond, p.num_labels)});
    Var tok_emb = embedding(b.tok.t, row);
    Var x = concat_rows({cond_emb, tok_emb});

    std::vector<int> pos_ids(static_cast<size_t>(n) + 1);
    for (int i = 0; i <= n; ++i) pos_ids[static_cast<size_t>(i)] = i;
    x = add(x, embedding(b.pos.t, pos_ids));

    bool has_pad = false;
    Array key_bias({n + 1});
    for (int i = 0; i < n; ++i) {
        if (row[static_cast<size_t>(i)] == p.pad_id()) {
            key_bias[static_cast<size_t>(i) + 1] = -1e9f;
            has_pad = true;
        }
    }
    Var h = run_trunk(t, b.trunk, x, has_pad ? &key_bias : nullptr);
    return apply_dense(b.head, slice_rows(h, 1, n));
}

// Convenience forward on frozen parameters.
inline Array mformer_forward(MTransformerParams& p, const std::vector<int>& row,
                             const Condition& cond) {
    Tape t;
    auto b = p.bind(t, nullptr);
    return t.val(mformer_logits(t, b, p, row, cond));
}

// One corrupted training sequence with its supervision targets.
struct MaskedItem {
    std::vector<int> corrupted;
    std::vector<int> targets;
    std::vector<float> weights;
    Condition cond;
};

// Applies the cosine-schedule corruption and the 10% null-condition swap.
// A draw with zero supervised positions is redrawn once, then skipped.
inline std::vector<MaskedItem> draw_masked_batch(const std::vector<std::vector<int>>& rows,
                                                 const std::vector<Condition>& conds,
                                                 int vocab_size, float null_cond_prob,
                                                 Rng& rng) {
    std::vector<MaskedItem> items;
    for (size_t i = 0; i < rows.size(); ++i) {
        const std::vector<int>& row = rows[i];
        MaskPlan plan;
        for (int attempt = 0; attempt < 2; ++attempt) {
            auto [tau, p] = draw_training_mask(static_cast<int>(row.size()), rng);
            if (!p.positions.empty()) {
                plan = std::move(p);
                break;
            }
        }
        if (plan.positions.empty()) continue;  // skipped after one redraw
        CorruptedRow cr = apply_mask(row, plan, vocab_size, rng);
        MaskedItem item;
        item.corrupted = std::move(cr.tokens);
        item.targets = row;
        item.weights.assign(row.size(), 0.0f);
        for (size_t j = 0; j < row.size(); ++j) {
            if (cr.supervised[j]) item.weights[j] = 1.0f;
        }
        item.cond = conds[i];
        if (rng.uniform() < static_cast<double>(null_cond_prob)) {
            item.cond = Condition::null_cond();
        }
        items.push_back(std::move(item));
    }
    return items;
}

// Deterministic loss over pre-drawn corruptions: cross-entropy summed over
// the supervised positions of each sequence, averaged over their count, then
// averaged over the batch.
inline Var mformer_loss_core(Tape& t, const MTransformerParams::B& b, const MTransformerParams& p,
                             const std::vector<MaskedItem>& items, double* accuracy = nullptr) {
    if (items.empty()) throw domain_error("mformer_loss: empty batch");
    Var total = t.constant_scalar(0.0f);
    int hits = 0, supervised = 0;
    for (const MaskedItem& item : items) {
        Var logits = mformer_logits(t, b, p, item.corrupted, item.cond);
        total = add(total, masked_cross_entropy(logits, item.targets, item.weights));
        if (accuracy != nullptr) {
            const Array& lv = t.val(logits);
            for (size_t i = 0; i < item.weights.size(); ++i) {
                if (item.weights[i] == 0.0f) continue;
                ++supervised;
                int best = 0;
                for (int c = 1; c < lv.cols(); ++c) {
                    if (lv.at(static_cast<int>(i), c) > lv.at(static_cast<int>(i), best)) best = c;
                }
                if (best == item.targets[i]) ++hits;
            }
        }
    }
    if (accuracy != nullptr) {
        *accuracy = supervised > 0 ? static_cast<double>(hits) / supervised : 0.0;
    }
    return scale(total, 1.0f / static_cast<float>(items.size()));
}

struct MformerTrainResult {
    MTransformerParams params;
    std::vector<TrainLogEntry> log;  // recon_l1 field carries masked accuracy
};

// Training sample: one tokenized base row plus its label condition.
struct TokenizedSample {
    std::vector<int> base_row;
    Condition cond;
};

inline MformerTrainResult train_mformer(const std::vector<TokenizedSample>& data,
                                        int codebook_size, int num_labels,
                                        const MformerDims& dims, uint64_t seed) {
    if (data.empty()) throw config_error("train_mformer: no tokenized sequences");
    Rng root(seed);
    Rng init = root.stream("mformer");
    Rng batch_rng = root.stream("mformer.batch");
    Rng mask_rng = root.stream("mformer.mask");

    MformerTrainResult out{MTransformerParams::create(codebook_size, num_labels, dims, init), {}};
    std::vector<NamedParam> named;
    out.params.visit_params([&](const std::string& n, Array& a) { named.push_back({n, &a}); });
    Adam opt;

    for (int step = 1; step <= dims.steps; ++step) {
        std::vector<std::vector<int>> rows;
        std::vector<Condition> conds;
        for (int i = 0; i < dims.batch; ++i) {
            const auto& s = data[static_cast<size_t>(batch_rng.uniform_int(
                static_cast<int>(data.size())))];
            rows.push_back(s.base_row);
            conds.push_back(s.cond);
        }
        auto items = draw_masked_batch(rows, conds, codebook_size, dims.null_cond_prob, mask_rng);
        if (items.empty()) continue;

        Tape tape;
        Binding binding;
        auto bound = out.params.bind(tape, &binding);
        double acc = 0.0;
        Var loss = mformer_loss_core(tape, bound, out.params, items, &acc);
        const float loss_value = tape.val(loss)[0];
        if (!std::isfinite(loss_value)) {
            throw numeric_error("train_mformer: loss diverged at step " + std::to_string(step));
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
