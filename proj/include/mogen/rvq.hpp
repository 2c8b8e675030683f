#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mogen/array.hpp"
#include "mogen/autodiff.hpp"
#include "mogen/errors.hpp"
#include "mogen/rng.hpp"

namespace mogen {

// One quantization layer: K code vectors plus EMA statistics.
struct Codebook {
    Array codes;      // [K x d]
    Array ema_count;  // [K]
    Array ema_sum;    // [K x d]
    std::vector<int64_t> usage;  // per-epoch assignment counters

    int size() const { return codes.dim(0); }
    int dim() const { return codes.dim(1); }

    static Codebook create(int k, int d, Rng& rng) {
        Codebook b;
        b.codes = Array({k, d});
        for (size_t i = 0; i < b.codes.numel(); ++i)
            b.codes[i] = static_cast<float>(rng.normal() * 0.1);
        b.ema_count = Array({k});
        b.ema_count.fill(1.0f);
        b.ema_sum = b.codes;
        b.usage.assign(static_cast<size_t>(k), 0);
        return b;
    }

    void reset_usage() { usage.assign(usage.size(), 0); }
};

// The full residual quantizer: layer 0 is the base, layers 1..V refine it.
struct RvqStack {
    std::vector<Codebook> layers;
    float dropout_q = 0.0f;

    int num_layers() const { return static_cast<int>(layers.size()); }
    int dim() const { return layers.front().dim(); }

    static RvqStack create(int num_layers, int codebook_size, int dim, float dropout_q,
                           Rng& rng) {
        if (num_layers < 1) throw config_error("rvq: need at least one quantization layer");
        if (!(dropout_q >= 0.0f && dropout_q <= 1.0f)) {
            throw config_error("rvq: dropout q must lie in [0,1]");
        }
        RvqStack s;
        s.dropout_q = dropout_q;
        for (int v = 0; v < num_layers; ++v) {
            Rng layer_rng = rng.stream("rvq.codebook." + std::to_string(v));
            s.layers.push_back(Codebook::create(codebook_size, dim, layer_rng));
        }
        return s;
    }
};

// Output of residual quantization over a latent sequence.
// residuals[v] is r^v; residuals has active_layers + 1 entries so the
// telescoping identity latents - sum(b^v) == r^A is directly checkable.
struct QuantizeResult {
    std::vector<std::vector<int>> token_rows;  // active_layers rows of n ids
    std::vector<Array> code_rows;              // active_layers arrays [n x d]
    std::vector<Array> residuals;              // active_layers + 1 arrays [n x d]
    int active_layers = 0;

    int seq_len() const { return residuals.front().dim(0); }

    // Sum of the selected code vectors over all active layers.
    Array code_sum() const {
        Array s(code_rows.front().shape());
        for (const Array& c : code_rows) add_inplace(s, c);
        return s;
    }
};

// Nearest code by L2 distance, ties broken by lowest index. Distances are
// accumulated in 64-bit so tie-breaking is deterministic.
inline std::pair<int, const float*> nearest_code(const float* vec, const Codebook& book) {
    const int k = book.size(), d = book.dim();
    if (k < 1) throw config_error("nearest_code: empty codebook");
    for (int c = 0; c < d; ++c) {
        if (!std::isfinite(vec[c])) throw numeric_error("nearest_code: non-finite input vector");
    }
    int best = 0;
    double best_dist = HUGE_VAL;
    for (int i = 0; i < k; ++i) {
        const float* code = book.codes.data() + static_cast<size_t>(i) * d;
        double dist = 0.0;
        for (int c = 0; c < d; ++c) {
            const double diff = static_cast<double>(vec[c]) - code[c];
            dist += diff * diff;
        }
        if (dist < best_dist) {
            best_dist = dist;
            best = i;
        }
    }
    return {best, book.codes.data() + static_cast<size_t>(best) * d};
}

// Recursive residual decomposition: r^0 = latents, b^v = Q_v(r^v),
// r^{v+1} = r^v - b^v, for v < active_layers. The subtraction chain is plain
// float32 elementwise, so the telescoping identity holds bitwise.
inline QuantizeResult residual_quantize(const Array& latents, const RvqStack& stack,
                                        int active_layers) {
    if (active_layers < 1 || active_layers > stack.num_layers()) {
        throw domain_error("residual_quantize: active_layers " + std::to_string(active_layers) +
                           " outside [1, " + std::to_string(stack.num_layers()) + "]");
    }
    ad::require_rank2(latents, "residual_quantize");
    const int n = latents.dim(0), d = latents.dim(1);
    if (d != stack.dim()) {
        throw shape_error("residual_quantize: latent dim " + std::to_string(d) +
                          " vs codebook dim " + std::to_string(stack.dim()));
    }
    QuantizeResult res;
    res.active_layers = active_layers;
    res.residuals.push_back(latents);
    for (int v = 0; v < active_layers; ++v) {
        const Codebook& book = stack.layers[static_cast<size_t>(v)];
        const Array& r = res.residuals.back();
        std::vector<int> tokens(static_cast<size_t>(n));
        Array codes({n, d});
        Array next({n, d});
        for (int i = 0; i < n; ++i) {
            const float* rv = r.data() + static_cast<size_t>(i) * d;
            auto [idx, code] = nearest_code(rv, book);
            tokens[static_cast<size_t>(i)] = idx;
            float* crow = codes.data() + static_cast<size_t>(i) * d;
            float* nrow = next.data() + static_cast<size_t>(i) * d;
            for (int c = 0; c < d; ++c) {
                crow[c] = code[c];
                nrow[c] = rv[c] - code[c];
            }
        }
        res.token_rows.push_back(std::move(tokens));
        res.code_rows.push_back(std::move(codes));
        res.residuals.push_back(std::move(next));
    }
    return res;
}

// Quantization dropout: keep all layers with probability 1-q, otherwise
// draw the number of active layers uniformly from {1, ..., V+1}.
inline int draw_dropout_layers(const RvqStack& stack, Rng& rng) {
    const int full = stack.num_layers();
    if (rng.uniform() >= static_cast<double>(stack.dropout_q)) return full;
    return 1 + rng.uniform_int(full);
}

// Commitment term of the quantizer loss: sum over active layers of the mean
// squared distance between the residual and its (stop-gradient) code.
// Gradient reaches the encoder through the residuals only.
inline Var commitment_loss(Tape& tape, Var latents, const QuantizeResult& result) {
    Array cum(result.code_rows.front().shape());
    Var total = tape.constant_scalar(0.0f);
    for (int v = 0; v < result.active_layers; ++v) {
        add_inplace(cum, result.code_rows[static_cast<size_t>(v)]);
        Var term = mean_sq(sub(latents, tape.constant(cum)));
        total = add(total, term);
    }
    return total;
}

// Straight-through estimator: the forward value is the code sum bit-exactly;
// the backward pass treats the quantizer as the identity, so the incoming
// gradient flows to the latents unchanged.
inline Var straight_through(Tape& tape, Var latents, const QuantizeResult& result) {
    const Array& lv = tape.val(latents);
    Array value = result.code_sum();
    require_same_shape(lv, value, "straight_through");
    int oid = tape.next_id(), il = latents.id;
    return tape.push(std::move(value), tape.requires_grad(latents.id), [oid, il](Tape& tp) {
        add_inplace(tp.grad_mut(il), tp.grad_mut(oid));
    });
}

// Residual vectors routed to one layer during a training step.
struct LayerBatch {
    std::vector<Array> vectors;  // each [d]
    std::vector<int> indices;    // parallel code assignments
};

// Gathers per-layer EMA batches from quantization results.
inline void collect_ema_batch(const QuantizeResult& result, std::vector<LayerBatch>& batches) {
    const int d = result.residuals.front().dim(1);
    if (batches.size() < static_cast<size_t>(result.active_layers)) {
        batches.resize(static_cast<size_t>(result.active_layers));
    }
    for (int v = 0; v < result.active_layers; ++v) {
        const Array& r = result.residuals[static_cast<size_t>(v)];
        LayerBatch& lb = batches[static_cast<size_t>(v)];
        for (int i = 0; i < r.dim(0); ++i) {
            Array vec({d});
            std::copy(r.data() + static_cast<size_t>(i) * d,
                      r.data() + static_cast<size_t>(i + 1) * d, vec.data());
            lb.vectors.push_back(std::move(vec));
            lb.indices.push_back(result.token_rows[static_cast<size_t>(v)][static_cast<size_t>(i)]);
        }
    }
}

// EMA codebook update with dead-code reset. Per code k:
//   count <- lambda*count + (1-lambda)*n_k
//   sum   <- lambda*sum   + (1-lambda)*sum(assigned residuals)
//   code  <- sum / max(count, eps)
// Codes whose count falls below reset_threshold restart at a residual vector
// drawn uniformly from the layer's batch.
inline void ema_update(RvqStack& stack, const std::vector<LayerBatch>& batches, float lambda,
                       float reset_threshold, Rng& rng) {
    if (!(lambda > 0.0f && lambda < 1.0f)) throw domain_error("ema_update: lambda must be in (0,1)");
    constexpr double kEps = 1e-6;
    for (size_t v = 0; v < batches.size() && v < stack.layers.size(); ++v) {
        const LayerBatch& lb = batches[v];
        if (lb.vectors.empty()) continue;  // no-op for empty layer batches
        Codebook& book = stack.layers[v];
        const int k = book.size(), d = book.dim();
        std::vector<double> counts(static_cast<size_t>(k), 0.0);
        std::vector<double> sums(static_cast<size_t>(k) * d, 0.0);
        for (size_t i = 0; i < lb.vectors.size(); ++i) {
            const int idx = lb.indices[i];
            if (idx < 0 || idx >= k) {
                throw token_error("ema_update: assignment " + std::to_string(idx) +
                                  " outside codebook of " + std::to_string(k));
            }
            counts[static_cast<size_t>(idx)] += 1.0;
            const Array& vec = lb.vectors[i];
            double* dst = sums.data() + static_cast<size_t>(idx) * d;
            for (int c = 0; c < d; ++c) dst[c] += vec[static_cast<size_t>(c)];
            book.usage[static_cast<size_t>(idx)] += 1;
        }
        for (int i = 0; i < k; ++i) {
            const double ncount = lambda * book.ema_count[static_cast<size_t>(i)] +
                                  (1.0 - lambda) * counts[static_cast<size_t>(i)];
            book.ema_count[static_cast<size_t>(i)] = static_cast<float>(ncount);
            float* sumrow = book.ema_sum.data() + static_cast<size_t>(i) * d;
            const double* batchrow = sums.data() + static_cast<size_t>(i) * d;
            float* coderow = book.codes.data() + static_cast<size_t>(i) * d;
            for (int c = 0; c < d; ++c) {
                const double nsum = lambda * sumrow[c] + (1.0 - lambda) * batchrow[c];
                sumrow[c] = static_cast<float>(nsum);
                coderow[c] = static_cast<float>(nsum / std::max(ncount, kEps));
            }
        }
        for (int i = 0; i < k; ++i) {
            if (book.ema_count[static_cast<size_t>(i)] < reset_threshold) {
                const int pick = rng.uniform_int(static_cast<int>(lb.vectors.size()));
                const Array& vec = lb.vectors[static_cast<size_t>(pick)];
                float* coderow = book.codes.data() + static_cast<size_t>(i) * d;
                float* sumrow = book.ema_sum.data() + static_cast<size_t>(i) * d;
                for (int c = 0; c < d; ++c) {
                    coderow[c] = vec[static_cast<size_t>(c)];
                    sumrow[c] = vec[static_cast<size_t>(c)];
                }
                book.ema_count[static_cast<size_t>(i)] = 1.0f;
            }
        }
    }
}

}  // namespace mogen
