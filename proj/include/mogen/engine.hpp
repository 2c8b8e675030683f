#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "mogen/codec.hpp"
#include "mogen/config.hpp"
#include "mogen/mformer.hpp"
#include "mogen/rformer.hpp"
#include "mogen/schedule.hpp"

namespace mogen {

// Classifier-free guidance on logits: w_g = (1+s)*w_c - s*w_u.
inline Array cfg_logits(const Array& cond, const Array& uncond, float s) {
    require_same_shape(cond, uncond, "cfg_logits");
    Array out(cond.shape());
    for (size_t i = 0; i < out.numel(); ++i) {
        out[i] = (1.0f + s) * cond[i] - s * uncond[i];
    }
    return out;
}

struct GuidanceConfig {
    float s_masked = 4.0f;
    float s_residual = 5.0f;
    float temperature = 1.0f;
    bool gumbel_anneal = false;

    static GuidanceConfig from(const EngineDefaults& e) {
        return GuidanceConfig{e.s_masked, e.s_residual, e.temperature, e.gumbel_anneal};
    }
};

// Evolving base-layer sequence during iterative decoding. Fixed positions
// hold final tokens (confidence +inf) and are never remasked.
struct DecodeState {
    std::vector<int> row;
    std::vector<uint8_t> fixed;
    std::vector<float> confidence;
    int iteration = 0;

    static DecodeState all_masked(int n, int mask_id) {
        DecodeState s;
        s.row.assign(static_cast<size_t>(n), mask_id);
        s.fixed.assign(static_cast<size_t>(n), 0);
        s.confidence.assign(static_cast<size_t>(n), -std::numeric_limits<float>::infinity());
        return s;
    }

    int free_count() const {
        int c = 0;
        for (uint8_t f : fixed)
            if (!f) ++c;
        return c;
    }
};

struct DecodeTraceEntry {
    int iter;
    int masked;
    int locked;
    double mean_conf;
};

struct DecodeTrace {
    std::vector<DecodeTraceEntry> entries;

    // One line per iteration: iter=<l> masked=<int> locked=<int> mean_conf=<real>
    void write(const std::string& path) const {
        std::FILE* f = std::fopen(path.c_str(), "wb");
        if (f == nullptr) throw io_error("cannot write decode trace '" + path + "'");
        for (const DecodeTraceEntry& e : entries) {
            std::fprintf(f, "iter=%d masked=%d locked=%d mean_conf=%.9g\n", e.iter, e.masked,
                         e.locked, e.mean_conf);
        }
        std::fclose(f);
    }
};

// L-iteration confidence-ranked masked decoding of the base layer. The state
// may arrive partially fixed (inpainting); the remask schedule then runs on
// the number of initially-free positions. After iteration l the masked count
// is ceil(gamma(l/L) * n_free); after the last iteration no masks remain.
// `observer`, when set, sees the state after every iteration.
inline DecodeTrace decode_base(DecodeState& state, const Condition& cond,
                               MTransformerParams& mparams, int iterations,
                               const GuidanceConfig& guidance, Rng& rng,
                               const std::function<void(const DecodeState&)>& observer = {}) {
    const int n = static_cast<int>(state.row.size());
    if (n < 1) throw domain_error("decode_base: empty sequence");
    if (iterations < 1) throw domain_error("decode_base: L must be >= 1");
    const int n_free = state.free_count();
    if (n_free == 0) throw domain_error("decode_base: no free positions to decode");
    const int mask_id = mparams.mask_id();
    for (int i = 0; i < n; ++i) {
        if (state.fixed[static_cast<size_t>(i)] && state.row[static_cast<size_t>(i)] == mask_id) {
            throw token_error("decode_base: fixed position " + std::to_string(i) +
                              " holds the mask id");
        }
    }

    const std::vector<int> remask = remask_schedule(n_free, iterations);
    DecodeTrace trace;
    for (int l = 1; l <= iterations; ++l) {
        // forward conditional and unconditional, guide the logits
        Array logits_c = mformer_forward(mparams, state.row, cond);
        Array logits_u = mformer_forward(mparams, state.row, Condition::null_cond());
        Array guided = cfg_logits(logits_c, logits_u, guidance.s_masked);

        // sample every masked position; confidence = sampled log-probability
        double conf_sum = 0.0;
        int sampled = 0;
        for (int i = 0; i < n; ++i) {
            if (state.row[static_cast<size_t>(i)] != mask_id) continue;
            Array row_logits({mparams.codebook_size});
            for (int c = 0; c < mparams.codebook_size; ++c) {
                row_logits[static_cast<size_t>(c)] = guided.at(i, c);
            }
            auto [token, logp] = sample_categorical(row_logits, guidance.temperature, rng);
            state.row[static_cast<size_t>(i)] = token;
            float conf = static_cast<float>(logp);
            if (guidance.gumbel_anneal) {
                const double anneal = 1.0 - static_cast<double>(l) / iterations;
                conf += static_cast<float>(anneal * rng.gumbel());
            }
            state.confidence[static_cast<size_t>(i)] = conf;
            conf_sum += logp;
            ++sampled;
        }

        // remask the lowest-confidence unfixed positions, lock the rest
        const int to_remask = remask[static_cast<size_t>(l - 1)];
        std::vector<int> candidates;
        for (int i = 0; i < n; ++i) {
            if (!state.fixed[static_cast<size_t>(i)]) candidates.push_back(i);
        }
        std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) {
            return state.confidence[static_cast<size_t>(a)] <
                   state.confidence[static_cast<size_t>(b)];
        });
        for (size_t c = 0; c < candidates.size(); ++c) {
            const int i = candidates[c];
            if (static_cast<int>(c) < to_remask) {
                state.row[static_cast<size_t>(i)] = mask_id;
                state.confidence[static_cast<size_t>(i)] =
                    -std::numeric_limits<float>::infinity();
            } else {
                state.fixed[static_cast<size_t>(i)] = 1;
                state.confidence[static_cast<size_t>(i)] =
                    std::numeric_limits<float>::infinity();
            }
        }
        state.iteration = l;
        int locked = 0;
        for (uint8_t f : state.fixed) locked += f ? 1 : 0;
        trace.entries.push_back(
            {l, to_remask, locked, sampled > 0 ? conf_sum / sampled : 0.0});
        if (observer) observer(state);
    }
    return trace;
}

// Progressive residual prediction: layer j from rows 0..j-1 with CFG, one
// step per residual layer (exactly V steps). In sample mode tokens are drawn
// at the guidance temperature; greedy mode takes the argmax. When `frozen`
// is supplied, positions it marks keep the reference stack's tokens.
enum class ResidualMode { kGreedy, kSample };

inline TokenStack fill_residuals(const std::vector<int>& base_row, const Condition& cond,
                                 RTransformerParams& rparams, const GuidanceConfig& guidance,
                                 ResidualMode mode, Rng& rng,
                                 const TokenStack* reference = nullptr,
                                 const std::vector<uint8_t>* free_mask = nullptr) {
    const int n = static_cast<int>(base_row.size());
    TokenStack stack;
    stack.n = n;
    stack.rows.push_back(base_row);
    for (int j = 1; j <= rparams.residual_layers(); ++j) {
        Array logits_c = rformer_forward(rparams, stack.rows, j, cond);
        Array logits_u = rformer_forward(rparams, stack.rows, j, Condition::null_cond());
        Array guided = cfg_logits(logits_c, logits_u, guidance.s_residual);
        std::vector<int> row(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            if (free_mask != nullptr && !(*free_mask)[static_cast<size_t>(i)]) {
                row[static_cast<size_t>(i)] =
                    reference->rows[static_cast<size_t>(j)][static_cast<size_t>(i)];
                continue;
            }
            if (mode == ResidualMode::kGreedy) {
                int best = 0;
                for (int c = 1; c < guided.cols(); ++c) {
                    if (guided.at(i, c) > guided.at(i, best)) best = c;
                }
                row[static_cast<size_t>(i)] = best;
            } else {
                Array row_logits({guided.cols()});
                for (int c = 0; c < guided.cols(); ++c) {
                    row_logits[static_cast<size_t>(c)] = guided.at(i, c);
                }
                auto [token, logp] = sample_categorical(row_logits, guidance.temperature, rng);
                row[static_cast<size_t>(i)] = token;
            }
        }
        stack.rows.push_back(std::move(row));
    }
    return stack;
}

// Text-conditioned generation of `frames` motion frames: decode the base
// layer, fill the residual layers, detokenize, trim to the requested length.
inline Motion generate(const Condition& cond, int frames, CodecParams& codec,
                       MTransformerParams& mparams, RTransformerParams& rparams, int iterations,
                       const GuidanceConfig& guidance, Rng& rng, DecodeTrace* trace = nullptr,
                       ResidualMode mode = ResidualMode::kGreedy) {
    if (frames < 1) throw domain_error("generate: frame count must be >= 1");
    const int n = (frames + kDownscale - 1) / kDownscale;
    DecodeState state = DecodeState::all_masked(n, mparams.mask_id());
    Rng decode_rng = rng.stream("decode");
    DecodeTrace t = decode_base(state, cond, mparams, iterations, guidance, decode_rng);
    if (trace != nullptr) *trace = std::move(t);
    Rng residual_rng = rng.stream("residual");
    TokenStack stack = fill_residuals(state.row, cond, rparams, guidance, mode, residual_rng);
    Motion m = detokenize(stack, codec, stack.num_layers());
    if (m.num_frames() > frames) {
        Array trimmed({frames, m.feature_dim()});
        std::copy(m.frames.data(), m.frames.data() + trimmed.numel(), trimmed.data());
        m.frames = std::move(trimmed);
    }
    return m;
}

// Temporal inpainting spec: a reference motion plus [start, end) edit ranges
// in latent-token coordinates.
struct InpaintSpec {
    Array reference_frames;  // [N x D]
    int fps = 20;
    std::vector<std::pair<int, int>> ranges;
};

inline void validate_ranges(const std::vector<std::pair<int, int>>& ranges, int n) {
    std::vector<std::pair<int, int>> sorted = ranges;
    std::sort(sorted.begin(), sorted.end());
    int prev_end = 0;
    bool first = true;
    for (auto [s, e] : sorted) {
        if (s < 0 || e > n || s >= e) {
            throw domain_error("inpaint: range [" + std::to_string(s) + ", " + std::to_string(e) +
                               ") invalid for " + std::to_string(n) + " latent tokens");
        }
        if (!first && s < prev_end) throw domain_error("inpaint: ranges overlap");
        prev_end = e;
        first = false;
    }
}

struct InpaintResult {
    Motion motion;
    TokenStack stack;      // the edited token stack
    TokenStack reference;  // the reference motion's stack
    DecodeTrace trace;
};

// Regenerates the edit ranges of a reference motion under a new condition.
// Tokens outside the ranges are locked at every layer; inside, the base is
// re-decoded and the residual layers re-predicted.
inline InpaintResult inpaint_full(const InpaintSpec& spec, const Condition& cond,
                                  CodecParams& codec, MTransformerParams& mparams,
                                  RTransformerParams& rparams, int iterations,
                                  const GuidanceConfig& guidance, Rng& rng,
                                  ResidualMode mode = ResidualMode::kGreedy) {
    InpaintResult out;
    out.reference = tokenize(spec.reference_frames, codec);
    const int n = out.reference.n;
    validate_ranges(spec.ranges, n);

    std::vector<uint8_t> free_mask(static_cast<size_t>(n), 0);
    for (auto [s, e] : spec.ranges) {
        for (int i = s; i < e; ++i) free_mask[static_cast<size_t>(i)] = 1;
    }
    const int n_free = static_cast<int>(std::count(free_mask.begin(), free_mask.end(), 1));

    if (n_free == 0) {
        // nothing to edit: the reference's codec reconstruction
        out.stack = out.reference;
        out.motion = detokenize(out.reference, codec, out.reference.num_layers());
    } else {
        DecodeState state;
        state.row = out.reference.rows[0];
        state.fixed.assign(static_cast<size_t>(n), 1);
        state.confidence.assign(static_cast<size_t>(n), std::numeric_limits<float>::infinity());
        for (int i = 0; i < n; ++i) {
            if (free_mask[static_cast<size_t>(i)]) {
                state.row[static_cast<size_t>(i)] = mparams.mask_id();
                state.fixed[static_cast<size_t>(i)] = 0;
                state.confidence[static_cast<size_t>(i)] =
                    -std::numeric_limits<float>::infinity();
            }
        }
        Rng decode_rng = rng.stream("decode");
        out.trace = decode_base(state, cond, mparams, iterations, guidance, decode_rng);
        Rng residual_rng = rng.stream("residual");
        out.stack = fill_residuals(state.row, cond, rparams, guidance, mode, residual_rng,
                                   &out.reference, &free_mask);
        out.motion = detokenize(out.stack, codec, out.stack.num_layers());
    }
    const int frames = spec.reference_frames.dim(0);
    if (out.motion.num_frames() > frames) {
        Array trimmed({frames, out.motion.feature_dim()});
        std::copy(out.motion.frames.data(), out.motion.frames.data() + trimmed.numel(),
                  trimmed.data());
        out.motion.frames = std::move(trimmed);
    }
    out.motion.fps = spec.fps;
    return out;
}

inline Motion inpaint(const InpaintSpec& spec, const Condition& cond, CodecParams& codec,
                      MTransformerParams& mparams, RTransformerParams& rparams, int iterations,
                      const GuidanceConfig& guidance, Rng& rng, DecodeTrace* trace = nullptr,
                      ResidualMode mode = ResidualMode::kGreedy) {
    InpaintResult r =
        inpaint_full(spec, cond, codec, mparams, rparams, iterations, guidance, rng, mode);
    if (trace != nullptr) *trace = std::move(r.trace);
    return std::move(r.motion);
}

}  // namespace mogen
