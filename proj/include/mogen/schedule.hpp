#pragma once

#include <cmath>
#include <vector>

#include "mogen/errors.hpp"
#include "mogen/rng.hpp"

namespace mogen {

// Cosine mask-ratio schedule: gamma(0) = 1 (fully corrupted), gamma(1) = 0.
// The tau = 1 endpoint returns an exact zero; cos(pi/2) in floating point is
// a positive subnormal-scale value that would otherwise ceil to one.
inline double gamma_schedule(double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) {
        throw domain_error("gamma: tau must lie in [0,1]");
    }
    if (tau == 1.0) return 0.0;
    return std::cos(M_PI * tau / 2.0);
}

// Number of positions to mask at progress tau for a length-n sequence.
inline int mask_count(double tau, int n) {
    if (n < 1) throw domain_error("mask_count: n must be >= 1");
    double c = std::ceil(gamma_schedule(tau) * static_cast<double>(n));
    if (c < 0.0) c = 0.0;
    if (c > static_cast<double>(n)) c = static_cast<double>(n);
    return static_cast<int>(c);
}

enum class MaskAction : uint8_t { kMaskToken, kRandomToken, kKeep };

// Positions selected for corruption and the action applied at each.
struct MaskPlan {
    std::vector<int> positions;
    std::vector<MaskAction> actions;  // parallel to positions
    size_t size() const { return positions.size(); }
};

// Samples tau ~ U(0,1), selects ceil(gamma(tau)*n) positions uniformly
// without replacement, and assigns mask/random/keep actions 80/10/10.
inline std::pair<double, MaskPlan> draw_training_mask(int n, Rng& rng) {
    if (n < 1) throw domain_error("draw_training_mask: n must be >= 1");
    const double tau = rng.uniform();
    const int m = mask_count(tau, n);
    std::vector<int> all(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
    rng.shuffle(all);
    MaskPlan plan;
    plan.positions.assign(all.begin(), all.begin() + m);
    plan.actions.reserve(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        const double u = rng.uniform();
        if (u < 0.8) plan.actions.push_back(MaskAction::kMaskToken);
        else if (u < 0.9) plan.actions.push_back(MaskAction::kRandomToken);
        else plan.actions.push_back(MaskAction::kKeep);
    }
    return {tau, plan};
}

// Result of corrupting a token row: the corrupted row plus supervision flags.
// Loss is computed on every selected position, including keeps.
struct CorruptedRow {
    std::vector<int> tokens;
    std::vector<uint8_t> supervised;
};

// Applies a mask plan to a base-layer token row. The reserved mask id is
// vocab_size (one past the codebook); random replacements draw uniformly
// from the codebook.
inline CorruptedRow apply_mask(const std::vector<int>& tokens, const MaskPlan& plan,
                               int vocab_size, Rng& rng, int mask_id = -1) {
    if (vocab_size < 2) throw config_error("apply_mask: vocab_size must be >= 2");
    if (mask_id < 0) mask_id = vocab_size;
    if (mask_id < vocab_size) {
        throw config_error("apply_mask: mask id " + std::to_string(mask_id) +
                           " collides with codebook ids [0, " + std::to_string(vocab_size) + ")");
    }
    CorruptedRow out;
    out.tokens = tokens;
    out.supervised.assign(tokens.size(), 0);
    for (size_t i = 0; i < plan.positions.size(); ++i) {
        const int pos = plan.positions[i];
        if (pos < 0 || pos >= static_cast<int>(tokens.size())) {
            throw shape_error("apply_mask: plan position " + std::to_string(pos) +
                              " outside row of length " + std::to_string(tokens.size()));
        }
        out.supervised[static_cast<size_t>(pos)] = 1;
        switch (plan.actions[i]) {
            case MaskAction::kMaskToken:
                out.tokens[static_cast<size_t>(pos)] = mask_id;
                break;
            case MaskAction::kRandomToken:
                out.tokens[static_cast<size_t>(pos)] = rng.uniform_int(vocab_size);
                break;
            case MaskAction::kKeep:
                break;
        }
    }
    return out;
}

// Remask counts for the inference loop: entry l-1 holds ceil(gamma(l/L) * n)
// for l = 1..L. Non-increasing, ends at zero.
inline std::vector<int> remask_schedule(int n, int iterations) {
    if (iterations < 1) throw domain_error("remask_schedule: L must be >= 1");
    std::vector<int> counts;
    counts.reserve(static_cast<size_t>(iterations));
    for (int l = 1; l <= iterations; ++l) {
        counts.push_back(mask_count(static_cast<double>(l) / iterations, n));
    }
    return counts;
}

}  // namespace mogen
