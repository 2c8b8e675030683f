#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mogen/array.hpp"
#include "mogen/autodiff.hpp"
#include "mogen/errors.hpp"
#include "mogen/rng.hpp"

namespace mogen {

// Named views over a model's learnable arrays. Models expose a visit method
// that enumerates parameters in a fixed order; the same order is used for
// optimizer state, checkpointing, and per-step tape binding.
struct NamedParam {
    std::string name;
    Array* value;
};

// Vars created for one training step, aligned with the parameter names.
struct Binding {
    std::vector<std::pair<std::string, Var>> entries;

    Var bind(Tape& tape, const std::string& name, const Array& value) {
        Var v = tape.leaf(value, true);
        entries.emplace_back(name, v);
        return v;
    }
};

// ----------------------------------------------------------------- init

inline void init_normal(Array& a, Rng& rng, float std_dev) {
    for (size_t i = 0; i < a.numel(); ++i)
        a[i] = static_cast<float>(rng.normal() * std_dev);
}

inline void init_zeros(Array& a) { a.fill(0.0f); }

inline void init_ones(Array& a) { a.fill(1.0f); }

// Kaiming-style scale for a layer with the given fan-in.
inline void init_fanin(Array& a, Rng& rng, int fan_in) {
    init_normal(a, rng, 1.0f / std::sqrt(static_cast<float>(fan_in)));
}

// ----------------------------------------------------------------- Adam

struct AdamConfig {
    float beta1 = 0.9f;
    float beta2 = 0.99f;
    float eps = 1e-8f;
};

// Standard Adam with bias correction. A non-finite gradient aborts the step
// and reports the offending parameter.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    int64_t steps_taken() const { return t_; }

    void step(const std::vector<NamedParam>& params, Tape& tape, const Binding& binding,
              float lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
        std::map<std::string, Array*> by_name;
        for (const NamedParam& p : params) by_name[p.name] = p.value;
        for (const auto& [name, var] : binding.entries) {
            auto it = by_name.find(name);
            if (it == by_name.end()) {
                throw config_error("adam: bound parameter '" + name + "' is not registered");
            }
            const Array& g = tape.grad(var);
            if (!g.all_finite()) {
                throw numeric_error("adam: non-finite gradient for parameter '" + name +
                                    "' at step " + std::to_string(t_));
            }
            apply(name, *it->second, g, lr, bc1, bc2);
        }
    }

private:
    struct Slot {
        Array m, v;
    };

    void apply(const std::string& name, Array& p, const Array& g, float lr, double bc1,
               double bc2) {
        Slot& s = slots_[name];
        if (s.m.empty()) {
            s.m = Array(p.shape());
            s.v = Array(p.shape());
        }
        require_same_shape(p, g, "adam");
        for (size_t i = 0; i < p.numel(); ++i) {
            const double gi = g[i];
            const double m = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * gi;
            const double v = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * gi * gi;
            s.m[i] = static_cast<float>(m);
            s.v[i] = static_cast<float>(v);
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            p[i] = static_cast<float>(p[i] - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
        }
    }

    AdamConfig cfg_;
    std::map<std::string, Slot> slots_;
    int64_t t_ = 0;
};

// Linear warm-up to the peak rate, then constant.
inline float warmup_lr(float peak, int64_t step, int64_t warmup_steps) {
    if (warmup_steps <= 0 || step >= warmup_steps) return peak;
    return peak * static_cast<float>(step) / static_cast<float>(warmup_steps);
}

// Linear warm-up, then cosine decay to lr_min over the remaining steps.
// lr_min == 0 keeps the rate constant after warm-up.
inline float warmup_cosine_lr(float peak, float lr_min, int64_t step, int64_t warmup_steps,
                              int64_t total_steps) {
    if (step < warmup_steps) return warmup_lr(peak, step, warmup_steps);
    if (lr_min <= 0.0f || total_steps <= warmup_steps) return peak;
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    return static_cast<float>(lr_min +
                              0.5 * (peak - lr_min) * (1.0 + std::cos(M_PI * progress)));
}

// One line of a training log. The second metric is loop-specific: plain L1
// for the codec, masked/top-1 accuracy for the transformers.
struct TrainLogEntry {
    int step;
    float loss;
    float recon_l1;
};

}  // namespace mogen
