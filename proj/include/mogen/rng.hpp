#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

#include "mogen/array.hpp"
#include "mogen/errors.hpp"

namespace mogen {

namespace detail {

constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ull;

// splitmix64 finalizer; bijective, platform-independent.
inline uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= static_cast<uint8_t>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace detail

// Counter-based RNG. A generator is a (key, counter) pair; draws are pure
// functions of both, so identical seed + call sequence reproduces exactly.
// Independent named streams are derived by mixing a stream id into the key,
// making reproducibility independent of call interleaving between streams.
class Rng {
public:
    explicit Rng(uint64_t seed) : key_(detail::mix64(seed + detail::kGolden)) {}

    Rng stream(uint64_t id) const {
        Rng r(*this);
        r.key_ = detail::mix64(key_ ^ detail::mix64(id + detail::kGolden));
        r.counter_ = 0;
        return r;
    }
    Rng stream(std::string_view name) const { return stream(detail::fnv1a(name)); }

    uint64_t next_u64() { return detail::mix64(key_ + (++counter_) * detail::kGolden); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    int uniform_int(int n) {
        if (n <= 0) throw domain_error("uniform_int: n must be positive");
        return static_cast<int>((static_cast<__uint128_t>(next_u64()) *
                                 static_cast<__uint128_t>(n)) >> 64);
    }

    // Box-Muller, one value per call (no cached spare, keeps the stream
    // a pure function of the counter).
    double normal() {
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double gumbel() {
        double u = uniform();
        if (u <= 0.0) u = 0x1.0p-53;
        return -std::log(-std::log(u));
    }

    // Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            int j = uniform_int(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

private:
    uint64_t key_ = 0;
    uint64_t counter_ = 0;
};

// Draws an index from softmax(logits / temperature); returns the index and
// its log-probability under that distribution.
inline std::pair<int, double> sample_categorical(const Array& logits, double temperature,
                                                 Rng& rng) {
    const int k = static_cast<int>(logits.numel());
    if (k < 1) throw shape_error("sample_categorical: empty logits");
    if (!(temperature > 0.0)) throw domain_error("sample_categorical: temperature must be > 0");

    double max_logit = -HUGE_VAL;
    for (int i = 0; i < k; ++i) {
        double li = logits[static_cast<size_t>(i)];
        if (li > max_logit) max_logit = li;
    }
    if (!std::isfinite(max_logit)) {
        throw numeric_error("sample_categorical: no finite logit to sample from");
    }

    std::vector<double> p(static_cast<size_t>(k));
    double z = 0.0;
    for (int i = 0; i < k; ++i) {
        double e = std::exp((static_cast<double>(logits[static_cast<size_t>(i)]) - max_logit) /
                            temperature);
        p[static_cast<size_t>(i)] = e;
        z += e;
    }

    double u = rng.uniform() * z;
    double cum = 0.0;
    int chosen = k - 1;
    for (int i = 0; i < k; ++i) {
        cum += p[static_cast<size_t>(i)];
        if (u < cum) {
            chosen = i;
            break;
        }
    }
    double logp = std::log(p[static_cast<size_t>(chosen)] / z);
    return {chosen, logp};
}

}  // namespace mogen
