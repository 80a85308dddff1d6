#pragma once
// Counter-based deterministic RNG.
//
// Each draw is the SplitMix64 finalizer applied to key + n*GOLDEN, where n is
// a per-instance counter. A draw is a pure function of (seed, stream, counter),
// so substreams can be handed out per sample index and regenerated from any
// language that reproduces the mixer. No hidden global state.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>

namespace lf {

class CounterRng {
public:
    static constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;

    explicit CounterRng(uint64_t seed, uint64_t stream = 0)
        : key_(mix(seed ^ mix(stream * kGolden + 1))) {}

    static uint64_t mix(uint64_t z) {
        z += kGolden;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    uint64_t next_u64() { return mix(key_ + (++counter_) * kGolden); }

    // [0,1), 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // unbiased via rejection
    uint64_t below(uint64_t n) {
        if (n == 0) throw std::invalid_argument("CounterRng::below: n == 0");
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v;
        do { v = next_u64(); } while (v >= limit);
        return v % n;
    }

    // Box-Muller with cached spare; consumes exactly two uniforms per pair
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log1p(-u1));
        const double t = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    // inverse-CDF draw; weights must be nonnegative and sum to ~1
    size_t categorical(std::span<const double> probs) {
        const double u = uniform();
        double acc = 0.0;
        for (size_t i = 0; i < probs.size(); ++i) {
            acc += probs[i];
            if (u < acc) return i;
        }
        return probs.size() - 1;
    }

private:
    uint64_t key_;
    uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace lf
