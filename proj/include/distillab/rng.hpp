#pragma once

// Counter-based pseudo-random generator used everywhere a seed appears.
//
// The core is SplitMix64 (Steele, Lea & Flood, "Fast splittable pseudorandom
// number generators", OOPSLA 2014): the n-th output is a finalizing hash of
// key + n * 0x9E3779B97F4A7C15.  Because the state is a plain counter, a
// generator is a pure function of (key, counter) and independent streams can
// be forked without touching the parent.  Every derived quantity (uniform
// doubles, bounded ints, gaussians) is specified below so datasets are
// reproducible bit-for-bit from a seed alone.

#include <cmath>
#include <cstdint>

namespace distillab {

inline uint64_t mix64(uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(uint64_t seed) : key_(seed), counter_(0) {}

    uint64_t next_u64() {
        uint64_t v = mix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
        ++counter_;
        return v;
    }

    // Child stream keyed by (parent key, tag); the parent state is unchanged,
    // so forking per item makes generation order-independent.
    Rng fork(uint64_t tag) const {
        return Rng(mix64(key_ ^ mix64(tag ^ 0xA24BAED4963EE407ULL)));
    }

    // 53-bit mantissa uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n).  Mask-and-reject: draw the smallest number of
    // bits covering n-1 and retry until the value lands below n.
    uint64_t next_below(uint64_t n) {
        if (n <= 1) return 0;
        uint64_t mask = ~uint64_t{0} >> __builtin_clzll(n - 1);
        uint64_t v;
        do {
            v = next_u64() & mask;
        } while (v >= n);
        return v;
    }

    bool next_bernoulli(double p) { return next_double() < p; }

    // Box-Muller.  Draws u1 (retrying zero), u2, returns the cosine branch and
    // caches the sine branch for the next call.
    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        double u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    uint64_t key() const { return key_; }

private:
    uint64_t key_;
    uint64_t counter_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace distillab
