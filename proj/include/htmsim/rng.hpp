#pragma once

#include <cstdint>
#include <stdexcept>

namespace htmsim {

// splitmix64. Tiny, seedable, and fully deterministic across platforms,
// which matters more here than statistical strength.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [lo, hi], both inclusive.
    uint64_t range(uint64_t lo, uint64_t hi) {
        if (lo > hi) throw std::invalid_argument("Rng::range: lo > hi");
        uint64_t span = hi - lo + 1;
        if (span == 0) return next();  // full 64-bit range
        return lo + next() % span;
    }

private:
    uint64_t state_;
};

}  // namespace htmsim
