#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace gfl {

// Seeded RNG with explicit bit-to-double mapping. std::mt19937_64 itself is
// fully specified by the standard; avoiding std::*_distribution keeps the
// stream identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Rejection sampling over the top multiple of n.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = static_cast<std::size_t>(below(i + 1));
            std::swap(v[i], v[j]);
        }
    }

    // Derive an independent stream; used to give every benchmark cell and
    // dataset split its own reproducible seed.
    std::uint64_t fork() { return gen_(); }

private:
    std::mt19937_64 gen_;
};

}  // namespace gfl
