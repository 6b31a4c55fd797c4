#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace moma {

// SplitMix64. All randomness in the project flows through this generator so
// that results are reproducible bit-for-bit across platforms and compilers
// (std::uniform_*_distribution is implementation-defined, so it is avoided).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    // standard normal via Box-Muller (no second-value caching, so the draw
    // sequence is a pure function of the call count)
    double normal() {
        double u1 = 1.0 - next_double(); // (0, 1]
        double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // unbiased integer in [0, n)
    std::uint64_t next_below(std::uint64_t n) {
        if (n <= 1) {
            return 0;
        }
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = next_u64();
        while (x >= limit) {
            x = next_u64();
        }
        return x % n;
    }

    // Fisher-Yates
    template <typename T>
    void shuffle(std::vector<T> & v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

// Derive an independent stream seed from a base seed and a path of indices.
inline std::uint64_t mix_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
    std::uint64_t z = base;
    for (std::uint64_t p : path) {
        z += 0x9e3779b97f4a7c15ULL * (p + 0x632be59bd9b4e019ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        z = z ^ (z >> 31);
    }
    return z;
}

} // namespace moma
