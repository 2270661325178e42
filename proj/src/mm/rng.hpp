#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace mm {

// Deterministic RNG used for everything seeded (init, shuffles, synthesis).
// Draws are derived from the raw mt19937_64 stream instead of the standard
// distributions, whose output is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1) with 53 bits of entropy
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // index in [0, n), n >= 1
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

    // Box-Muller; one value per draw keeps the stream position predictable
    double gaussian() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) {
            u1 = 1e-300;
        }
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
};

} // namespace mm
