#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace mollae {

// Deterministic random source. All distribution transforms are implemented
// here (not via std:: distributions, whose algorithms are
// implementation-defined) so that streams are stable across platforms and
// can be serialized into checkpoints.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [lo, hi], inclusive.
    int uniform_int(int lo, int hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(engine_() % span);
    }

    // Standard normal via Box-Muller. The sine branch is discarded so the
    // generator carries no hidden cache state.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(6.283185307179586476925286766559 * u2);
    }

    std::string save_state() const;
    void load_state(const std::string& state);

private:
    std::mt19937_64 engine_;
};

// Stable seed derivation for independent sub-streams (splitmix64 mix).
uint64_t derive_seed(uint64_t seed, uint64_t stream);

}  // namespace mollae
