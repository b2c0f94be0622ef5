#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace parapoint {

// Seeded RNG used everywhere randomness enters a run (init, sampling,
// perturbation). Keeps its own uniform/normal transforms so the draw
// sequence is a pure function of the mt19937_64 stream; no distribution
// object carries hidden state across calls.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    double uniform01() {
        // 53-bit mantissa uniform in [0, 1)
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // unbiased integer in [0, n)
    int uniform_int(int n) {
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t bound = UINT64_MAX - UINT64_MAX % un;
        uint64_t r;
        do {
            r = eng_();
        } while (r >= bound);
        return static_cast<int>(r % un);
    }

    // Box-Muller; deliberately stateless (the cosine twin is discarded)
    double normal() {
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    std::string save_state() const {
        std::ostringstream os;
        os << eng_;
        return os.str();
    }
    void restore_state(const std::string& s) {
        std::istringstream is(s);
        is >> eng_;
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace parapoint
