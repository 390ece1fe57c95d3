#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace mm2ct {

// Splitmix64 finalizer; also used to derive independent streams from
// (seed, label, index) so e.g. subject i's data never depends on how many
// subjects were generated.
inline uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

class RngStream {
  public:
    explicit RngStream(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        return mix64(state_);
    }

    // uniform in [0,1)
    double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

    float uniform(float lo, float hi) {
        return lo + float(next_double()) * (hi - lo);
    }

    int next_int(int n) { return int(next_u64() % uint64_t(n)); }

    // Box-Muller; both values of a pair are consumed so the draw count per
    // sample is fixed (determinism does not depend on rejection luck).
    float gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return float(spare_);
        }
        double u1 = 1.0 - next_double();  // (0,1]
        double u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return float(r * std::cos(a));
    }

  private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

inline RngStream derive_stream(uint64_t seed, std::string_view label, uint64_t index = 0) {
    uint64_t s = mix64(seed ^ (fnv1a64(label) + 0x9E3779B97F4A7C15ull));
    s = mix64(s ^ (index + 0x632BE59BD9B4E019ull));
    return RngStream(s);
}

}  // namespace mm2ct
