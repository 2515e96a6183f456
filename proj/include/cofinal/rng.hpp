#pragma once

#include <cstdint>

namespace cofinal {

// Deterministic splittable counter-based generator (SplitMix64).  The same
// seed yields the same draw sequence on every platform, and the full state is
// a single u64 so it can be checkpointed and restored exactly.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n), unbiased via rejection sampling.
    std::uint64_t next_below(std::uint64_t n);

    // Standard normal draw (Box-Muller, no cached second value so the state
    // stays a single u64).
    double next_normal();

    // Derive an independent child stream.
    RngStream split() { return RngStream(next_u64()); }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

private:
    std::uint64_t state_;
};

}  // namespace cofinal
