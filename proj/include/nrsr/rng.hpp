#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace nrsr {

// Deterministic counter-style stream built on the splitmix64 finalizer.
// A stream is fully determined by (master_seed, stream_id): the draw
// sequence is identical on every run and never depends on which thread
// owns the stream.
class RngStream {
public:
    RngStream(std::uint64_t master_seed, std::uint64_t stream_id)
        : state_(mix(mix(master_seed) ^ mix(stream_id * 0xD2B74407B1CE6E93ULL + 0x8BB84B93962EACC9ULL))) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix(state_);
    }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform strictly inside (0, 1); safe for log(u) and log(1-u).
    double uniform_open() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Box-Muller; two draws per variate keeps the stream layout trivial.
    double normal(double mean = 0.0, double stddev = 1.0) {
        const double u1 = uniform_open();
        const double u2 = uniform_open();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(6.283185307179586477 * u2);
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
};

// Stream-id layout shared by the whole pipeline. Every consumer derives
// its stream from one master seed so a run is reproducible end to end.
namespace stream {
inline constexpr std::uint64_t kData = 0;        // sub 0/1/2 = ngm/reward/eval split
inline constexpr std::uint64_t kNgm = 1;
inline constexpr std::uint64_t kPolicyInit = 2;
inline constexpr std::uint64_t kSamplingBase = 3;  // role 3+iteration, sub = trajectory index

inline std::uint64_t id(std::uint64_t role, std::uint64_t sub = 0) {
    return (role << 40) | (sub & ((1ULL << 40) - 1));
}
}  // namespace stream

inline RngStream make_stream(std::uint64_t master_seed, std::uint64_t role, std::uint64_t sub = 0) {
    return RngStream(master_seed, stream::id(role, sub));
}

}  // namespace nrsr
