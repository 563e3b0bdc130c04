#pragma once

#include <cstdint>

namespace kiss {

/// Counter-based uniform stream: the k-th draw of stream (seed, stream_id) is a
/// pure function of its coordinates, so any scenario can be regenerated alone.
/// Each stream is a SplitMix64 sequence whose starting state is derived from
/// the seed and the stream id.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream_id)
        : key_(mix(seed + mix(stream_id ^ 0xD1B54A32D192ED03ULL))) {}

    std::uint64_t bits(std::uint64_t k) const { return mix(key_ + (k + 1) * kGamma); }

    /// Uniform on the open interval (0, 1).
    double uniform(std::uint64_t k) const {
        return (static_cast<double>(bits(k) >> 11) + 0.5) * 0x1.0p-53;
    }

    static constexpr std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
    std::uint64_t key_;
};

}  // namespace kiss
