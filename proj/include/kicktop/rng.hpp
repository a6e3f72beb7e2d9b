#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <random>

namespace kicktop {

/// Philox4x32-10 block function (Salmon et al., "Parallel random numbers:
/// as easy as 1, 2, 3"). Maps a 128-bit counter and a 64-bit key to 128
/// random bits.
inline std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                                   std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t kM0 = 0xD2511F53u;
    constexpr std::uint32_t kM1 = 0xCD9E8D57u;
    constexpr std::uint32_t kW0 = 0x9E3779B9u;
    constexpr std::uint32_t kW1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            key[0] += kW0;
            key[1] += kW1;
        }
        const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
        const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const auto lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        const auto lo1 = static_cast<std::uint32_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
}

/// Identifies one independent random stream: (master seed, trajectory
/// index, step index, purpose tag). Streams never overlap for distinct keys.
struct StreamKey {
    std::uint64_t seed = 0;
    std::uint32_t trajectory = 0;
    std::uint32_t step = 0;
    std::uint32_t tag = 0;
};

/// Counter-based uniform random bit generator. Results depend only on the
/// key, never on scheduling, so streams can be created in any order on any
/// thread.
class CounterRng {
public:
    using result_type = std::uint64_t;

    explicit CounterRng(StreamKey key) : key_(key) {}
    CounterRng(std::uint64_t seed, std::uint32_t trajectory, std::uint32_t step,
               std::uint32_t tag = 0)
        : key_{seed, trajectory, step, tag} {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        if (lane_ == 2) refill();
        return buffer_[lane_++];
    }

    double normal() { return normal_(*this); }
    double uniform() { return std::generate_canonical<double, 64>(*this); }

    const StreamKey& key() const { return key_; }

private:
    void refill() {
        const auto out = philox4x32_10(
            {block_, key_.tag, key_.step, key_.trajectory},
            {static_cast<std::uint32_t>(key_.seed), static_cast<std::uint32_t>(key_.seed >> 32)});
        ++block_;
        buffer_[0] = (std::uint64_t{out[1]} << 32) | out[0];
        buffer_[1] = (std::uint64_t{out[3]} << 32) | out[2];
        lane_ = 0;
    }

    StreamKey key_;
    std::uint32_t block_ = 0;
    std::array<result_type, 2> buffer_{};
    int lane_ = 2;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Purpose tags so that different consumers of the same (trajectory, step)
/// never share draws unless they are meant to.
namespace stream_tag {
inline constexpr std::uint32_t kOutcome = 1;
inline constexpr std::uint32_t kShadowDirections = 2;
inline constexpr std::uint32_t kRecord = 3;
inline constexpr std::uint32_t kInitialCondition = 4;
}  // namespace stream_tag

}  // namespace kicktop
