#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace phasediff {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Derive a stream key from a root seed and any number of ids
/// (video, frame, trajectory, timestep, ...). Order matters.
constexpr std::uint64_t stream_key(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) noexcept {
    std::uint64_t k = mix64(seed);
    for (auto id : ids) k = mix64(k ^ mix64(id + 0x632BE59BD9B4E019ull));
    return k;
}

/// Counter-based generator: the n-th draw of a stream is a pure function of
/// (key, n). Two streams with different keys are independent; the same key
/// always reproduces the same sequence regardless of what ran before.
class CounterRng {
public:
    explicit constexpr CounterRng(std::uint64_t key) noexcept : key_(key) {}

    std::uint64_t next_u64() noexcept { return mix64(key_ ^ mix64(counter_++)); }

    /// Uniform on the open interval (0, 1).
    double uniform() noexcept { return (double(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    /// Integer uniform on [lo, hi] (inclusive); slight modulo bias is
    /// negligible for the ranges used here.
    std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) noexcept {
        return lo + next_u64() % (hi - lo + 1);
    }

    /// Standard normal by Box-Muller; each call consumes two uniforms.
    double normal() noexcept {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace phasediff
