#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>
#include <utility>

namespace patchal {

/// Purposes are part of the stream key so that, e.g., the starting-budget
/// draws never share randomness with a later query or with learner bootstraps.
enum class StreamPurpose : std::uint64_t {
    Split = 1,
    StartingBudget = 2,
    Query = 3,
    Noise = 4,
    Bootstrap = 5,
    Synthetic = 6,
    Test = 99,
};

inline constexpr std::uint64_t splitmix_mix(std::uint64_t z) noexcept
{
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Counter-based stream (SplitMix64). The n-th output depends only on the key
/// and n, so results never depend on worker scheduling. Distributions are
/// implemented here rather than with <random> so that sequences are identical
/// across standard libraries.
class RngStream {
public:
    using result_type = std::uint64_t;

    explicit RngStream(std::uint64_t key) noexcept : state_(splitmix_mix(key)) {}

    /// Stream keyed by (experiment seed, loop index, purpose, image/member index).
    static RngStream keyed(std::uint64_t seed, std::uint64_t loop, StreamPurpose purpose, std::uint64_t index = 0) noexcept
    {
        std::uint64_t k = splitmix_mix(seed ^ 0x6A09E667F3BCC909ULL);
        for (std::uint64_t part : {loop, static_cast<std::uint64_t>(purpose), index}) {
            k = splitmix_mix(k + 0x9E3779B97F4A7C15ULL + part);
        }
        return RngStream(k);
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }

    result_type operator()() noexcept
    {
        state_ += 0x9E3779B97F4A7C15ULL;
        return splitmix_mix(state_);
    }

    /// Uniform on the open interval (0, 1).
    double uniform_open() noexcept
    {
        return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Uniform on [0, 1).
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Unbiased integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept
    {
        if (n <= 1) return 0;
        const std::uint64_t limit = max() - max() % n;
        std::uint64_t r = 0;
        do {
            r = (*this)();
        } while (r >= limit);
        return r % n;
    }

    std::int64_t between(std::int64_t lo, std::int64_t hi_inclusive) noexcept
    {
        return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
    }

    /// Standard normal via Box-Muller (one value per call).
    double normal() noexcept
    {
        const double u1 = uniform_open();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <typename T>
    void shuffle(std::span<T> items) noexcept
    {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t state_;
};

}  // namespace patchal
