// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

#include <boost/random/mersenne_twister.hpp>

namespace srigl {

/// MT19937-64. Same output stream as std::mt19937_64 for the same seed; the
/// Boost engine is several times faster to step. The bounds are restated as
/// constexpr, which the standard distributions require.
class Rng : public boost::random::mt19937_64 {
public:
    using boost::random::mt19937_64::mt19937_64;
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }
};

/// splitmix64 finaliser; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return mix64(mix64(seed) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

/// Generator for stream `stream` of the family rooted at `seed`.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    // exact result_type, so the integer-seed constructor is chosen
    return Rng(static_cast<Rng::result_type>(derive_seed(seed, stream)));
}

__extension__ using uint128 = unsigned __int128;

/// Uniform integer in [0, range) (Lemire's multiply-shift with rejection).
template <typename G>
std::uint64_t uniform_below(G& gen, std::uint64_t range) {
    static_assert(G::min() == 0 && G::max() == ~std::uint64_t{0}, "needs a full 64-bit generator");
    uint128 m = static_cast<uint128>(gen()) * range;
    auto low = static_cast<std::uint64_t>(m);
    if (low < range) {
        const std::uint64_t threshold = (0 - range) % range;
        while (low < threshold) {
            m = static_cast<uint128>(gen()) * range;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::uint64_t>(m >> 64);
}

/// Uniform integers below 2^32, two per 64-bit output of the wrapped generator.
template <typename G>
class HalfWordDraws {
public:
    explicit HalfWordDraws(G& gen) : gen_(gen) {}

    std::uint32_t next() {
        if (have_) {
            have_ = false;
            return static_cast<std::uint32_t>(buf_ >> 32);
        }
        buf_ = gen_();
        have_ = true;
        return static_cast<std::uint32_t>(buf_);
    }

    /// Uniform in [0, range), range >= 1.
    std::uint32_t below(std::uint32_t range) {
        std::uint64_t m = static_cast<std::uint64_t>(next()) * range;
        auto low = static_cast<std::uint32_t>(m);
        if (low < range) {
            const std::uint32_t threshold = (0u - range) % range;
            while (low < threshold) {
                m = static_cast<std::uint64_t>(next()) * range;
                low = static_cast<std::uint32_t>(m);
            }
        }
        return static_cast<std::uint32_t>(m >> 32);
    }

private:
    G& gen_;
    std::uint64_t buf_ = 0;
    bool have_ = false;
};

}  // namespace srigl
