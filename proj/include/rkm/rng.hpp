#ifndef RKM_RNG_HPP
#define RKM_RNG_HPP

// Counter-based random values: every draw is a pure function of (seed,
// counter), so seeded pipelines stay bit-identical under any threading.

#include <cmath>
#include <cstdint>

namespace rkm::detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Uniform in [0, 1).
inline double hashed_uniform(std::uint64_t seed, std::uint64_t counter) {
    return static_cast<double>(splitmix64(seed ^ splitmix64(counter)) >> 11) / 9007199254740992.0;
}

/// Standard normal via Box-Muller on two hashed uniforms.
inline double hashed_normal(std::uint64_t seed, std::uint64_t counter) {
    const std::uint64_t h1 = splitmix64(seed ^ splitmix64(counter));
    const std::uint64_t h2 = splitmix64(h1);
    const double u1 = (static_cast<double>(h1 >> 11) + 1.0) / 9007199254740993.0;
    const double u2 = static_cast<double>(h2 >> 11) / 9007199254740992.0;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace rkm::detail

#endif
