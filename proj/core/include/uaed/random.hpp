#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>

namespace uaed {

/// Engine used for every stochastic operation. All draws go through the
/// helpers below or Boost.Random distributions, both of which are
/// platform-independent, so a seed pins the whole run.
using Rng = std::mt19937_64;

/// Uniform draw in the open interval (0, 1).
inline double uniform_open(Rng& rng) {
    for (;;) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        if (u > 0.0) {
            return u;
        }
    }
}

inline bool bernoulli(Rng& rng, double p) { return uniform_open(rng) < p; }

inline double standard_gumbel(Rng& rng) { return -std::log(-std::log(uniform_open(rng))); }

/// Uniform index in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return static_cast<std::size_t>(uniform_open(rng) * static_cast<double>(n)) % n;
}

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& state);

} // namespace uaed
