#include "flowdro/rng.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "flowdro/error.hpp"

namespace flowdro {

std::uint64_t splitmix64_mix(std::uint64_t z)
{
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t Rng::next_u64()
{
    ++counter_;
    return splitmix64_mix(seed_ * 0x9E3779B97F4A7C15ULL + counter_ * 0xD1B54A32D192ED03ULL);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform_open()
{
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::normal()
{
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::laplace(double scale)
{
    const double u = uniform_open() - 0.5;
    const double s = u < 0 ? -1.0 : 1.0;
    return -scale * s * std::log(1.0 - 2.0 * std::abs(u));
}

std::size_t Rng::uniform_index(std::size_t n)
{
    FLOWDRO_REQUIRE(n > 0, "uniform_index: n must be positive");
    // Lemire's multiply-shift, high word of the 128-bit product.
    const std::uint64_t a = next_u64();
    const std::uint64_t b = n;
    const std::uint64_t a_lo = a & 0xffffffffu, a_hi = a >> 32;
    const std::uint64_t b_lo = b & 0xffffffffu, b_hi = b >> 32;
    const std::uint64_t lo_lo = a_lo * b_lo;
    const std::uint64_t hi_lo = a_hi * b_lo;
    const std::uint64_t lo_hi = a_lo * b_hi;
    const std::uint64_t cross = (lo_lo >> 32) + (hi_lo & 0xffffffffu) + lo_hi;
    return static_cast<std::size_t>(a_hi * b_hi + (hi_lo >> 32) + (cross >> 32));
}

std::size_t Rng::categorical(std::span<const double> weights)
{
    FLOWDRO_REQUIRE(!weights.empty(), "categorical: empty weights");
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    FLOWDRO_REQUIRE(total > 0, "categorical: weights sum to zero");
    const double target = uniform() * total;
    double acc = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (target < acc) return i;
    }
    // Rounding: return the last index with positive weight.
    for (std::size_t i = weights.size(); i > 0; --i)
        if (weights[i - 1] > 0) return i - 1;
    return weights.size() - 1;
}

std::vector<std::size_t> Rng::permutation(std::size_t n)
{
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    shuffle(p);
    return p;
}

Rng Rng::split(std::uint64_t stream) const { return Rng(splitmix64_mix(seed_ ^ splitmix64_mix(stream + 1))); }

}  // namespace flowdro
