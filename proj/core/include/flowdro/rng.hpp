#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace flowdro {

/// Counter-based pseudo-random generator.
///
/// Algorithm identity (stable, documented so other implementations can
/// reproduce the stream): the i-th 64-bit word for seed s is
/// splitmix64_mix(s * 0x9E3779B97F4A7C15 + (i + 1) * 0xD1B54A32D192ED03),
/// where splitmix64_mix is the finalizer of SplitMix64. Uniforms take the top
/// 53 bits; normals use the Box-Muller transform on two consecutive uniforms
/// (cosine branch only, no caching); Laplace(b) uses inverse-CDF on one
/// uniform. Streams derived with `split(k)` use seed mix(seed ^ k).
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

    std::uint64_t next_u64();
    /// Uniform on [0, 1).
    double uniform();
    /// Uniform on (0, 1).
    double uniform_open();
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    double laplace(double scale);
    /// Uniform integer in [0, n). Requires n > 0.
    std::size_t uniform_index(std::size_t n);
    /// Index drawn with probability proportional to weights.
    std::size_t categorical(std::span<const double> weights);

    template <class T>
    void shuffle(std::vector<T>& v)
    {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    std::vector<std::size_t> permutation(std::size_t n);

    /// Independent child stream.
    [[nodiscard]] Rng split(std::uint64_t stream) const;

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64_mix(std::uint64_t z);

}  // namespace flowdro
