#pragma once

#include <cmath>
#include <cstdint>
#include <span>

namespace perfmpg {

/// Finalizer of the splitmix64 generator. Bijective on 64-bit words.
inline std::uint64_t splitmix64_mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derives an independent stream seed from a base seed and up to two indices.
/// Used so that (run_seed, round, episode) streams never depend on how many
/// rounds or episodes came before them.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a = 0,
                                 std::uint64_t b = 0) {
    std::uint64_t s = splitmix64_mix(base ^ 0x6a09e667f3bcc909ULL);
    s = splitmix64_mix(s ^ splitmix64_mix(a));
    s = splitmix64_mix(s ^ splitmix64_mix(b ^ 0xbb67ae8584caa73bULL));
    return s;
}

/// Small deterministic RNG (splitmix64). Identical output on every platform,
/// unlike the distributions in <random>.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in (0, 1]. Safe as a log argument.
    double next_double_open() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    /// Index drawn from an unnormalized nonnegative weight vector by CDF scan.
    int categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        double u = next_double() * total;
        double cum = 0.0;
        for (std::size_t k = 0; k + 1 < weights.size(); ++k) {
            cum += weights[k];
            if (u < cum) return static_cast<int>(k);
        }
        return static_cast<int>(weights.size()) - 1;
    }

    /// Draw from P(h = k) = (1 - gamma) * gamma^k, k >= 0.
    int geometric(double gamma) {
        if (gamma <= 0.0) return 0;
        double u = next_double_open();
        double h = std::floor(std::log(u) / std::log(gamma));
        if (h < 0.0) h = 0.0;
        return static_cast<int>(h);
    }

  private:
    std::uint64_t state_;
};

/// FNV-1a over a byte range; used for policy digests and file checksums.
inline std::uint64_t fnv1a(const void* data, std::size_t size,
                           std::uint64_t seed = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace perfmpg
