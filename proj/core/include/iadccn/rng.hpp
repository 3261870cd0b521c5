#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace iadccn {

/// Seeded generator with platform-independent distributions.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. The distribution helpers are written out here because the
/// std:: distributions are implementation-defined, and the same seed must
/// give the same scenes, patches and weights on every toolchain.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in the closed range [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    /// Standard normal via Box-Muller; the spare deviate is cached.
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    /// Derives an independent child seed, e.g. one per image.
    std::uint64_t fork_seed() { return mix(engine_()); }

    static std::uint64_t mix(std::uint64_t x);

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// seed = hash(global_seed, key); used for per-image streams.
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view key);

}  // namespace iadccn
