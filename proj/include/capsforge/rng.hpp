#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace capsforge {

/// Named random streams. Every source of randomness in the pipeline draws from
/// one of these so a single seed fixes the whole run.
enum class Stream : std::uint64_t {
    deform = 1,
    shuffle = 2,
    init = 3,
    synth = 4,
};

std::uint64_t splitmix64(std::uint64_t x);

/// Derive an independent substream seed, e.g. one per image index.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Seeded generator for one (seed, stream) pair. The engine is std::mt19937_64
/// (sequence pinned by the standard); the distributions are implemented here
/// because the std ones are not bit-portable across library implementations.
class Rng {
public:
    Rng(std::uint64_t seed, Stream stream)
        : base_seed_(derive_seed(seed, static_cast<std::uint64_t>(stream))), engine_(base_seed_) {}
    explicit Rng(std::uint64_t raw_seed) : base_seed_(raw_seed), engine_(raw_seed) {}

    /// Substream for a per-item index (images deform independently in index order).
    Rng substream(std::uint64_t index) const { return Rng(derive_seed(base_seed_, index)); }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n) by rejection; n > 0.
    std::uint64_t uniform_index(std::uint64_t n);

    /// Standard normal via Box-Muller (pairs cached).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::string state_string() const;
    void set_state_string(const std::string& s);

private:
    std::uint64_t base_seed_ = 0;
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// Fisher-Yates shuffle with the portable index draw above (std::shuffle's
/// sequence is implementation-defined).
template <class Vec>
void shuffle_indices(Vec& v, Rng& rng) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.uniform_index(i + 1));
        std::swap(v[i], v[j]);
    }
}

}  // namespace capsforge
