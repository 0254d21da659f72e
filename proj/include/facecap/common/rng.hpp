#ifndef FACECAP_COMMON_RNG_HPP
#define FACECAP_COMMON_RNG_HPP

#include <cstdint>
#include <random>

namespace facecap {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Seeded RNG with derivable child streams so per-sample work is independent
// of iteration order.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed), seed_(seed) {}

    std::mt19937_64& engine() { return engine_; }
    uint64_t seed() const { return seed_; }

    // Child stream k of this generator's seed; stable under reordering.
    Rng derive(uint64_t k) const { return Rng(splitmix64(seed_ ^ splitmix64(k + 1))); }

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }
    double normal(double mean, double stddev) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }
    // Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        return std::uniform_int_distribution<int>(lo, hi)(engine_);
    }

private:
    std::mt19937_64 engine_;
    uint64_t seed_;
};

} // namespace facecap

#endif
