#pragma once

#include <cstdint>

namespace v2vlc {

// Splittable counter-style generator (splitmix64 core). Streams derived with
// fork() are keyed so that per-(scene, cav) streams are independent and
// reproducible regardless of evaluation order.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(mix(seed ^ 0x9e3779b97f4a7c15ull)) {}

    Rng fork(std::uint64_t key) const { return Rng(mix(state_ ^ mix(key + 0x632be59bd9b4e019ull))); }
    Rng fork(std::uint64_t k1, std::uint64_t k2) const { return fork(k1).fork(k2 ^ 0xd6e8feb86659fd93ull); }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix(state_);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    // uniform integer in [0, n)
    int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

private:
    std::uint64_t state_;

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
};

}  // namespace v2vlc
