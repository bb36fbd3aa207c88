#pragma once

// Seeded, splittable random streams. Every stochastic component takes an
// RngStream by reference; streams derived from the same (seed, id) pair
// reproduce bit-identically across runs.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace sphlat {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// xoshiro256++ generator with Box-Muller normals.
class RngStream {
  public:
    RngStream() : RngStream(0, 0) {}
    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : root_seed_(seed), stream_id_(stream_id) {
        std::uint64_t s = seed ^ (0x632be59bd9b4e019ULL * (stream_id + 1));
        for (auto& w : state_) w = splitmix64(s);
    }

    // Child stream with an independent trajectory; deterministic in (root seed, path).
    RngStream split(std::uint64_t child_id) const {
        std::uint64_t mix = stream_id_ * 0x9e3779b97f4a7c15ULL + 0x7f4a7c15ULL;
        mix ^= child_id + 0x165667b19e3779f9ULL + (mix << 6) + (mix >> 2);
        return RngStream(root_seed_, mix);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in (0, 1].
    double uniform_pos() { return 1.0 - uniform(); }

    double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal, Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_pos();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    std::uint64_t root_seed() const { return root_seed_; }
    std::uint64_t stream_id() const { return stream_id_; }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t state_[4]{};
    std::uint64_t root_seed_ = 0;
    std::uint64_t stream_id_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace sphlat
