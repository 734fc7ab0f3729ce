#ifndef SIMATTN_RNG_HPP
#define SIMATTN_RNG_HPP

#include <cmath>
#include <cstdint>

namespace simattn {

// splitmix64-based generator. std::mt19937 would do, but the standard
// distributions are implementation-defined; this keeps every sampled value
// identical across toolchains, which the determinism contract depends on.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

    double normal() {
        double u1 = uniform(), u2 = uniform();
        while (u1 == 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    std::uint64_t state_;
};

}  // namespace simattn

#endif  // SIMATTN_RNG_HPP
