#pragma once

// Seeded split-stream randomness. Every logical actor (server, agent i,
// Monte Carlo trial k, ...) gets its own stream derived from the run seed so
// replay is deterministic regardless of scheduling.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace ipsg {

namespace detail {
// splitmix64; standard finalizer, used only to spread seed material.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}
}  // namespace detail

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream_id) {
    return detail::mix64(detail::mix64(root) ^ detail::mix64(stream_id * 0xd1342543de82ef95ull + 1));
}

class RngStream {
  public:
    explicit RngStream(std::uint64_t seed) : eng_(seed) {}
    RngStream(std::uint64_t root, std::uint64_t stream_id) : eng_(derive_seed(root, stream_id)) {}

    std::uint64_t next_u64() { return eng_(); }

    // Unbiased uniform over {0, ..., k-1} by rejection; avoids the
    // implementation-defined std::uniform_int_distribution.
    std::size_t uniform_below(std::size_t k) {
        if (k == 0) throw std::invalid_argument("sample_uniform: k must be >= 1");
        if (k == 1) return 0;
        const std::uint64_t bound = ~std::uint64_t{0} - (~std::uint64_t{0} % k + 1) % k;
        for (;;) {
            const std::uint64_t x = eng_();
            if (x <= bound) return static_cast<std::size_t>(x % k);
        }
    }

    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

  private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

inline std::size_t sample_uniform(RngStream& s, std::size_t k) { return s.uniform_below(k); }

}  // namespace ipsg
