#pragma once

// Deterministic random streams.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the
// standard. The standard distributions are not, so the conversions to
// uniform / normal / index draws are implemented here.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string_view>
#include <utility>
#include <vector>

namespace famae {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace detail

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(detail::splitmix64(seed)) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t draws() const { return counter_; }

    std::uint64_t next_u64() {
        ++counter_;
        return engine_();
    }

    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Box-Muller; one spare value is cached.
    double normal(double mean = 0.0, double stddev = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + stddev * spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return mean + stddev * r * std::cos(theta);
    }

    /// Unbiased integer in [0, n).
    std::uint64_t index(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::index: empty range");
        const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
        std::uint64_t x = 0;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    template <class T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[index(i)]);
        }
    }

    /// k distinct indices from [0, n), in draw order (partial Fisher-Yates).
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        if (k > n) throw std::invalid_argument("Rng::sample_without_replacement: k > n");
        std::vector<std::size_t> pool(n);
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        for (std::size_t i = 0; i < k; ++i) {
            std::swap(pool[i], pool[i + index(n - i)]);
        }
        pool.resize(k);
        return pool;
    }

    /// Independent stream keyed by name; does not advance this stream.
    Rng substream(std::string_view name) const {
        return Rng(detail::splitmix64(detail::fnv1a64(name, seed_ ^ 0x5bd1e995ULL)));
    }

    /// Independent stream keyed by index; does not advance this stream.
    Rng substream(std::uint64_t key) const {
        return Rng(detail::splitmix64(seed_ ^ detail::splitmix64(key + 0x632be59bd9b4e019ULL)));
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace famae
