#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

namespace segdt {

// Deterministic random stream. Uniform and normal draws are implemented
// explicitly (not via std::*_distribution, whose algorithms are
// implementation-defined) so a seed pins the exact byte stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive integer range.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(gen_() % span);
    }

    // Standard normal via Box-Muller, second value cached.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    template <class T>
    void fill_normal(std::span<T> out, T mean = T(0), T stddev = T(1)) {
        for (auto& x : out) x = mean + stddev * static_cast<T>(normal());
    }

    template <class T>
    void fill_uniform(std::span<T> out, T lo, T hi) {
        for (auto& x : out) x = static_cast<T>(uniform(static_cast<double>(lo), static_cast<double>(hi)));
    }

    template <class It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const auto j = gen_() % i;
            std::swap(first[i - 1], first[j]);
        }
    }

    template <class Container>
    void shuffle(Container& c) {
        shuffle(c.begin(), c.end());
    }

private:
    std::mt19937_64 gen_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

} // namespace segdt
