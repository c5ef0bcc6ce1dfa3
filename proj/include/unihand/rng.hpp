#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace unihand {

// Deterministic RNG wrapper. std::mt19937_64 provides the raw stream; the
// float mappings are hand-rolled so draws are identical on every platform
// (the std distributions are implementation-defined).
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    // Derives an independent stream from (seed, tag). Used so parameter init,
    // per-clip chains and data shuffles never share state.
    static Rng from(uint64_t seed, const std::string& tag) {
        uint64_t h = fnv1a(tag);
        return Rng(splitmix(seed ^ h));
    }
    static Rng from(uint64_t seed, const std::string& tag, uint64_t n) {
        uint64_t h = fnv1a(tag) ^ splitmix(n * 0x9e3779b97f4a7c15ull + 1);
        return Rng(splitmix(seed ^ h));
    }

    uint64_t raw() { return gen_(); }

    // Uniform in [0, 1).
    double uniform01() {
        return double(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    // Standard normal via Box-Muller, one spare cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = double((gen_() >> 11) + 1) * 0x1.0p-53; // (0, 1]
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Uniform integer in [0, n). Multiply-shift; bias is < 2^-64 per draw.
    uint64_t below(uint64_t n) {
        return uint64_t((static_cast<__uint128_t>(gen_()) * n) >> 64);
    }

    // Uniform integer in [lo, hi] inclusive.
    int64_t range(int64_t lo, int64_t hi) {
        return lo + int64_t(below(uint64_t(hi - lo + 1)));
    }

    void fill_normal(std::vector<double>& v) {
        for (auto& x : v) x = normal();
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = size_t(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    static uint64_t fnv1a(const std::string& s) {
        uint64_t h = 0xcbf29ce484222325ull;
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        return h;
    }

    static uint64_t splitmix(uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace unihand
