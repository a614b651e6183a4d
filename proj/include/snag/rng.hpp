#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace snag {

// SplitMix64 finalizer; used to derive independent substream seeds.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic RNG. Distributions are implemented here so the produced
// sequence depends only on mt19937_64, never on the C++ runtime in use.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), gen_(splitmix64(seed)) {}

    uint64_t seed() const { return seed_; }

    // Independent generator keyed by (a, b, c) under the same base seed.
    // Same keys always give the same stream; consuming one stream never
    // shifts another.
    Rng substream(uint64_t a, uint64_t b = 0, uint64_t c = 0) const {
        uint64_t s = seed_;
        s = splitmix64(s ^ splitmix64(a + 0x713ULL));
        s = splitmix64(s ^ splitmix64(b + 0x9e55ULL));
        s = splitmix64(s ^ splitmix64(c + 0xc2b2ULL));
        return Rng(s);
    }

    uint64_t next_u64() { return gen_(); }

    // U[0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // N(0, 1) via Box-Muller; the second variate is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double th = 2.0 * kPi * u2;
        spare_ = r * std::sin(th);
        have_spare_ = true;
        return r * std::cos(th);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    // Uniform integer in [0, n); rejection sampling, no modulo bias.
    uint64_t uniform_int(uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_int: n must be > 0");
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x = gen_();
        while (x >= limit) x = gen_();
        return x % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[uniform_int(i)]);
    }

    std::vector<int> permutation(int n) {
        std::vector<int> p(n);
        for (int i = 0; i < n; ++i) p[i] = i;
        shuffle(p);
        return p;
    }

    // k distinct values from [0, n), in draw order.
    std::vector<int> sample_without_replacement(int n, int k) {
        if (k > n)
            throw std::invalid_argument("sample_without_replacement: k > n");
        std::vector<int> pool(n);
        for (int i = 0; i < n; ++i) pool[i] = i;
        std::vector<int> out;
        out.reserve(k);
        for (int i = 0; i < k; ++i) {
            size_t j = i + uniform_int(n - i);
            std::swap(pool[i], pool[j]);
            out.push_back(pool[i]);
        }
        return out;
    }

    static constexpr double kPi = 3.14159265358979323846;

private:
    uint64_t seed_;
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace snag
