#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace avdit {

// splitmix64 finalizer, used for seed derivation.
inline uint64_t mix64(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Named stream seed: hash the stream name into the master seed so that
// "data", "noise", "timestep", "init", ... are independent.
inline uint64_t derive_seed(uint64_t master, std::string_view stream) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : stream) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return mix64(master ^ h);
}

// Deterministic RNG. Normal sampling is an explicit Marsaglia polar
// transform rather than std::normal_distribution, so the byte stream does
// not depend on the standard library implementation.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0,1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    // uniform integer in [lo, hi] inclusive
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(gen_() % span);
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return u * m;
    }

    template <class T>
    void fill_normal(T* p, int64_t n, double mean = 0.0, double std = 1.0) {
        for (int64_t i = 0; i < n; ++i)
            p[i] = static_cast<T>(mean + std * normal());
    }

    template <class T>
    void fill_uniform(T* p, int64_t n, double lo, double hi) {
        for (int64_t i = 0; i < n; ++i)
            p[i] = static_cast<T>(lo + (hi - lo) * uniform());
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace avdit
