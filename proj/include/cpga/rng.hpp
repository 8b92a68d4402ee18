#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace cpga {

// Deterministic RNG. Distributions are implemented by hand because the
// std::*_distribution classes are implementation-defined; this keeps sample
// sequences identical across standard libraries and platforms.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(static_cast<std::mt19937::result_type>(split_mix(seed))) {}

    uint32_t next_u32() { return gen_(); }

    // Uniform in [0, 1) with 24 bits of mantissa.
    float uniform() { return static_cast<float>(next_u32() >> 8) * 0x1p-24f; }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), n >= 1.
    int uniform_int(int n) {
        return static_cast<int>(static_cast<uint64_t>(next_u32()) * static_cast<uint64_t>(n) >> 32);
    }

    // Standard normal via Box-Muller.
    float normal() {
        float u1 = uniform();
        float u2 = uniform();
        if (u1 < 1e-12f) {
            u1 = 1e-12f;
        }
        return std::sqrt(-2.0f * std::log(u1)) * std::cos(6.2831853071795865f * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(static_cast<int>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derives an independent child seed for a named stream.
    static uint64_t derive(uint64_t seed, uint64_t stream) {
        return split_mix(seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
    }

private:
    static uint64_t split_mix(uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    std::mt19937 gen_;
};

} // namespace cpga
