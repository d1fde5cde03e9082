#pragma once

#include <cmath>
#include <cstdint>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vpit {

// Deterministic, compiler-independent PRNG. All randomness in the project
// flows through Rng instances constructed from explicit seeds; derived
// streams come from derive_seed so parallel work stays reproducible.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        // splitmix64
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

    // standard normal via Box-Muller (portable, deterministic)
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Stable seed derivation for named substreams.
uint64_t derive_seed(uint64_t base, std::string_view stream);
uint64_t derive_seed(uint64_t base, uint64_t index);

// FNV-1a over bytes; used for corpus/config/weight hashing.
uint64_t fnv1a(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL);
uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL);
uint64_t hash_doubles(std::span<const double> v, uint64_t h = 0xcbf29ce484222325ULL);

std::string hash_hex(uint64_t h);

// Number of worker threads to use (env VPIT_THREADS, else hardware).
int worker_threads();

}  // namespace vpit
