#include "vpit/common.hpp"

#include <cstdlib>
#include <cstring>
#include <thread>

namespace vpit {

uint64_t fnv1a(const void* data, size_t len, uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t fnv1a(std::string_view s, uint64_t h) { return fnv1a(s.data(), s.size(), h); }

uint64_t hash_doubles(std::span<const double> v, uint64_t h) {
    return fnv1a(v.data(), v.size() * sizeof(double), h);
}

uint64_t derive_seed(uint64_t base, std::string_view stream) {
    uint64_t h = fnv1a(stream);
    h = fnv1a(&base, sizeof(base), h);
    // avoid the all-zero state
    return h ? h : 0x9e3779b97f4a7c15ULL;
}

uint64_t derive_seed(uint64_t base, uint64_t index) {
    uint64_t h = fnv1a(&index, sizeof(index));
    h = fnv1a(&base, sizeof(base), h);
    return h ? h : 0x9e3779b97f4a7c15ULL;
}

std::string hash_hex(uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return s;
}

int worker_threads() {
    if (const char* env = std::getenv("VPIT_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc ? static_cast<int>(hc) : 1;
}

}  // namespace vpit
