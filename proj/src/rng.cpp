#include "sosuq/rng.hpp"

#include <cmath>

namespace sosuq {

std::uint64_t Rng::uniform_int(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t threshold = (0 - n) % n; // 2^64 mod n
    for (;;) {
        std::uint64_t r = next_u64();
        if (r >= threshold) return r % n;
    }
}

double Rng::gaussian() {
    if (has_cached_) {
        has_cached_ = false;
        return cached_;
    }
    for (;;) {
        double u = 2.0 * uniform() - 1.0;
        double v = 2.0 * uniform() - 1.0;
        double s = u * u + v * v;
        if (s > 0.0 && s < 1.0) {
            double m = std::sqrt(-2.0 * std::log(s) / s);
            cached_ = v * m;
            has_cached_ = true;
            return u * m;
        }
    }
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index) {
    std::uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a 64 offset basis
    for (char c : stream) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    Rng mix(seed ^ h);
    (void)mix.next_u64();
    Rng mix2(mix.next_u64() ^ (index * 0xd6e8feb86659fd93ULL));
    (void)mix2.next_u64();
    return mix2.next_u64();
}

} // namespace sosuq
