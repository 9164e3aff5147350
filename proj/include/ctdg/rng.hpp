#ifndef CTDG_RNG_HPP
#define CTDG_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>

namespace ctdg {

// All randomness in the pipeline flows from one master seed; per-module
// streams are derived by hashing a label into the seed so that adding a
// consumer never shifts another consumer's stream.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label) {
    return splitmix64(master ^ fnv1a(label));
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                                 std::uint64_t index) {
    return splitmix64(derive_seed(master, label) + 0x632be59bd9b4e019ULL * (index + 1));
}

inline std::mt19937_64 make_rng(std::uint64_t master, std::string_view label) {
    return std::mt19937_64(derive_seed(master, label));
}

}  // namespace ctdg

#endif  // CTDG_RNG_HPP
