#ifndef GRIDRES_RNG_HPP
#define GRIDRES_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>

namespace gridres {

// SplitMix64 finalizer, used to derive independent stream seeds from a
// master seed plus arbitrary tags (episode index, role name).
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index,
                                 std::string_view role) {
    std::uint64_t h = mix64(master);
    h = mix64(h ^ index);
    for (char c : role) h = mix64(h ^ static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
    return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t master, std::uint64_t index, std::string_view role) {
    return Rng(derive_seed(master, index, role));
}

}  // namespace gridres

#endif
