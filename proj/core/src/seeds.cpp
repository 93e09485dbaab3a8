#include "gracelab/seeds.hpp"

namespace gracelab {

std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t hash_name(std::string_view text) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t master, SeedStream stream, std::uint64_t index) noexcept {
    const std::uint64_t key = (static_cast<std::uint64_t>(stream) << 32) | (index & 0xffffffffULL);
    return mix64(mix64(master) ^ mix64(key));
}

}  // namespace gracelab
