#pragma once

#include <cstdint>
#include <string_view>

namespace gracelab {

/// Pipeline stages that own an RNG stream. Values are part of the seed
/// fan-out and must never be renumbered.
enum class SeedStream : std::uint64_t {
    Grammar = 1,
    Corpus = 2,
    ModelInit = 3,
    Pretrain = 4,
    Splits = 5,
    Randomizer = 6,
    GraceAscent = 7,
    GraceRetrain = 8,
    Probes = 9,
    TokenDelta = 10,
};

/// SplitMix64 finalizer. Bijective on 64-bit words.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// FNV-1a over the bytes of `text`; stable across platforms.
std::uint64_t hash_name(std::string_view text) noexcept;

/// Derives the seed of one stream from the master seed:
///   mix64(mix64(master) ^ mix64(stream << 32 | index))
/// Distinct (stream, index) pairs give distinct inputs to a bijection,
/// so streams of a given master seed never collide.
std::uint64_t derive_seed(std::uint64_t master, SeedStream stream, std::uint64_t index = 0) noexcept;

}  // namespace gracelab
