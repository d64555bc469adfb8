#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace opental {

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Seed of a named substream ("data", "init", "shuffle", ...) of a root seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view name);
/// Seed of the i-th indexed child of a stream.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index);

using Rng = std::mt19937_64;

}  // namespace opental
