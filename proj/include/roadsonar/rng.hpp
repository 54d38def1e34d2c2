#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace roadsonar {

using Rng = std::mt19937_64;

/// Derives an independent stream seed from a root seed, a purpose tag and an index.
/// Every random draw in the project goes through this so that a single root seed
/// reproduces a whole run.
std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose, std::uint64_t index = 0) noexcept;

inline Rng make_rng(std::uint64_t root, std::string_view purpose, std::uint64_t index = 0) {
    return Rng(derive_seed(root, purpose, index));
}

} // namespace roadsonar
