#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace courier {

using Rng = std::mt19937_64;

// Seed for the stream identified by (master, label, index). Every component
// draws from its own labelled stream so adding draws in one module never
// shifts another module's randomness.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label, std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t master, std::string_view label, std::uint64_t index = 0) {
  return Rng(derive_seed(master, label, index));
}

}  // namespace courier
