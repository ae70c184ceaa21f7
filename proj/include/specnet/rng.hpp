#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace specnet {

using Rng = std::mt19937_64;

// Independent generator for a named purpose ("dataset", "init", "shuffle", ...)
// derived from one user-visible seed. Changing how one stream is consumed never
// perturbs the others.
Rng substream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0);

// Uniformly shuffled 0..n-1. Fisher-Yates with explicit draws, so the result
// depends only on the generator and not on the standard library.
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

}  // namespace specnet
