#pragma once

#include <cstdint>

namespace prevcc {

/// Independent stream seed for replicate `index` of a run seeded by `seed`
/// (two rounds of splitmix64).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace prevcc
