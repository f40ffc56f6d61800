#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace recmem {

// Unbiased integer in [0, bound) by rejection sampling. mt19937_64 output
// is specified bit-for-bit, and this avoids std::uniform_int_distribution,
// whose mapping varies across standard libraries; together they make every
// seeded draw reproducible on any platform.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound);

// First n positions of a Fisher-Yates shuffle of 0..size-1: a uniform
// sample of n distinct indices, in draw order.
std::vector<std::size_t> sample_indices(std::size_t size, std::size_t n, std::uint64_t seed);

}  // namespace recmem
