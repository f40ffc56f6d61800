#include "recmem/rng.hpp"

#include <numeric>

#include "recmem/errors.hpp"

namespace recmem {

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
    if (bound == 0) {
        throw PreconditionError("uniform_below requires a positive bound");
    }
    // Reject draws from the tail that would bias r % bound.
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        const std::uint64_t r = rng();
        if (r >= threshold) return r % bound;
    }
}

std::vector<std::size_t> sample_indices(std::size_t size, std::size_t n, std::uint64_t seed) {
    if (n > size) {
        throw RangeError("cannot sample " + std::to_string(n) + " of " + std::to_string(size) +
                         " items");
    }
    std::vector<std::size_t> indices(size);
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(uniform_below(rng, size - i));
        std::swap(indices[i], indices[j]);
    }
    indices.resize(n);
    return indices;
}

}  // namespace recmem
