#pragma once

#include <cstdint>
#include <vector>

namespace provlm::corpus {

/// Fisher-Yates shuffle of [0, n) driven by xoshiro256** seeded through
/// SplitMix64. Iterates i = n-1 down to 1, swapping i with bounded(i + 1).
std::vector<std::uint64_t> global_permute(std::uint64_t n, std::uint64_t seed);

/// Sizes of `n_chunks` contiguous blocks covering `n` items: the first
/// n % n_chunks blocks get one extra item.
std::vector<std::uint64_t> chunk_block_sizes(std::uint64_t n, std::uint64_t n_chunks);

}  // namespace provlm::corpus
