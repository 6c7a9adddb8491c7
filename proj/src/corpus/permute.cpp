#include "provlm/corpus/permute.hpp"

#include <numeric>
#include <utility>

#include "provlm/common/error.hpp"
#include "provlm/common/rng.hpp"

namespace provlm::corpus {

std::vector<std::uint64_t> global_permute(std::uint64_t n, std::uint64_t seed) {
  std::vector<std::uint64_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::uint64_t{0});
  if (n < 2) return perm;
  Xoshiro256 rng(seed);
  for (std::uint64_t i = n - 1; i > 0; --i) {
    const std::uint64_t j = rng.bounded(i + 1);
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

std::vector<std::uint64_t> chunk_block_sizes(std::uint64_t n, std::uint64_t n_chunks) {
  if (n_chunks == 0) throw CorpusError("n_chunks must be >= 1");
  if (n_chunks > n)
    throw CorpusError("cannot fill " + std::to_string(n_chunks) + " chunks from " + std::to_string(n) +
                      " sequences");
  std::vector<std::uint64_t> sizes(n_chunks, n / n_chunks);
  for (std::uint64_t i = 0; i < n % n_chunks; ++i) ++sizes[i];
  return sizes;
}

}  // namespace provlm::corpus
