#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace provlm::corpus {

/// Byte-level Markov source over all 256 byte values. Each step applies one of
/// several fixed random permutations of the byte alphabet, chosen with
/// `branch_probs`. A mixture of permutation matrices is doubly stochastic, so
/// the byte marginal stays uniform at every position while the transitions
/// remain learnable.
struct MarkovSourceSpec {
  std::uint64_t tokens = 0;
  std::vector<double> branch_probs{0.9, 0.1};
  std::uint32_t doc_min = 256;
  std::uint32_t doc_max = 2048;
  std::uint32_t copies = 1;  // each document is emitted this many times
  std::uint64_t seed = 0;
};

std::vector<std::string> generate_markov_documents(const MarkovSourceSpec& spec);

/// Each document draws its own alphabet of `weights.size()` distinct byte
/// values and emits them i.i.d. with those weights. Tokens carry no
/// information about their neighbours beyond the document's alphabet.
struct AlphabetSourceSpec {
  std::uint64_t tokens = 0;
  std::vector<double> weights{0.5, 0.5};
  double weight_jitter = 0.0;  // per document, weight i is scaled by exp(jitter * N(0, 1))
  bool shared_alphabet = false;  // one alphabet for every document
  std::uint32_t doc_min = 256;
  std::uint32_t doc_max = 2048;
  std::uint32_t copies = 1;
  std::uint64_t seed = 0;
};

std::vector<std::string> generate_alphabet_documents(const AlphabetSourceSpec& spec);

}  // namespace provlm::corpus
