#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "provlm/corpus/tokenizer.hpp"

namespace provlm::corpus {

struct DocumentRef {
  std::string source;
  std::uint64_t index = 0;

  bool operator==(const DocumentRef&) const = default;
};

struct Document {
  DocumentRef origin;
  std::vector<TokenId> tokens;
};

/// One fixed-length training window.
struct SequenceRecord {
  std::vector<TokenId> tokens;
  DocumentRef origin;             // document owning the first token
  std::uint64_t global_index = 0; // position in the training stream after permutation
  std::uint32_t n_pad = 0;        // trailing pad ids; only the final window has any
  bool crosses_document = false;  // contains a separator

  bool padded() const { return n_pad > 0; }
};

/// Concatenates documents with a single separator id between consecutive
/// (non-empty) documents and cuts the stream into windows of exactly
/// `max_seq_len`. The final partial window is filled with kPad.
std::vector<SequenceRecord> pack_sequences(std::span<const Document> documents, std::size_t max_seq_len);

}  // namespace provlm::corpus
