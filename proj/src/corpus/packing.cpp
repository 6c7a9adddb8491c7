#include "provlm/corpus/packing.hpp"

#include <stdexcept>

namespace provlm::corpus {

std::vector<SequenceRecord> pack_sequences(std::span<const Document> documents, std::size_t max_seq_len) {
  if (max_seq_len < 2) throw std::invalid_argument("pack_sequences: max_seq_len must be >= 2");

  std::vector<SequenceRecord> out;
  SequenceRecord current;
  current.tokens.reserve(max_seq_len);
  bool first_doc = true;

  auto flush = [&] {
    out.push_back(std::move(current));
    current = SequenceRecord{};
    current.tokens.reserve(max_seq_len);
  };

  // Each emitted token carries the document it belongs to; a separator belongs
  // to the document before it.
  auto push = [&](TokenId id, const DocumentRef& owner) {
    if (current.tokens.empty()) current.origin = owner;
    if (id == kSeparator) current.crosses_document = true;
    current.tokens.push_back(id);
    if (current.tokens.size() == max_seq_len) flush();
  };

  const DocumentRef* previous = nullptr;
  for (const Document& doc : documents) {
    if (doc.tokens.empty()) continue;
    if (!first_doc) push(kSeparator, *previous);
    first_doc = false;
    for (TokenId id : doc.tokens) push(id, doc.origin);
    previous = &doc.origin;
  }

  if (!current.tokens.empty()) {
    current.n_pad = static_cast<std::uint32_t>(max_seq_len - current.tokens.size());
    current.tokens.resize(max_seq_len, kPad);
    out.push_back(std::move(current));
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].global_index = i;
  return out;
}

}  // namespace provlm::corpus
