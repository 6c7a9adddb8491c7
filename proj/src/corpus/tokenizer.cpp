#include "provlm/corpus/tokenizer.hpp"

#include <stdexcept>

namespace provlm::corpus {

std::vector<TokenId> tokenize(std::string_view bytes) {
  std::vector<TokenId> ids;
  ids.reserve(bytes.size());
  for (char c : bytes) ids.push_back(static_cast<TokenId>(static_cast<unsigned char>(c)));
  return ids;
}

std::string detokenize(std::span<const TokenId> ids) {
  std::string out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (id > 255) throw std::invalid_argument("detokenize: reserved token id " + std::to_string(id));
    out.push_back(static_cast<char>(id));
  }
  return out;
}

}  // namespace provlm::corpus
