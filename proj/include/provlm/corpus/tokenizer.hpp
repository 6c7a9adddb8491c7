#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace provlm::corpus {

using TokenId = std::uint16_t;

// Byte-level vocabulary: ids 0..255 are raw bytes, then two reserved ids.
inline constexpr TokenId kSeparator = 256;
inline constexpr TokenId kPad = 257;
inline constexpr std::size_t kVocabSize = 258;
inline constexpr std::string_view kTokenizerId = "byte258-v1";

std::vector<TokenId> tokenize(std::string_view bytes);

/// Inverse of tokenize. Reserved ids have no byte form and are rejected.
std::string detokenize(std::span<const TokenId> ids);

}  // namespace provlm::corpus
