#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "provlm/corpus/packing.hpp"

namespace provlm::corpus {

// Layout (little-endian):
//   "LC01" | u32 sequence_count | u32 max_seq_len | sequence_count * max_seq_len u16 ids
inline constexpr char kChunkMagic[4] = {'L', 'C', '0', '1'};
inline constexpr std::size_t kChunkHeaderBytes = 12;

/// Token-major view of a loaded chunk: sequence i is tokens[i*L, (i+1)*L).
struct ChunkData {
  std::uint32_t max_seq_len = 0;
  std::vector<TokenId> tokens;

  std::size_t sequence_count() const { return max_seq_len == 0 ? 0 : tokens.size() / max_seq_len; }
  std::span<const TokenId> sequence(std::size_t i) const {
    return std::span(tokens).subspan(i * max_seq_len, max_seq_len);
  }
};

std::vector<std::uint8_t> encode_chunk(std::span<const SequenceRecord> records, std::uint32_t max_seq_len);
std::vector<std::uint8_t> encode_chunk(const ChunkData& chunk);

/// Throws IoError on a bad magic or a body whose size disagrees with the header.
ChunkData decode_chunk(std::span<const std::uint8_t> bytes);
ChunkData read_chunk_file(const std::filesystem::path& path);

}  // namespace provlm::corpus
