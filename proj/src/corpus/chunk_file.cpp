#include "provlm/corpus/chunk_file.hpp"

#include <algorithm>

#include "provlm/common/error.hpp"
#include "provlm/common/file_io.hpp"

namespace provlm::corpus {

namespace {

void write_header(ByteWriter& w, std::uint32_t count, std::uint32_t max_seq_len) {
  w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(kChunkMagic), 4));
  w.u32(count);
  w.u32(max_seq_len);
}

}  // namespace

std::vector<std::uint8_t> encode_chunk(std::span<const SequenceRecord> records, std::uint32_t max_seq_len) {
  ByteWriter w;
  w.buffer().reserve(kChunkHeaderBytes + records.size() * max_seq_len * 2);
  write_header(w, static_cast<std::uint32_t>(records.size()), max_seq_len);
  for (const auto& r : records) {
    if (r.tokens.size() != max_seq_len) throw CorpusError("sequence length does not match max_seq_len");
    for (TokenId id : r.tokens) w.u16(id);
  }
  return std::move(w.buffer());
}

std::vector<std::uint8_t> encode_chunk(const ChunkData& chunk) {
  ByteWriter w;
  write_header(w, static_cast<std::uint32_t>(chunk.sequence_count()), chunk.max_seq_len);
  for (TokenId id : chunk.tokens) w.u16(id);
  return std::move(w.buffer());
}

ChunkData decode_chunk(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (bytes.size() < kChunkHeaderBytes) throw IoError("chunk shorter than header");
  auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), reinterpret_cast<const std::uint8_t*>(kChunkMagic)))
    throw IoError("bad chunk magic");
  const std::uint32_t count = r.u32();
  ChunkData chunk;
  chunk.max_seq_len = r.u32();
  const std::uint64_t expected = std::uint64_t{count} * chunk.max_seq_len * 2;
  if (r.remaining() != expected) throw IoError("length mismatch");
  chunk.tokens.resize(static_cast<std::size_t>(count) * chunk.max_seq_len);
  for (auto& id : chunk.tokens) id = r.u16();
  return chunk;
}

ChunkData read_chunk_file(const std::filesystem::path& path) { return decode_chunk(read_file(path)); }

}  // namespace provlm::corpus
