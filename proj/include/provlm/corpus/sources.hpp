#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "provlm/corpus/packing.hpp"

namespace provlm::corpus {

enum class SourceFormat {
  text,    // documents separated by blank lines
  jsonl,   // one {"text": ...} object per line
  binary,  // repeated (u32 little-endian length, bytes)
};

std::string to_string(SourceFormat f);
SourceFormat parse_source_format(const std::string& s);
SourceFormat infer_source_format(const std::filesystem::path& path);

struct SourceSpec {
  std::string name;
  std::filesystem::path path;
  std::uint64_t weight_tokens = 0;  // absolute token budget drawn from this source
  SourceFormat format = SourceFormat::text;
};

std::vector<std::string> split_documents(const std::string& raw, SourceFormat format);

/// Sequential reader over a source's documents. Successive draws continue
/// where the previous one stopped, so stages partition a source's stream.
class SourceCursor {
 public:
  SourceCursor(SourceSpec spec, const std::filesystem::path& base_dir);

  /// Takes exactly `tokens` tokens, truncating the last document if needed.
  /// Throws CorpusError naming the source when the file runs out.
  std::vector<Document> draw(std::uint64_t tokens);

  const SourceSpec& spec() const { return spec_; }
  std::uint64_t consumed_tokens() const { return consumed_; }
  std::uint64_t available_tokens() const { return available_; }

 private:
  SourceSpec spec_;
  std::vector<std::string> docs_;
  std::size_t doc_ = 0;
  std::size_t offset_ = 0;
  std::uint64_t consumed_ = 0;
  std::uint64_t available_ = 0;
};

void write_binary_documents(const std::filesystem::path& path, const std::vector<std::string>& docs);

}  // namespace provlm::corpus
