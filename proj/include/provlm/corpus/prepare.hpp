#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "provlm/corpus/manifest.hpp"
#include "provlm/corpus/packing.hpp"

namespace provlm::corpus {

struct CorpusConfig {
  std::uint64_t seed = 0;
  std::uint32_t n_chunks = 360;
  std::uint32_t max_seq_len = 2048;
  std::uint64_t heldout_sequences = 0;  // reserved from the tail of the last stage's permuted stream
  // When set, held-out sequences are taken only from single-document
  // sequences of these sources whose content occurs nowhere in training.
  std::vector<std::string> heldout_sources;
  std::vector<SourceSpec> sources;
  std::vector<StageSpec> stages;        // empty: one stage over all sources
  std::filesystem::path base_dir;       // resolves relative source paths
};

/// Parses the `sources` document used by prepare-data:
/// {"max_seq_len", "heldout_sequences", "sources": [...], "stages": [...]}.
/// Seed and chunk count are taken from the document when present.
CorpusConfig corpus_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
nlohmann::ordered_json to_json(const CorpusConfig& c);

/// Splits an already permuted record stream into contiguous blocks whose
/// sizes follow chunk_block_sizes (larger blocks first).
std::vector<std::span<const SequenceRecord>> partition_chunks(std::span<const SequenceRecord> records,
                                                              std::uint32_t n_chunks);

std::string chunk_file_name(std::uint32_t index);

/// Ingest, pack, permute and partition every stage, writing chunk files,
/// heldout.bin, origins.csv and manifest.json into `out_dir`.
CorpusManifest prepare_corpus(const CorpusConfig& config, const std::filesystem::path& out_dir);

/// Stage s is shuffled with this seed; stage 0 uses the corpus seed itself.
std::uint64_t stage_seed(std::uint64_t corpus_seed, std::size_t stage);

}  // namespace provlm::corpus
