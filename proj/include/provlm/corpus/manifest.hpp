#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "provlm/corpus/sources.hpp"
#include "provlm/corpus/stage_plan.hpp"

namespace provlm::corpus {

inline constexpr int kManifestSchemaVersion = 1;
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kOriginsFile = "origins.csv";
inline constexpr const char* kHeldoutFile = "heldout.bin";

struct SourceEntry {
  SourceSpec spec;
  std::uint64_t drawn_tokens = 0;
  std::uint64_t documents = 0;  // documents touched, counting truncated ones
};

struct ChunkEntry {
  std::uint32_t index = 0;
  std::string file;
  std::uint64_t sequences = 0;
  std::uint64_t tokens = 0;  // sequences * max_seq_len, separators and pads included
  std::string sha256;        // lowercase hex over the chunk file bytes
};

struct CorpusManifest {
  int schema_version = kManifestSchemaVersion;
  std::uint64_t seed = 0;
  std::uint32_t n_chunks = 0;
  std::string tokenizer_id;
  std::uint32_t max_seq_len = 0;
  std::vector<SourceEntry> sources;
  StagePlan stage_plan;
  std::vector<ChunkEntry> chunks;
  std::uint64_t total_tokens = 0;
  std::uint64_t content_tokens = 0;  // total_tokens minus pad positions
  std::optional<ChunkEntry> heldout;
  std::vector<std::string> heldout_sources;  // empty: any source
  std::string origins_file;
  std::string origins_sha256;

  const ChunkEntry& chunk(std::uint32_t index) const;
};

nlohmann::ordered_json to_json(const CorpusManifest& m);
CorpusManifest manifest_from_json(const nlohmann::json& j);

/// Serialized form is `dump(2)` of the ordered JSON plus a trailing newline,
/// so equal manifests are byte-identical on disk.
std::string serialize_manifest(const CorpusManifest& m);
void write_manifest(const std::filesystem::path& path, const CorpusManifest& m);
CorpusManifest read_manifest(const std::filesystem::path& path);

struct ChunkCheck {
  std::uint32_t index = 0;
  std::string file;
  bool ok = false;
  std::string reason;  // empty when ok
};

struct VerificationReport {
  std::vector<ChunkCheck> chunks;
  std::vector<ChunkCheck> extras;  // held-out chunk and origins table
  bool ok = false;

  std::vector<std::uint32_t> failed_chunks() const;
};

/// Recomputes every chunk's header, length and SHA-256. Missing or damaged
/// files produce failing entries instead of exceptions.
VerificationReport verify_manifest(const CorpusManifest& manifest, const std::filesystem::path& chunk_dir);

nlohmann::ordered_json to_json(const VerificationReport& r);

}  // namespace provlm::corpus
