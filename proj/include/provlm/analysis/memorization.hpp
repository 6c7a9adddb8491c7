#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "provlm/corpus/manifest.hpp"
#include "provlm/corpus/tokenizer.hpp"
#include "provlm/registry/checkpoint.hpp"

namespace provlm::analysis {

using corpus::TokenId;

struct Probe {
  std::uint32_t chunk = 0;
  std::uint64_t sequence = 0;  // row within the chunk file
  std::vector<TokenId> tokens;  // first k + l tokens of the sequence
  bool crosses_document = false;
};

struct ProbeSet {
  std::uint32_t k = 32;
  std::uint32_t l = 32;
  std::uint32_t n_per_chunk = 0;
  std::uint64_t seed = 0;
  std::string manifest_checksum;
  std::vector<Probe> probes;  // grouped by chunk, sequence ids ascending within a chunk
  std::vector<std::string> warnings;
};

/// Fraction of positions i in [0, l) with G[i] == S[k + i]. Throws
/// std::invalid_argument unless |S| = k + l and |G| = l.
double memorization_score(std::span<const TokenId> S, std::span<const TokenId> G, std::size_t k, std::size_t l);

/// Draws up to n sequences per chunk without replacement, using a stream
/// derived from (seed, chunk). Sequences with a pad inside the first k + l
/// tokens are ineligible; a chunk with fewer than n eligible sequences
/// contributes all of them and adds a warning.
ProbeSet sample_probes(const corpus::CorpusManifest& manifest, const std::filesystem::path& chunk_dir,
                       std::uint32_t n, std::uint32_t k, std::uint32_t l, std::uint64_t seed,
                       const std::string& manifest_checksum = "");

struct MemorizationResult {
  std::uint32_t checkpoint = 0;
  std::uint64_t step = 0;
  std::uint32_t l = 0;
  // Untrained checkpoint 0 has seen no chunk; it is scored on every probe
  // to give the chance-level baseline.
  bool baseline = false;
  std::set<std::uint32_t> seen_chunks;
  std::uint32_t latest_chunk = 0;  // last chunk trained before this checkpoint
  std::vector<std::uint32_t> probe_ids;  // indices into ProbeSet::probes, ascending
  std::vector<std::uint16_t> matches;    // per evaluated probe, in [0, l]

  double score(std::size_t i) const { return static_cast<double>(matches[i]) / l; }
  bool extractible(std::size_t i) const { return matches[i] == l; }
  std::size_t size() const { return probe_ids.size(); }
  double mean_score() const;
  double extractible_fraction() const;
  /// Mean score per chunk over the evaluated probes.
  std::map<std::uint32_t, double> per_chunk_mean(const ProbeSet& probes) const;
};

/// Greedy-decodes l tokens from each k-token prompt of the probes whose chunk
/// the checkpoint has already been trained on, and scores them. Throws
/// CheckpointError when the probes come from a different manifest.
MemorizationResult evaluate_checkpoint(const registry::Checkpoint& checkpoint, const ProbeSet& probes,
                                       std::size_t batch = 64);

/// Chunks trained before the checkpoint, in training order (from its run state).
std::vector<std::uint32_t> trained_chunks(const registry::Checkpoint& checkpoint);

}  // namespace provlm::analysis
