#pragma once

#include <cstddef>
#include <filesystem>

#include "provlm/corpus/chunk_file.hpp"
#include "provlm/corpus/manifest.hpp"
#include "provlm/model/params.hpp"

namespace provlm::registry {

struct PerplexityResult {
  double perplexity = 0.0;
  double mean_nll = 0.0;
  std::size_t tokens = 0;  // scored (non-pad) target positions
};

/// exp(mean NLL) over all non-pad next-token targets of the chunk.
PerplexityResult eval_perplexity(const model::ParameterSet<float>& params, const corpus::ChunkData& heldout,
                                 std::size_t batch_rows = 32);

/// Throws CorpusError if any held-out sequence also occurs in a training
/// chunk of the manifest (compared by token content).
void check_heldout_disjoint(const corpus::ChunkData& heldout, const corpus::CorpusManifest& manifest,
                            const std::filesystem::path& chunk_dir);

}  // namespace provlm::registry
