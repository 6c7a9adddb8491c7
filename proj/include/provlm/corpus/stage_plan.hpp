#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "provlm/corpus/sources.hpp"

namespace provlm::corpus {

using SourceBudgets = std::vector<std::pair<std::string, std::uint64_t>>;

struct StageSpec {
  std::string id;
  SourceBudgets budgets;
};

struct Stage {
  std::string id;
  SourceBudgets budgets;
  std::uint32_t chunk_begin = 0;  // [begin, end)
  std::uint32_t chunk_end = 0;

  std::uint64_t total_tokens() const;
  std::uint32_t chunk_count() const { return chunk_end - chunk_begin; }
};

struct StagePlan {
  std::vector<Stage> stages;
};

/// Maps per-stage source budgets onto ordered, disjoint chunk ranges. Chunks
/// are apportioned to stages in proportion to their token totals (largest
/// remainder, every stage gets at least one chunk). An empty `specs` yields a
/// single stage drawing every source's full weight.
///
/// Throws CorpusError naming the source when the budgets for a source, summed
/// over stages, exceed its weight_tokens, or when a budget names an unknown source.
StagePlan build_stage_plan(std::span<const StageSpec> specs, std::span<const SourceSpec> sources,
                           std::uint32_t n_chunks);

}  // namespace provlm::corpus
