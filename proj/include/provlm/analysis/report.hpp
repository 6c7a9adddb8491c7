#pragma once

#include <cstdint>
#include <functional>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "provlm/analysis/memorization.hpp"

namespace provlm::analysis {

/// Pearson correlation; absent when either input has zero variance or the
/// inputs hold fewer than two points.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

struct ChunkGroup {
  std::uint32_t chunk_begin = 0;  // [begin, end)
  std::uint32_t chunk_end = 0;
};

/// Rows are checkpoints, columns are chunk groups bounded by the rows' own
/// chunk boundaries. Cells without evaluated probes are absent.
struct ChunkGroupMatrix {
  std::vector<std::uint32_t> checkpoints;
  std::vector<ChunkGroup> groups;
  std::vector<std::vector<std::optional<double>>> mean;
  std::vector<std::vector<std::size_t>> counts;
  std::vector<std::size_t> latest;  // group holding the row's latest-seen chunk

  /// Rows with at least one earlier non-empty group, and among those the rows
  /// whose latest-seen group mean exceeds the mean of the earlier group means.
  std::size_t rows_compared() const;
  std::size_t rows_latest_higher() const;
};

/// `rows` must be non-baseline results sorted by checkpoint index.
ChunkGroupMatrix chunk_group_matrix(std::span<const MemorizationResult> rows, const ProbeSet& probes);

struct CorrelationPair {
  std::optional<double> pearson_score;
  std::optional<double> binary_agreement;  // phi over extractible flags
  std::size_t n_common = 0;
};

/// Correlates the two results over the probes evaluated by both. Throws
/// std::invalid_argument when they share none.
CorrelationPair checkpoint_correlation(const MemorizationResult& a, const MemorizationResult& b);

struct CorrelationMatrix {
  std::vector<std::uint32_t> checkpoints;
  std::vector<std::vector<CorrelationPair>> cells;
};

CorrelationMatrix correlation_matrix(std::span<const MemorizationResult> results);

struct AdjacentCorrelation {
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  CorrelationPair pair;
};

/// "autoN" (N evenly spaced of 1..last), "all", or a comma separated list.
std::vector<std::uint32_t> select_checkpoints(const std::string& spec, std::uint32_t last);

struct MemorizationReport {
  ProbeSet probes;
  std::vector<MemorizationResult> results;  // every evaluated checkpoint, by index
  std::vector<std::uint32_t> selected;      // figure checkpoints
  std::set<std::uint32_t> nan_chunks;       // chunks abandoned at least once
  ChunkGroupMatrix groups;
  CorrelationMatrix correlations;           // over the selected checkpoints
  std::vector<AdjacentCorrelation> adjacent;  // consecutive evaluated trained checkpoints

  const MemorizationResult* result(std::uint32_t checkpoint) const;
};

MemorizationReport build_report(ProbeSet probes, std::vector<MemorizationResult> results,
                                std::vector<std::uint32_t> selected, std::set<std::uint32_t> nan_chunks);

nlohmann::ordered_json summary_json(const MemorizationReport& report);

/// Writes probes.csv, scores.csv, score_distribution.csv,
/// chunk_groups.csv, correlation_matrix.csv, adjacent_correlation.csv and
/// summary.json (which lists the other files with their SHA-256).
std::vector<std::filesystem::path> emit_report(const MemorizationReport& report, const std::filesystem::path& out_dir);

struct MemorizeOptions {
  std::uint32_t n_probes = 200;
  std::uint32_t k = 32;
  std::uint32_t l = 32;
  std::uint64_t seed = 0;
  std::string checkpoints = "auto10";
  bool evaluate_all = false;  // score every checkpoint, not only the selected ones
  unsigned threads = 0;
  std::function<void(const std::string&)> log;
};

/// Samples probes from the run's manifest, evaluates checkpoints and writes
/// the report under run_dir/analysis.
MemorizationReport run_memorization(const std::filesystem::path& run_dir, const MemorizeOptions& options);

}  // namespace provlm::analysis
