#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "provlm/common/rng.hpp"
#include "provlm/corpus/chunk_file.hpp"
#include "provlm/corpus/manifest.hpp"
#include "provlm/model/loss.hpp"
#include "provlm/model/params.hpp"
#include "provlm/registry/metrics.hpp"
#include "provlm/trainer/nan_ledger.hpp"
#include "provlm/trainer/optimizer.hpp"
#include "provlm/trainer/plan.hpp"

namespace provlm::trainer {

inline constexpr const char* kCheckpointDir = "checkpoints";
inline constexpr const char* kNanLedgerFile = "nan_ledger.json";
inline constexpr const char* kRunFile = "run.json";

/// Everything that must be restored for an exact continuation.
struct TrainState {
  model::ParameterSet<float> params;
  OptimizerState<float> optimizer;
  Xoshiro256 rng{0};
  std::uint64_t step = 0;
};

TrainState initial_state(const TrainPlan& plan);

struct FaultInjection {
  std::set<std::uint32_t> nan_loss_chunks;        // loss forced to NaN mid-chunk, on every attempt
  std::set<std::uint32_t> nonfinite_grad_chunks;  // one gradient forced to +inf mid-chunk

  bool empty() const { return nan_loss_chunks.empty() && nonfinite_grad_chunks.empty(); }
};

struct TrainOptions {
  bool deterministic = true;
  unsigned threads = 0;  // fast mode workers; 0 picks max(2, hardware)
  FaultInjection faults;
  std::optional<std::uint32_t> stop_after_checkpoint;
  std::function<void(const std::string&)> log;
};

struct StepResult {
  double loss = 0.0;
  double grad_norm_preclip = 0.0;
  double lr = 0.0;
  std::size_t tokens = 0;
  std::optional<FailureKind> failure;
};

/// One optimizer step: forward, loss, backward, clip, AdamW. On failure the
/// state is left partially untouched only in the sense that parameters and
/// moments are not updated; callers restore their snapshot regardless.
StepResult train_step(const model::Transformer<float>& net, TrainState& state, const model::Batch& batch,
                      const TrainPlan& plan, std::uint64_t total_steps, const TrainOptions& options = {},
                      std::optional<FailureKind> poison = std::nullopt);

struct ChunkOutcome {
  std::uint32_t chunk = 0;
  bool ok = false;
  std::optional<NanEvent> failure;
  std::uint64_t steps = 0;
  double mean_loss = 0.0;
  std::vector<registry::MetricsRecord> metrics;  // empty on failure
};

std::uint64_t steps_per_chunk(std::uint64_t sequences, std::uint64_t batch_size);

/// Trains over one chunk. On a non-finite loss or gradient the chunk is
/// abandoned and `state` is restored to its value at entry.
ChunkOutcome train_chunk(const model::Transformer<float>& net, const corpus::ChunkData& chunk,
                         std::uint32_t chunk_index, TrainState& state, const TrainPlan& plan,
                         std::uint64_t total_steps, const TrainOptions& options = {}, std::uint32_t attempt = 0);

/// Scheduler bookkeeping saved inside every checkpoint.
struct RunState {
  std::uint64_t total_steps = 0;
  std::deque<std::uint32_t> queue;               // chunks still to train, in order
  std::vector<std::uint32_t> trained;            // chunk trained at each successful slot
  std::vector<std::uint32_t> trained_original;   // successes from the first pass, for substitution
  std::vector<std::uint32_t> skipped;            // abandoned chunks, in order
  std::size_t substitutions_owed = 0;
  bool completing = false;                       // original pass finished; queue now holds substitutes
  std::set<std::uint32_t> used_as_substitute;
  NanLedger ledger;

  nlohmann::json to_json() const;
  static RunState from_json(const nlohmann::json& j);
};

struct RunResult {
  std::vector<std::filesystem::path> checkpoints;  // written by this invocation
  std::filesystem::path final_checkpoint;
  RunState run_state;
  bool stopped_early = false;
};

/// Consumes the manifest's chunks in order, writing checkpoint 0 (fresh
/// start) and one checkpoint per successful chunk under out_dir/checkpoints.
/// With `resume`, continues from that checkpoint; its optimizer state must
/// be present.
RunResult run_training(const TrainPlan& plan, const std::filesystem::path& manifest_path,
                       const std::filesystem::path& out_dir, const TrainOptions& options = {},
                       const std::optional<std::filesystem::path>& resume = std::nullopt);

/// Sum of steps_per_chunk over the manifest's chunks.
std::uint64_t planned_total_steps(const corpus::CorpusManifest& manifest, std::uint64_t batch_size);

}  // namespace provlm::trainer
