#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <set>
#include <string>

#include <json.hpp>

#include "provlm/cli/run_config.hpp"
#include "provlm/trainer/trainer.hpp"

namespace provlm::cli {

/// Process exit codes. Each pipeline stage fails with its own code.
enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitConfig = 2,
  kExitPrepare = 3,
  kExitVerify = 4,
  kExitTrain = 5,
  kExitEval = 6,
  kExitMemorize = 7,
  kExitExport = 8,
  kExitProvenance = 9,
  kExitUsage = 64,
};

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, int code, const std::string& message)
      : std::runtime_error(stage + ": " + message), stage_(std::move(stage)), code_(code) {}
  const std::string& stage() const { return stage_; }
  int code() const { return code_; }

 private:
  std::string stage_;
  int code_;
};

inline constexpr const char* kProvenanceFile = "provenance.json";
inline constexpr const char* kEvalFile = "eval.csv";
inline constexpr const char* kEvalCsvHeader = "checkpoint,step,chunk,perplexity,mean_nll,tokens";

struct DeskOptions {
  bool deterministic = true;
  unsigned threads = 0;
  trainer::FaultInjection faults;
  std::function<void(const std::string&)> log;
};

struct DeskResult {
  std::filesystem::path output_root;
  std::filesystem::path provenance;
  std::uint32_t checkpoints = 0;
  bool resumed = false;
};

/// Writes the generated sources that are not already present.
void synthesize_sources(const RunConfig& config);

/// prepare -> verify -> train -> eval -> memorize -> export -> provenance.
/// A rerun on a partially finished output root picks up from the last
/// completed stage (training resumes from the newest checkpoint).
/// Failures are thrown as StageError.
DeskResult reproduce_desk(const RunConfig& config, const DeskOptions& options = {});

/// Per-checkpoint held-out perplexity table (kEvalCsvHeader columns).
void write_eval_table(const std::filesystem::path& run_dir, const std::filesystem::path& heldout,
                      const std::filesystem::path& csv, unsigned threads = 0,
                      const std::function<void(const std::string&)>& log = {});

/// Hash of the metrics columns that do not depend on wall-clock timing.
std::string deterministic_metrics_hash(const std::filesystem::path& ledger);

nlohmann::ordered_json build_provenance(const RunConfig& config);

}  // namespace provlm::cli
