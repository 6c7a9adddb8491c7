#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "provlm/model/config.hpp"

namespace provlm::trainer {

enum class NanPolicy { skip_chunk };

/// How skipped chunks are made up for so the LR schedule still completes.
enum class CompletionPolicy {
  first_successful,  // append the earliest successfully trained chunks, one per skip
  none,
};

enum class CheckpointPrecision { full, half };

std::string to_string(CompletionPolicy p);
std::string to_string(CheckpointPrecision p);

struct TrainPlan {
  model::ModelConfig model;
  std::uint64_t init_seed = 0;
  std::uint64_t train_seed = 0;  // RNG used for retry reshuffles and optional in-chunk shuffling

  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double peak_lr = 3e-4;
  double final_lr = 3e-5;
  double weight_decay = 0.1;
  double clip_norm = 1.0;
  std::uint64_t warmup_steps = 2000;
  std::uint64_t batch_size_sequences = 2240;
  std::uint64_t total_steps = 0;  // 0: derived from the manifest at run start

  NanPolicy nan_policy = NanPolicy::skip_chunk;
  CompletionPolicy completion_policy = CompletionPolicy::first_successful;
  std::uint32_t nan_retries = 0;
  bool shuffle_within_chunk = false;

  bool save_optimizer_state = true;
  CheckpointPrecision checkpoint_precision = CheckpointPrecision::full;

  /// Throws ConfigError naming the offending key(s).
  void validate() const;
};

/// Amber's optimizer and schedule settings with a caller-chosen step budget.
TrainPlan amber_plan(std::uint64_t total_steps);

nlohmann::ordered_json to_json(const TrainPlan& p);
TrainPlan train_plan_from_json(const nlohmann::json& j);

/// Linear warmup from 0 to peak_lr over [0, warmup_steps], then a half cosine
/// from peak_lr to final_lr at total_steps. Requires step <= total_steps.
double lr_at(std::uint64_t step, const TrainPlan& plan);

}  // namespace provlm::trainer
