#include "provlm/trainer/plan.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "provlm/common/error.hpp"

namespace provlm::trainer {

std::string to_string(CompletionPolicy p) { return p == CompletionPolicy::none ? "none" : "first_successful"; }
std::string to_string(CheckpointPrecision p) { return p == CheckpointPrecision::half ? "half" : "full"; }

void TrainPlan::validate() const {
  model.validate();
  if (!(final_lr > 0.0 && final_lr <= peak_lr))
    throw ConfigError("train.final_lr and train.peak_lr: need 0 < final_lr <= peak_lr");
  if (total_steps != 0 && warmup_steps >= total_steps)
    throw ConfigError("train.warmup_steps must be smaller than train.total_steps");
  if (!(clip_norm > 0.0)) throw ConfigError("train.clip_norm must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train.eps must be positive");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
  if (batch_size_sequences == 0) throw ConfigError("train.batch_size_sequences must be positive");
}

TrainPlan amber_plan(std::uint64_t total_steps) {
  TrainPlan p;
  p.model = model::amber_7b_config();
  p.total_steps = total_steps;
  return p;
}

nlohmann::ordered_json to_json(const TrainPlan& p) {
  nlohmann::ordered_json j;
  j["model"] = model::to_json(p.model);
  j["init_seed"] = p.init_seed;
  j["train_seed"] = p.train_seed;
  j["beta1"] = p.beta1;
  j["beta2"] = p.beta2;
  j["eps"] = p.eps;
  j["peak_lr"] = p.peak_lr;
  j["final_lr"] = p.final_lr;
  j["weight_decay"] = p.weight_decay;
  j["clip_norm"] = p.clip_norm;
  j["warmup_steps"] = p.warmup_steps;
  j["batch_size_sequences"] = p.batch_size_sequences;
  j["total_steps"] = p.total_steps;
  j["nan_policy"] = "skip_chunk";
  j["completion_policy"] = to_string(p.completion_policy);
  j["nan_retries"] = p.nan_retries;
  j["shuffle_within_chunk"] = p.shuffle_within_chunk;
  j["save_optimizer_state"] = p.save_optimizer_state;
  j["checkpoint_precision"] = to_string(p.checkpoint_precision);
  return j;
}

TrainPlan train_plan_from_json(const nlohmann::json& j) {
  TrainPlan p;
  try {
    if (j.contains("model")) p.model = model::model_config_from_json(j.at("model"));
    p.init_seed = j.value("init_seed", p.init_seed);
    p.train_seed = j.value("train_seed", p.train_seed);
    p.beta1 = j.value("beta1", p.beta1);
    p.beta2 = j.value("beta2", p.beta2);
    p.eps = j.value("eps", p.eps);
    p.peak_lr = j.value("peak_lr", p.peak_lr);
    p.final_lr = j.value("final_lr", p.final_lr);
    p.weight_decay = j.value("weight_decay", p.weight_decay);
    p.clip_norm = j.value("clip_norm", p.clip_norm);
    p.warmup_steps = j.value("warmup_steps", p.warmup_steps);
    p.batch_size_sequences = j.value("batch_size_sequences", p.batch_size_sequences);
    p.total_steps = j.value("total_steps", p.total_steps);
    if (j.contains("nan_policy") && j.at("nan_policy").get<std::string>() != "skip_chunk")
      throw ConfigError("train.nan_policy: only 'skip_chunk' is supported");
    if (j.contains("completion_policy")) {
      const auto s = j.at("completion_policy").get<std::string>();
      if (s == "first_successful")
        p.completion_policy = CompletionPolicy::first_successful;
      else if (s == "none")
        p.completion_policy = CompletionPolicy::none;
      else
        throw ConfigError("train.completion_policy: unknown value '" + s + "'");
    }
    p.nan_retries = j.value("nan_retries", p.nan_retries);
    p.shuffle_within_chunk = j.value("shuffle_within_chunk", p.shuffle_within_chunk);
    p.save_optimizer_state = j.value("save_optimizer_state", p.save_optimizer_state);
    if (j.contains("checkpoint_precision")) {
      const auto s = j.at("checkpoint_precision").get<std::string>();
      if (s == "full")
        p.checkpoint_precision = CheckpointPrecision::full;
      else if (s == "half")
        p.checkpoint_precision = CheckpointPrecision::half;
      else
        throw ConfigError("train.checkpoint_precision: unknown value '" + s + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train plan: ") + e.what());
  }
  return p;
}

double lr_at(std::uint64_t step, const TrainPlan& plan) {
  if (step > plan.total_steps)
    throw std::out_of_range("lr_at: step " + std::to_string(step) + " beyond total_steps");
  if (step <= plan.warmup_steps) {
    if (plan.warmup_steps == 0) return plan.peak_lr;
    return plan.peak_lr * static_cast<double>(step) / static_cast<double>(plan.warmup_steps);
  }
  const double progress = static_cast<double>(step - plan.warmup_steps) /
                          static_cast<double>(plan.total_steps - plan.warmup_steps);
  return plan.final_lr + 0.5 * (plan.peak_lr - plan.final_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace provlm::trainer
