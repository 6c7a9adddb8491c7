#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "provlm/trainer/plan.hpp"

namespace provlm::trainer {

enum class FailureKind { nan_loss, nonfinite_grad };

std::string to_string(FailureKind k);
FailureKind parse_failure_kind(const std::string& s);

struct NanEvent {
  std::uint32_t chunk = 0;
  std::uint64_t step = 0;  // global step at which the failure was detected
  FailureKind kind = FailureKind::nan_loss;
  std::uint32_t attempt = 0;

  bool operator==(const NanEvent&) const = default;
};

struct Substitution {
  std::uint32_t skipped_chunk = 0;
  std::uint32_t substitute_chunk = 0;

  bool operator==(const Substitution&) const = default;
};

/// Append-only record of abandoned chunks and how the schedule was completed.
class NanLedger {
 public:
  explicit NanLedger(CompletionPolicy policy = CompletionPolicy::first_successful) : policy_(policy) {}

  void record(const NanEvent& e) { events_.push_back(e); }
  void record(const Substitution& s) { substitutions_.push_back(s); }

  const std::vector<NanEvent>& events() const { return events_; }
  const std::vector<Substitution>& substitutions() const { return substitutions_; }
  CompletionPolicy policy() const { return policy_; }
  /// Distinct chunks with at least one event, in first-failure order.
  std::vector<std::uint32_t> failed_chunks() const;

  nlohmann::ordered_json to_json() const;
  static NanLedger from_json(const nlohmann::json& j);

 private:
  CompletionPolicy policy_;
  std::vector<NanEvent> events_;
  std::vector<Substitution> substitutions_;
};

}  // namespace provlm::trainer
