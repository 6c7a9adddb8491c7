#include "provlm/trainer/nan_ledger.hpp"

#include <algorithm>

#include "provlm/common/error.hpp"

namespace provlm::trainer {

std::string to_string(FailureKind k) { return k == FailureKind::nan_loss ? "nan_loss" : "nonfinite_grad"; }

FailureKind parse_failure_kind(const std::string& s) {
  if (s == "nan_loss") return FailureKind::nan_loss;
  if (s == "nonfinite_grad") return FailureKind::nonfinite_grad;
  throw ConfigError("unknown failure kind '" + s + "'");
}

std::vector<std::uint32_t> NanLedger::failed_chunks() const {
  std::vector<std::uint32_t> out;
  for (const auto& e : events_)
    if (std::find(out.begin(), out.end(), e.chunk) == out.end()) out.push_back(e.chunk);
  return out;
}

nlohmann::ordered_json NanLedger::to_json() const {
  nlohmann::ordered_json j;
  j["completion_policy"] = to_string(policy_);
  j["events"] = nlohmann::ordered_json::array();
  for (const auto& e : events_)
    j["events"].push_back({{"chunk", e.chunk}, {"step", e.step}, {"kind", to_string(e.kind)}, {"attempt", e.attempt}});
  j["substitutions"] = nlohmann::ordered_json::array();
  for (const auto& s : substitutions_)
    j["substitutions"].push_back({{"skipped_chunk", s.skipped_chunk}, {"substitute_chunk", s.substitute_chunk}});
  return j;
}

NanLedger NanLedger::from_json(const nlohmann::json& j) {
  const auto policy = j.at("completion_policy").get<std::string>() == "none" ? CompletionPolicy::none
                                                                              : CompletionPolicy::first_successful;
  NanLedger l(policy);
  for (const auto& e : j.at("events"))
    l.record(NanEvent{e.at("chunk").get<std::uint32_t>(), e.at("step").get<std::uint64_t>(),
                      parse_failure_kind(e.at("kind").get<std::string>()), e.at("attempt").get<std::uint32_t>()});
  for (const auto& s : j.at("substitutions"))
    l.record(Substitution{s.at("skipped_chunk").get<std::uint32_t>(), s.at("substitute_chunk").get<std::uint32_t>()});
  return l;
}

}  // namespace provlm::trainer
