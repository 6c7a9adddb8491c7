#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "provlm/common/error.hpp"
#include "provlm/corpus/prepare.hpp"
#include "provlm/corpus/synthetic.hpp"
#include "provlm/model/config.hpp"
#include "provlm/trainer/plan.hpp"

namespace provlm::cli {

inline constexpr int kRunConfigSchemaVersion = 1;

struct ConfigIssue {
  std::string key;  // dotted path, e.g. "corpus.sources[1].weight_tokens"
  std::string message;
};

/// Carries every problem found in one pass.
class ConfigValidationError : public ConfigError {
 public:
  explicit ConfigValidationError(std::vector<ConfigIssue> issues);
  const std::vector<ConfigIssue>& issues() const { return issues_; }

 private:
  std::vector<ConfigIssue> issues_;
};

struct Seeds {
  std::uint64_t corpus = 0;
  std::uint64_t init = 0;
  std::uint64_t train = 0;
  std::uint64_t probes = 0;
};

/// A source produced by the pipeline instead of read from disk.
struct GeneratedSource {
  std::string name;
  std::variant<corpus::MarkovSourceSpec, corpus::AlphabetSourceSpec> spec;

  std::uint64_t tokens() const;
  std::vector<std::string> generate() const;
};

struct AnalysisSettings {
  std::uint32_t n_probes = 200;
  std::uint32_t k = 32;
  std::uint32_t l = 32;
  std::string checkpoints = "auto10";
  bool evaluate_all = true;
};

struct RunConfig {
  int schema_version = kRunConfigSchemaVersion;
  std::filesystem::path base_dir;     // directory of the config file
  std::filesystem::path output_root;  // resolved against base_dir
  Seeds seeds;
  corpus::CorpusConfig corpus;        // generated sources point into output_root/sources
  std::vector<GeneratedSource> generated;
  trainer::TrainPlan train;
  AnalysisSettings analysis;
};

/// Path a generated source is written to.
std::filesystem::path generated_source_path(const std::filesystem::path& output_root, const std::string& name);

/// Parses and cross-checks a run configuration. `base_dir` resolves relative
/// paths. Throws ConfigValidationError listing every violated rule.
RunConfig validate_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical form with seeds, defaults and paths filled in. output_root is
/// left out so reruns into different directories compare equal.
nlohmann::ordered_json to_json(const RunConfig& c);

}  // namespace provlm::cli
