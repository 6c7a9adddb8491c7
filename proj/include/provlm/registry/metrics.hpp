#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace provlm::registry {

inline constexpr const char* kMetricsFile = "metrics.jsonl";
inline constexpr const char* kMetricsCsvHeader = "step,chunk,loss,grad_norm_preclip,lr,tokens_per_second,wall_time";

struct MetricsRecord {
  std::uint64_t step = 0;
  std::uint32_t chunk = 0;
  double loss = 0.0;
  double grad_norm_preclip = 0.0;
  double lr = 0.0;
  double tokens_per_second = 0.0;
  double wall_time = 0.0;  // seconds since the Unix epoch

  bool operator==(const MetricsRecord&) const = default;
};

std::string to_json_line(const MetricsRecord& r);
MetricsRecord metrics_from_json_line(const std::string& line);

/// Append-only JSONL ledger. One JSON object per line, in step order.
/// Opening an existing file replays it.
class MetricsLedger {
 public:
  explicit MetricsLedger(std::filesystem::path path);

  /// Throws std::invalid_argument unless r.step exceeds the last step.
  void append(const MetricsRecord& r);
  /// Validates the whole batch first, then writes it with a single flush.
  void append(std::span<const MetricsRecord> records);

  /// Records with begin <= step < end, in step order.
  std::vector<MetricsRecord> query(std::uint64_t begin, std::uint64_t end) const;
  const std::vector<MetricsRecord>& records() const { return records_; }
  std::optional<std::uint64_t> last_step() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::vector<MetricsRecord> records_;
  std::ofstream out_;
};

/// CSV with kMetricsCsvHeader; reals printed with %.17g so the export is
/// lossless and byte-stable.
std::string metrics_csv(std::span<const MetricsRecord> records);
void export_metrics_csv(const std::filesystem::path& ledger, const std::filesystem::path& csv);

/// Drops records past `last_step`, e.g. steps logged by a chunk whose
/// checkpoint was never written. Returns the number removed.
std::size_t truncate_metrics_ledger(const std::filesystem::path& ledger, std::uint64_t last_step);

}  // namespace provlm::registry
