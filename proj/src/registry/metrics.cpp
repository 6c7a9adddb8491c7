#include "provlm/registry/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include <json.hpp>

#include "provlm/common/error.hpp"
#include "provlm/common/file_io.hpp"

namespace provlm::registry {

namespace fs = std::filesystem;

std::string to_json_line(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["chunk"] = r.chunk;
  j["loss"] = r.loss;
  j["grad_norm_preclip"] = r.grad_norm_preclip;
  j["lr"] = r.lr;
  j["tokens_per_second"] = r.tokens_per_second;
  j["wall_time"] = r.wall_time;
  return j.dump();
}

MetricsRecord metrics_from_json_line(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    MetricsRecord r;
    r.step = j.at("step").get<std::uint64_t>();
    r.chunk = j.at("chunk").get<std::uint32_t>();
    r.loss = j.at("loss").get<double>();
    r.grad_norm_preclip = j.at("grad_norm_preclip").get<double>();
    r.lr = j.at("lr").get<double>();
    r.tokens_per_second = j.at("tokens_per_second").get<double>();
    r.wall_time = j.at("wall_time").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad metrics line: ") + e.what());
  }
}

MetricsLedger::MetricsLedger(fs::path path) : path_(std::move(path)) {
  if (fs::exists(path_)) {
    std::ifstream in(path_);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      MetricsRecord r = metrics_from_json_line(line);
      if (!records_.empty() && r.step <= records_.back().step)
        throw IoError(path_.string() + ": steps are not strictly increasing");
      records_.push_back(r);
    }
  } else if (path_.has_parent_path()) {
    fs::create_directories(path_.parent_path());
  }
  out_.open(path_, std::ios::app);
  if (!out_) throw IoError("cannot open metrics ledger " + path_.string());
}

void MetricsLedger::append(const MetricsRecord& r) { append(std::span(&r, 1)); }

void MetricsLedger::append(std::span<const MetricsRecord> records) {
  std::optional<std::uint64_t> last = last_step();
  for (const auto& r : records) {
    if (last && r.step <= *last)
      throw std::invalid_argument("metrics step " + std::to_string(r.step) + " does not exceed last step " +
                                  std::to_string(*last));
    last = r.step;
  }
  for (const auto& r : records) {
    out_ << to_json_line(r) << '\n';
    records_.push_back(r);
  }
  out_.flush();
  if (!out_) throw IoError("write failed on metrics ledger " + path_.string());
}

std::vector<MetricsRecord> MetricsLedger::query(std::uint64_t begin, std::uint64_t end) const {
  std::vector<MetricsRecord> out;
  if (begin >= end) return out;
  auto lo = std::lower_bound(records_.begin(), records_.end(), begin,
                             [](const MetricsRecord& r, std::uint64_t s) { return r.step < s; });
  for (auto it = lo; it != records_.end() && it->step < end; ++it) out.push_back(*it);
  return out;
}

std::optional<std::uint64_t> MetricsLedger::last_step() const {
  if (records_.empty()) return std::nullopt;
  return records_.back().step;
}

std::string metrics_csv(std::span<const MetricsRecord> records) {
  std::string out = kMetricsCsvHeader;
  out += '\n';
  char buf[512];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%llu,%u,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<unsigned long long>(r.step), r.chunk, r.loss, r.grad_norm_preclip, r.lr,
                  r.tokens_per_second, r.wall_time);
    out += buf;
  }
  return out;
}

void export_metrics_csv(const fs::path& ledger, const fs::path& csv) {
  if (!fs::exists(ledger)) throw IoError("no metrics ledger at " + ledger.string());
  const MetricsLedger l(ledger);
  write_file_atomic(csv, metrics_csv(l.records()));
}

std::size_t truncate_metrics_ledger(const fs::path& ledger, std::uint64_t last_step) {
  if (!fs::exists(ledger)) return 0;
  std::vector<MetricsRecord> keep;
  {
    const MetricsLedger l(ledger);
    for (const auto& r : l.records())
      if (r.step <= last_step) keep.push_back(r);
    if (keep.size() == l.records().size()) return 0;
    const std::size_t removed = l.records().size() - keep.size();
    std::string body;
    for (const auto& r : keep) body += to_json_line(r) + "\n";
    write_file_atomic(ledger, body);
    return removed;
  }
}

}  // namespace provlm::registry
