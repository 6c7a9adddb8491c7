#include "provlm/analysis/report.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <sstream>
#include <thread>

#include "provlm/common/error.hpp"
#include "provlm/common/file_io.hpp"
#include "provlm/common/sha256.hpp"
#include "provlm/corpus/manifest.hpp"
#include "provlm/trainer/nan_ledger.hpp"
#include "provlm/trainer/trainer.hpp"

namespace provlm::analysis {

namespace fs = std::filesystem;

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::size_t ChunkGroupMatrix::rows_compared() const {
  std::size_t n = 0;
  for (std::size_t r = 0; r < checkpoints.size(); ++r)
    for (std::size_t g = 0; g < latest[r]; ++g)
      if (mean[r][g]) {
        n += mean[r][latest[r]].has_value();
        break;
      }
  return n;
}

std::size_t ChunkGroupMatrix::rows_latest_higher() const {
  std::size_t n = 0;
  for (std::size_t r = 0; r < checkpoints.size(); ++r) {
    if (!mean[r][latest[r]]) continue;
    double sum = 0;
    std::size_t cnt = 0;
    for (std::size_t g = 0; g < latest[r]; ++g)
      if (mean[r][g]) {
        sum += *mean[r][g];
        ++cnt;
      }
    if (cnt > 0 && *mean[r][latest[r]] > sum / static_cast<double>(cnt)) ++n;
  }
  return n;
}

ChunkGroupMatrix chunk_group_matrix(std::span<const MemorizationResult> rows, const ProbeSet& probes) {
  if (rows.empty()) throw std::invalid_argument("chunk_group_matrix: no checkpoints");
  ChunkGroupMatrix m;
  std::uint32_t begin = 0;
  for (const auto& r : rows) {
    if (r.baseline) throw std::invalid_argument("chunk_group_matrix: baseline results have no seen chunks");
    if (!m.checkpoints.empty() && r.checkpoint <= m.checkpoints.back())
      throw std::invalid_argument("chunk_group_matrix: rows must be sorted by checkpoint");
    m.checkpoints.push_back(r.checkpoint);
    const std::uint32_t end = *r.seen_chunks.rbegin() + 1;
    if (end > begin) {
      m.groups.push_back({begin, end});
      begin = end;
    }
  }
  auto group_of = [&](std::uint32_t chunk) {
    for (std::size_t g = 0; g < m.groups.size(); ++g)
      if (chunk >= m.groups[g].chunk_begin && chunk < m.groups[g].chunk_end) return g;
    throw std::logic_error("chunk outside every group");
  };
  for (const auto& r : rows) {
    std::vector<double> sum(m.groups.size(), 0.0);
    std::vector<std::size_t> cnt(m.groups.size(), 0);
    for (std::size_t i = 0; i < r.size(); ++i) {
      const auto g = group_of(probes.probes[r.probe_ids[i]].chunk);
      sum[g] += r.score(i);
      ++cnt[g];
    }
    std::vector<std::optional<double>> row(m.groups.size());
    for (std::size_t g = 0; g < row.size(); ++g)
      if (cnt[g]) row[g] = sum[g] / static_cast<double>(cnt[g]);
    m.mean.push_back(std::move(row));
    m.counts.push_back(std::move(cnt));
    m.latest.push_back(group_of(r.latest_chunk));
  }
  return m;
}

CorrelationPair checkpoint_correlation(const MemorizationResult& a, const MemorizationResult& b) {
  std::vector<double> sa, sb, ea, eb;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a.probe_ids[i] < b.probe_ids[j]) {
      ++i;
    } else if (b.probe_ids[j] < a.probe_ids[i]) {
      ++j;
    } else {
      sa.push_back(a.score(i));
      sb.push_back(b.score(j));
      ea.push_back(a.extractible(i) ? 1.0 : 0.0);
      eb.push_back(b.extractible(j) ? 1.0 : 0.0);
      ++i;
      ++j;
    }
  }
  if (sa.empty())
    throw std::invalid_argument("checkpoint_correlation: checkpoints " + std::to_string(a.checkpoint) + " and " +
                                std::to_string(b.checkpoint) + " share no probes");
  CorrelationPair p;
  p.n_common = sa.size();
  p.pearson_score = pearson(sa, sb);
  p.binary_agreement = pearson(ea, eb);  // phi is Pearson on 0/1 data
  return p;
}

CorrelationMatrix correlation_matrix(std::span<const MemorizationResult> results) {
  CorrelationMatrix m;
  for (const auto& r : results) m.checkpoints.push_back(r.checkpoint);
  const std::size_t n = results.size();
  m.cells.assign(n, std::vector<CorrelationPair>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      CorrelationPair p;
      try {
        p = checkpoint_correlation(results[i], results[j]);
      } catch (const std::invalid_argument&) {
        // disjoint probe sets stay absent
      }
      m.cells[i][j] = m.cells[j][i] = p;
    }
  return m;
}

std::vector<std::uint32_t> select_checkpoints(const std::string& spec, std::uint32_t last) {
  std::vector<std::uint32_t> out;
  if (spec == "all") {
    for (std::uint32_t i = 1; i <= last; ++i) out.push_back(i);
    return out;
  }
  if (spec.rfind("auto", 0) == 0) {
    std::uint32_t n = 0;
    try {
      n = static_cast<std::uint32_t>(std::stoul(spec.substr(4)));
    } catch (const std::exception&) {
      throw ConfigError("checkpoints: bad selection '" + spec + "'");
    }
    if (n == 0) throw ConfigError("checkpoints: autoN needs N >= 1");
    for (std::uint32_t j = 1; j <= n; ++j) {
      const auto idx = static_cast<std::uint32_t>(std::llround(static_cast<double>(j) * last / n));
      if (idx >= 1 && (out.empty() || idx != out.back())) out.push_back(idx);
    }
    return out;
  }
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::uint32_t v = 0;
    try {
      std::size_t used = 0;
      v = static_cast<std::uint32_t>(std::stoul(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("checkpoints: '" + item + "' is not a checkpoint index");
    }
    if (v > last) throw ConfigError("checkpoints: " + item + " exceeds the last checkpoint " + std::to_string(last));
    out.push_back(v);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

const MemorizationResult* MemorizationReport::result(std::uint32_t checkpoint) const {
  for (const auto& r : results)
    if (r.checkpoint == checkpoint) return &r;
  return nullptr;
}

MemorizationReport build_report(ProbeSet probes, std::vector<MemorizationResult> results,
                                std::vector<std::uint32_t> selected, std::set<std::uint32_t> nan_chunks) {
  MemorizationReport rep;
  rep.probes = std::move(probes);
  std::sort(results.begin(), results.end(),
            [](const MemorizationResult& a, const MemorizationResult& b) { return a.checkpoint < b.checkpoint; });
  rep.results = std::move(results);
  rep.selected = std::move(selected);
  rep.nan_chunks = std::move(nan_chunks);

  std::vector<MemorizationResult> rows, trained;
  for (const auto& r : rep.results) {
    if (r.baseline) continue;
    trained.push_back(r);
    if (std::binary_search(rep.selected.begin(), rep.selected.end(), r.checkpoint)) rows.push_back(r);
  }
  if (!rows.empty()) {
    rep.groups = chunk_group_matrix(rows, rep.probes);
    rep.correlations = correlation_matrix(rows);
  }
  for (std::size_t i = 0; i + 1 < trained.size(); ++i)
    rep.adjacent.push_back(
        {trained[i].checkpoint, trained[i + 1].checkpoint, checkpoint_correlation(trained[i], trained[i + 1])});
  return rep;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

}  // namespace

nlohmann::ordered_json summary_json(const MemorizationReport& rep) {
  nlohmann::ordered_json j;
  j["k"] = rep.probes.k;
  j["l"] = rep.probes.l;
  j["n_per_chunk"] = rep.probes.n_per_chunk;
  j["seed"] = rep.probes.seed;
  j["manifest_checksum"] = rep.probes.manifest_checksum;
  j["probe_count"] = rep.probes.probes.size();
  j["warnings"] = rep.probes.warnings;
  j["selected_checkpoints"] = rep.selected;
  j["nan_chunks"] = std::vector<std::uint32_t>(rep.nan_chunks.begin(), rep.nan_chunks.end());
  j["correlation_metrics"] = {{"pearson_score", "Pearson correlation of per-probe memorization scores"},
                              {"binary_agreement", "phi coefficient of per-probe extractible flags"}};

  j["checkpoints"] = nlohmann::ordered_json::array();
  for (const auto& r : rep.results) {
    nlohmann::ordered_json c;
    c["checkpoint"] = r.checkpoint;
    c["step"] = r.step;
    c["baseline"] = r.baseline;
    c["n_probes"] = r.size();
    c["seen_chunks"] = r.seen_chunks.size();
    c["mean_score"] = r.mean_score();
    c["extractible_fraction"] = r.extractible_fraction();
    if (r.size() > 1) {
      double ss = 0;
      const double mean = r.mean_score();
      for (std::size_t i = 0; i < r.size(); ++i) ss += (r.score(i) - mean) * (r.score(i) - mean);
      c["standard_error"] = std::sqrt(ss / static_cast<double>(r.size() - 1) / static_cast<double>(r.size()));
    }
    j["checkpoints"].push_back(c);
  }
  j["chunk_groups"] = {{"rows_compared", rep.groups.rows_compared()},
                       {"rows_latest_higher", rep.groups.rows_latest_higher()}};
  std::size_t pairs = 0, strong = 0;
  for (const auto& a : rep.adjacent) {
    ++pairs;
    strong += a.pair.pearson_score && *a.pair.pearson_score >= 0.5;
  }
  j["adjacent_pearson"] = {{"pairs", pairs}, {"pairs_at_least_0_5", strong}};
  return j;
}

std::vector<fs::path> emit_report(const MemorizationReport& rep, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<fs::path> files;
  auto write = [&](const std::string& name, const std::string& text) {
    write_file_atomic(out_dir / name, text);
    files.push_back(out_dir / name);
  };

  {
    std::string s = "probe,chunk,sequence,crosses_document,nan_chunk\n";
    for (std::size_t i = 0; i < rep.probes.probes.size(); ++i) {
      const auto& p = rep.probes.probes[i];
      s += std::to_string(i) + "," + std::to_string(p.chunk) + "," + std::to_string(p.sequence) + "," +
           (p.crosses_document ? "1" : "0") + "," + (rep.nan_chunks.contains(p.chunk) ? "1" : "0") + "\n";
    }
    write("probes.csv", s);
  }
  {
    std::string s = "checkpoint,probe,matches,score,extractible\n";
    for (const auto& r : rep.results)
      for (std::size_t i = 0; i < r.size(); ++i)
        s += std::to_string(r.checkpoint) + "," + std::to_string(r.probe_ids[i]) + "," + std::to_string(r.matches[i]) +
             "," + fmt(r.score(i)) + "," + (r.extractible(i) ? "1" : "0") + "\n";
    write("scores.csv", s);
  }
  {
    std::string s = "checkpoint,score,count,n_probes,pct_score_1\n";
    std::vector<std::uint32_t> shown = rep.selected;
    if (rep.result(0) && !std::binary_search(shown.begin(), shown.end(), 0u)) shown.insert(shown.begin(), 0u);
    for (auto c : shown) {
      const MemorizationResult* r = rep.result(c);
      if (!r) continue;
      std::vector<std::size_t> hist(r->l + 1, 0);
      for (auto m : r->matches) ++hist[m];
      const std::string pct = fmt(100.0 * r->extractible_fraction());
      for (std::uint32_t b = 0; b <= r->l; ++b)
        s += std::to_string(c) + "," + fmt(static_cast<double>(b) / r->l) + "," + std::to_string(hist[b]) + "," +
             std::to_string(r->size()) + "," + pct + "\n";
    }
    write("score_distribution.csv", s);
  }
  {
    std::string s = "checkpoint,group,chunk_begin,chunk_end,n_probes,mean_score,latest_seen\n";
    const auto& m = rep.groups;
    for (std::size_t r = 0; r < m.checkpoints.size(); ++r)
      for (std::size_t g = 0; g < m.groups.size(); ++g)
        s += std::to_string(m.checkpoints[r]) + "," + std::to_string(g) + "," + std::to_string(m.groups[g].chunk_begin) +
             "," + std::to_string(m.groups[g].chunk_end) + "," + std::to_string(m.counts[r][g]) + "," +
             fmt(m.mean[r][g]) + "," + (m.latest[r] == g ? "1" : "0") + "\n";
    write("chunk_groups.csv", s);
  }
  {
    std::string s = "checkpoint_a,checkpoint_b,n_common,pearson_score,binary_agreement\n";
    const auto& m = rep.correlations;
    for (std::size_t i = 0; i < m.checkpoints.size(); ++i)
      for (std::size_t j = 0; j < m.checkpoints.size(); ++j) {
        const auto& c = m.cells[i][j];
        s += std::to_string(m.checkpoints[i]) + "," + std::to_string(m.checkpoints[j]) + "," +
             std::to_string(c.n_common) + "," + fmt(c.pearson_score) + "," + fmt(c.binary_agreement) + "\n";
      }
    write("correlation_matrix.csv", s);
  }
  {
    std::string s = "checkpoint_a,checkpoint_b,n_common,pearson_score,binary_agreement\n";
    for (const auto& a : rep.adjacent)
      s += std::to_string(a.a) + "," + std::to_string(a.b) + "," + std::to_string(a.pair.n_common) + "," +
           fmt(a.pair.pearson_score) + "," + fmt(a.pair.binary_agreement) + "\n";
    write("adjacent_correlation.csv", s);
  }
  nlohmann::ordered_json summary = summary_json(rep);
  nlohmann::ordered_json outputs = nlohmann::ordered_json::object();
  for (const auto& f : files) outputs[f.filename().string()] = sha256_file_hex(f);
  summary["files"] = outputs;
  write("summary.json", summary.dump(2) + "\n");
  return files;
}

MemorizationReport run_memorization(const fs::path& run_dir, const MemorizeOptions& options) {
  auto log = [&](const std::string& m) {
    if (options.log) options.log(m);
  };
  const auto run = nlohmann::json::parse(read_text_file(run_dir / trainer::kRunFile));
  fs::path manifest_path = run.at("manifest").get<std::string>();
  if (manifest_path.is_relative()) manifest_path = run_dir / manifest_path;
  const corpus::CorpusManifest manifest = corpus::read_manifest(manifest_path);
  const std::string checksum = sha256_file_hex(manifest_path);
  if (checksum != run.at("manifest_checksum").get<std::string>())
    throw CorpusError("manifest " + manifest_path.string() + " changed since training");

  ProbeSet probes = sample_probes(manifest, manifest_path.parent_path(), options.n_probes, options.k, options.l,
                                  options.seed, checksum);
  for (const auto& w : probes.warnings) log("warning: " + w);

  const auto ckpts = registry::list_checkpoints(run_dir / trainer::kCheckpointDir);
  if (ckpts.empty()) throw CheckpointError("no checkpoints under " + (run_dir / trainer::kCheckpointDir).string());
  const auto last = static_cast<std::uint32_t>(ckpts.size() - 1);
  std::vector<std::uint32_t> selected = select_checkpoints(options.checkpoints, last);
  std::set<std::uint32_t> evaluate{0};
  if (options.evaluate_all)
    for (std::uint32_t i = 1; i <= last; ++i) evaluate.insert(i);
  evaluate.insert(selected.begin(), selected.end());
  for (auto c : evaluate)
    if (!fs::exists(run_dir / trainer::kCheckpointDir / registry::checkpoint_file_name(c)))
      throw CheckpointError("checkpoint " + std::to_string(c) + " is missing from " + run_dir.string());

  const std::vector<std::uint32_t> todo(evaluate.begin(), evaluate.end());
  std::vector<MemorizationResult> results(todo.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i = next++; i < todo.size(); i = next++) {
      try {
        registry::LoadOptions lo;
        lo.require_optimizer = false;
        lo.expect_manifest_checksum = checksum;
        const auto ck = registry::load_checkpoint(
            run_dir / trainer::kCheckpointDir / registry::checkpoint_file_name(todo[i]), lo);
        results[i] = evaluate_checkpoint(ck, probes);
        std::lock_guard lock(mu);
        log("checkpoint " + std::to_string(todo[i]) + ": " + std::to_string(results[i].size()) +
            " probes, mean score " + std::to_string(results[i].mean_score()));
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const unsigned threads = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < std::min<std::size_t>(threads, todo.size()); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  std::set<std::uint32_t> nan_chunks;
  if (fs::exists(run_dir / trainer::kNanLedgerFile)) {
    const auto ledger =
        trainer::NanLedger::from_json(nlohmann::json::parse(read_text_file(run_dir / trainer::kNanLedgerFile)));
    for (auto c : ledger.failed_chunks()) nan_chunks.insert(c);
  }
  MemorizationReport rep = build_report(std::move(probes), std::move(results), selected, std::move(nan_chunks));
  emit_report(rep, run_dir / "analysis");
  return rep;
}

}  // namespace provlm::analysis
