#include "provlm/cli/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <mutex>
#include <thread>

#include "provlm/analysis/report.hpp"
#include "provlm/common/file_io.hpp"
#include "provlm/common/sha256.hpp"
#include "provlm/corpus/chunk_file.hpp"
#include "provlm/corpus/manifest.hpp"
#include "provlm/registry/checkpoint.hpp"
#include "provlm/registry/metrics.hpp"
#include "provlm/registry/perplexity.hpp"

namespace provlm::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kConfigCopy = "config.json";
constexpr const char* kDataDir = "data";
constexpr const char* kRunDir = "run";
constexpr const char* kMetricsCsv = "metrics.csv";

template <class F>
auto stage(const std::string& name, int code, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, code, e.what());
  }
}

std::string rel(const fs::path& p, const fs::path& root) { return fs::relative(p, root).generic_string(); }

}  // namespace

void synthesize_sources(const RunConfig& config) {
  for (const auto& g : config.generated) {
    const fs::path p = generated_source_path(config.output_root, g.name);
    if (fs::exists(p)) continue;
    fs::create_directories(p.parent_path());
    corpus::write_binary_documents(p, g.generate());
  }
}

void write_eval_table(const fs::path& run_dir, const fs::path& heldout_path, const fs::path& csv, unsigned threads,
                      const std::function<void(const std::string&)>& log) {
  const corpus::ChunkData heldout = corpus::read_chunk_file(heldout_path);
  const auto ckpts = registry::list_checkpoints(run_dir / trainer::kCheckpointDir);
  if (ckpts.empty()) throw CheckpointError("no checkpoints under " + run_dir.string());

  std::vector<std::string> rows(ckpts.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i = next++; i < ckpts.size(); i = next++) {
      try {
        registry::LoadOptions lo;
        lo.require_optimizer = false;
        const registry::Checkpoint ck = registry::load_checkpoint(ckpts[i], lo);
        const registry::PerplexityResult r = registry::eval_perplexity(ck.params, heldout);
        std::string chunk;
        const auto& trained = ck.run_state.at("trained");
        if (!trained.empty()) chunk = std::to_string(trained.back().get<std::uint32_t>());
        char buf[256];
        std::snprintf(buf, sizeof buf, "%u,%llu,%s,%.17g,%.17g,%zu\n", ck.index,
                      static_cast<unsigned long long>(ck.step), chunk.c_str(), r.perplexity, r.mean_nll, r.tokens);
        rows[i] = buf;
        std::lock_guard lock(mu);
        if (log) log("eval " + ckpts[i].filename().string() + ": perplexity " + std::to_string(r.perplexity));
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const unsigned n = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < std::min<std::size_t>(n, ckpts.size()); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  std::string out = std::string(kEvalCsvHeader) + "\n";
  for (const auto& r : rows) out += r;
  write_file_atomic(csv, out);
}

std::string deterministic_metrics_hash(const fs::path& ledger) {
  const registry::MetricsLedger l(ledger);
  std::string body;
  char buf[256];
  for (const auto& r : l.records()) {
    std::snprintf(buf, sizeof buf, "%llu,%u,%.17g,%.17g,%.17g\n", static_cast<unsigned long long>(r.step), r.chunk,
                  r.loss, r.grad_norm_preclip, r.lr);
    body += buf;
  }
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(body.data()), body.size()));
}

nlohmann::ordered_json build_provenance(const RunConfig& config) {
  const fs::path root = config.output_root;
  const fs::path data = root / kDataDir;
  const fs::path run = root / kRunDir;
  const fs::path manifest_path = data / corpus::kManifestFile;
  const corpus::CorpusManifest manifest = corpus::read_manifest(manifest_path);

  nlohmann::ordered_json p;
  p["schema_version"] = 1;
  p["config"] = {{"file", kConfigCopy}, {"sha256", sha256_file_hex(root / kConfigCopy)}};
  p["seeds"] = {{"corpus", config.seeds.corpus},
                {"init", config.seeds.init},
                {"train", config.seeds.train},
                {"probes", config.seeds.probes}};

  auto& sources = p["sources"] = nlohmann::ordered_json::array();
  for (const auto& s : config.corpus.sources) {
    const fs::path sp = s.path.is_absolute() ? s.path : config.base_dir / s.path;
    nlohmann::ordered_json js{{"name", s.name}, {"sha256", sha256_file_hex(sp)}};
    if (sp.lexically_normal().string().rfind(root.lexically_normal().string(), 0) == 0) js["file"] = rel(sp, root);
    sources.push_back(js);
  }

  const std::string manifest_checksum = sha256_file_hex(manifest_path);
  p["manifest"] = {{"file", rel(manifest_path, root)}, {"sha256", manifest_checksum}};
  auto& chunks = p["chunks"] = nlohmann::ordered_json::array();
  for (const auto& c : manifest.chunks)
    chunks.push_back({{"index", c.index}, {"file", rel(data / c.file, root)}, {"sha256", c.sha256}});
  if (manifest.heldout)
    p["heldout"] = {{"file", rel(data / manifest.heldout->file, root)}, {"sha256", manifest.heldout->sha256}};

  auto& ckpts = p["checkpoints"] = nlohmann::ordered_json::array();
  for (const auto& path : registry::list_checkpoints(run / trainer::kCheckpointDir)) {
    registry::LoadOptions lo;
    lo.require_optimizer = false;
    registry::LoadReport report;
    const registry::Checkpoint ck = registry::load_checkpoint(path, lo, &report);
    if (ck.manifest_checksum != manifest_checksum)
      throw CheckpointError(path.string() + " was trained on a different manifest");
    const auto& trained = ck.run_state.at("trained");
    ckpts.push_back({{"index", ck.index},
                     {"file", rel(path, root)},
                     {"step", ck.step},
                     {"chunk", trained.empty() ? nlohmann::json(nullptr) : trained.back()},
                     {"content_hash", report.content_hash},
                     {"manifest_checksum", ck.manifest_checksum}});
  }

  const auto ledger = trainer::NanLedger::from_json(nlohmann::json::parse(read_text_file(run / trainer::kNanLedgerFile)));
  p["nan_chunks"] = ledger.failed_chunks();

  const fs::path metrics = run / registry::kMetricsFile;
  p["metrics"] = {{"ledger", rel(metrics, root)},
                  {"csv", rel(run / kMetricsCsv, root)},
                  {"records", registry::MetricsLedger(metrics).records().size()},
                  {"deterministic_sha256", deterministic_metrics_hash(metrics)},
                  {"note", "tokens_per_second and wall_time are excluded from the hash"}};

  // Every other file under the output root, with its hash.
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  auto& artifacts = p["artifacts"] = nlohmann::ordered_json::array();
  for (const auto& f : files) {
    const std::string r = rel(f, root);
    if (r == kProvenanceFile || f == metrics || f == run / kMetricsCsv) continue;
    artifacts.push_back({{"file", r}, {"sha256", sha256_file_hex(f)}});
  }
  return p;
}

DeskResult reproduce_desk(const RunConfig& config, const DeskOptions& options) {
  auto log = [&](const std::string& m) {
    if (options.log) options.log(m);
  };
  DeskResult result;
  result.output_root = config.output_root;
  const fs::path root = config.output_root;
  const fs::path data = root / kDataDir;
  const fs::path run = root / kRunDir;
  const fs::path manifest_path = data / corpus::kManifestFile;

  stage("config", kExitConfig, [&] {
    fs::create_directories(root);
    const std::string text = to_json(config).dump(2) + "\n";
    if (fs::exists(root / kConfigCopy) && read_text_file(root / kConfigCopy) != text)
      throw ConfigError(root.string() + " holds a run made with a different configuration");
    write_file_atomic(root / kConfigCopy, text);
  });

  stage("prepare", kExitPrepare, [&] {
    synthesize_sources(config);
    if (fs::exists(manifest_path)) {
      log("prepare: reusing " + manifest_path.string());
      return;
    }
    if (fs::exists(data)) fs::remove_all(data);
    // Sources inside the output root are recorded relative to data/, so the
    // manifest does not depend on where the run lives.
    corpus::CorpusConfig cc = config.corpus;
    cc.base_dir = data;
    for (auto& s : cc.sources) {
      const fs::path sp = (s.path.is_absolute() ? s.path : config.base_dir / s.path).lexically_normal();
      const fs::path r = sp.lexically_relative(root.lexically_normal());
      s.path = !r.empty() && *r.begin() != ".." ? fs::path("..") / r : sp;
    }
    const corpus::CorpusManifest m = corpus::prepare_corpus(cc, data);
    log("prepare: " + std::to_string(m.n_chunks) + " chunks, " + std::to_string(m.total_tokens) + " tokens");
  });

  stage("verify", kExitVerify, [&] {
    const corpus::CorpusManifest m = corpus::read_manifest(manifest_path);
    const corpus::VerificationReport v = corpus::verify_manifest(m, data);
    if (!v.ok) {
      std::string failed;
      for (auto i : v.failed_chunks()) failed += " " + std::to_string(i);
      for (const auto& e : v.extras)
        if (!e.ok) failed += " " + e.file;
      throw CorpusError("verification failed:" + failed);
    }
    if (!m.heldout) throw CorpusError("manifest has no held-out sequences");
    const corpus::ChunkData heldout = corpus::read_chunk_file(data / m.heldout->file);
    registry::check_heldout_disjoint(heldout, m, data);
  });

  stage("train", kExitTrain, [&] {
    trainer::TrainOptions to;
    to.deterministic = options.deterministic;
    to.threads = options.threads;
    to.faults = options.faults;
    to.log = options.log;
    const auto existing = registry::list_checkpoints(run / trainer::kCheckpointDir);
    std::optional<fs::path> resume;
    if (!existing.empty()) {
      resume = existing.back();
      registry::LoadOptions lo;
      lo.require_optimizer = false;
      const auto ck = registry::load_checkpoint(*resume, lo);
      const std::size_t dropped = registry::truncate_metrics_ledger(run / registry::kMetricsFile, ck.step);
      if (dropped) log("train: dropped " + std::to_string(dropped) + " metrics records past the last checkpoint");
      result.resumed = true;
    }
    trainer::run_training(config.train, manifest_path, run, to, resume);
    result.checkpoints = static_cast<std::uint32_t>(registry::list_checkpoints(run / trainer::kCheckpointDir).size());
  });

  stage("eval", kExitEval, [&] {
    const corpus::CorpusManifest m = corpus::read_manifest(manifest_path);
    write_eval_table(run, data / m.heldout->file, run / kEvalFile, options.threads, options.log);
  });

  stage("memorize", kExitMemorize, [&] {
    analysis::MemorizeOptions mo;
    mo.n_probes = config.analysis.n_probes;
    mo.k = config.analysis.k;
    mo.l = config.analysis.l;
    mo.seed = config.seeds.probes;
    mo.checkpoints = config.analysis.checkpoints;
    mo.evaluate_all = config.analysis.evaluate_all;
    mo.threads = options.threads;
    mo.log = options.log;
    analysis::run_memorization(run, mo);
  });

  stage("export", kExitExport, [&] { registry::export_metrics_csv(run / registry::kMetricsFile, run / kMetricsCsv); });

  stage("provenance", kExitProvenance, [&] {
    nlohmann::ordered_json p = build_provenance(config);
    p["fault_injection"] = {{"nan_loss_chunks", options.faults.nan_loss_chunks},
                            {"nonfinite_grad_chunks", options.faults.nonfinite_grad_chunks}};
    p["deterministic"] = options.deterministic;
    write_file_atomic(root / kProvenanceFile, p.dump(2) + "\n");
    result.provenance = root / kProvenanceFile;
  });
  return result;
}

}  // namespace provlm::cli
