// provlm: command-line entry point for the data, training and analysis pipeline.

#include <cstdio>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "provlm/analysis/report.hpp"
#include "provlm/cli/pipeline.hpp"
#include "provlm/cli/run_config.hpp"
#include "provlm/common/error.hpp"
#include "provlm/common/file_io.hpp"
#include "provlm/common/sha256.hpp"
#include "provlm/corpus/chunk_file.hpp"
#include "provlm/corpus/prepare.hpp"
#include "provlm/corpus/synthetic.hpp"
#include "provlm/registry/checkpoint.hpp"
#include "provlm/registry/metrics.hpp"
#include "provlm/registry/perplexity.hpp"
#include "provlm/trainer/trainer.hpp"

namespace fs = std::filesystem;
using namespace provlm;
using cli::StageError;

namespace {

bool g_quiet = false;

void log_line(const std::string& m) {
  if (!g_quiet) std::cerr << m << std::endl;
}

int report_error(bool json_errors, const std::string& stage, int code, const std::string& message,
                 const std::vector<cli::ConfigIssue>& issues = {}) {
  if (json_errors) {
    nlohmann::ordered_json j;
    j["stage"] = stage;
    j["code"] = code;
    j["message"] = message;
    if (!issues.empty()) {
      j["issues"] = nlohmann::ordered_json::array();
      for (const auto& i : issues) j["issues"].push_back({{"key", i.key}, {"message", i.message}});
    }
    std::cerr << nlohmann::ordered_json{{"error", j}}.dump() << std::endl;
  } else {
    std::cerr << "error [" << stage << "]: " << message << std::endl;
  }
  return code;
}

trainer::FaultInjection faults_from(const std::vector<std::uint32_t>& nan, const std::vector<std::uint32_t>& grad) {
  trainer::FaultInjection f;
  f.nan_loss_chunks.insert(nan.begin(), nan.end());
  f.nonfinite_grad_chunks.insert(grad.begin(), grad.end());
  return f;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Provenance-tracked toy LLM pretraining and memorization analysis"};
  app.require_subcommand(1);
  bool json_errors = false;
  app.add_flag("--json-errors", json_errors, "Print errors as one JSON object on stderr");
  app.add_flag("-q,--quiet", g_quiet, "Suppress progress logging");

  // prepare-data
  auto* prep = app.add_subcommand("prepare-data", "Tokenize, pack, permute and partition sources into chunks");
  std::string prep_sources, prep_out;
  std::optional<std::uint64_t> prep_seed;
  std::optional<std::uint32_t> prep_chunks, prep_len;
  prep->add_option("--sources", prep_sources, "Sources document (JSON)")->required()->check(CLI::ExistingFile);
  prep->add_option("--seed", prep_seed, "Permutation seed (overrides the document)");
  prep->add_option("--chunks", prep_chunks, "Number of chunks (overrides the document)");
  prep->add_option("--max-seq-len", prep_len, "Sequence length (overrides the document)");
  prep->add_option("--out", prep_out, "Output directory")->required();

  // verify-data
  auto* ver = app.add_subcommand("verify-data", "Recompute chunk checksums against a manifest");
  std::string ver_manifest;
  ver->add_option("--manifest", ver_manifest, "manifest.json path")->required()->check(CLI::ExistingFile);

  // train
  auto* tr = app.add_subcommand("train", "Train over the manifest's chunks, one checkpoint per chunk");
  std::string tr_manifest, tr_plan, tr_out, tr_resume;
  bool tr_fast = false;
  bool tr_det = false;
  unsigned tr_threads = 0;
  std::vector<std::uint32_t> tr_nan, tr_grad;
  std::optional<std::uint32_t> tr_stop;
  tr->add_option("--manifest", tr_manifest, "manifest.json path")->required()->check(CLI::ExistingFile);
  tr->add_option("--plan", tr_plan, "Training plan (JSON, includes the model config)")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "Run directory")->required();
  tr->add_option("--resume", tr_resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  auto* det_flag = tr->add_flag("--deterministic", tr_det, "Fixed reduction order (default)");
  tr->add_flag("--fast", tr_fast, "Multi-threaded, reduction order not fixed")->excludes(det_flag);
  tr->add_option("--threads", tr_threads, "Worker threads in fast mode (0: hardware)");
  tr->add_option("--inject-nan-chunk", tr_nan, "Test hook: force a NaN loss in this chunk (repeatable)");
  tr->add_option("--inject-grad-chunk", tr_grad, "Test hook: force a non-finite gradient in this chunk (repeatable)");
  tr->add_option("--stop-after", tr_stop, "Stop once this checkpoint index is written");

  // eval
  auto* ev = app.add_subcommand("eval", "Held-out perplexity of one checkpoint");
  std::string ev_ckpt, ev_heldout, ev_manifest;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--heldout", ev_heldout, "Held-out chunk file (e.g. heldout.bin)")->required()->check(CLI::ExistingFile);
  ev->add_option("--manifest", ev_manifest, "Also check the held-out set is disjoint from this manifest's chunks")
      ->check(CLI::ExistingFile);

  // memorize
  auto* mem = app.add_subcommand("memorize", "Memorization scores over a run's checkpoints");
  std::string mem_run;
  analysis::MemorizeOptions mo;
  mem->add_option("--run", mem_run, "Run directory")->required()->check(CLI::ExistingDirectory);
  mem->add_option("--n-probes", mo.n_probes, "Probes per chunk")->capture_default_str();
  mem->add_option("--k", mo.k, "Prompt length")->capture_default_str();
  mem->add_option("--l", mo.l, "Continuation length")->capture_default_str();
  mem->add_option("--seed", mo.seed, "Probe sampling seed")->capture_default_str();
  mem->add_option("--checkpoints", mo.checkpoints, "autoN, all, or a comma list of indices")->capture_default_str();
  mem->add_flag("--evaluate-all", mo.evaluate_all, "Score every checkpoint, not only the selected ones");
  mem->add_option("--threads", mo.threads, "Parallel checkpoint evaluations (0: hardware)");

  // export-metrics
  auto* ex = app.add_subcommand("export-metrics", "Write a run's metrics ledger as CSV");
  std::string ex_run, ex_csv;
  ex->add_option("--run", ex_run, "Run directory")->required()->check(CLI::ExistingDirectory);
  ex->add_option("--csv", ex_csv, "Output CSV path")->required();

  // reproduce-desk
  auto* rd = app.add_subcommand("reproduce-desk", "Run prepare, train, eval, memorize and report end to end");
  std::string rd_config, rd_out;
  bool rd_fast = false;
  unsigned rd_threads = 0;
  std::vector<std::uint32_t> rd_nan, rd_grad;
  rd->add_option("--config", rd_config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  rd->add_option("--out", rd_out, "Override output_root");
  rd->add_flag("--fast", rd_fast, "Multi-threaded training, not bit-reproducible");
  rd->add_option("--threads", rd_threads, "Worker threads (0: hardware)");
  rd->add_option("--inject-nan-chunk", rd_nan, "Test hook: force a NaN loss in this chunk (repeatable)");
  rd->add_option("--inject-grad-chunk", rd_grad, "Test hook: force a non-finite gradient in this chunk (repeatable)");

  // validate-config
  auto* vc = app.add_subcommand("validate-config", "Check a run configuration without running it");
  std::string vc_config;
  vc->add_option("--config", vc_config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);

  // synth-corpus
  auto* sy = app.add_subcommand("synth-corpus", "Write a synthetic Markov byte corpus (binary source format)");
  std::string sy_out;
  corpus::MarkovSourceSpec ms;
  sy->add_option("--out", sy_out, "Output file")->required();
  sy->add_option("--tokens", ms.tokens, "Total bytes to generate")->required();
  sy->add_option("--seed", ms.seed, "Generator seed")->capture_default_str();
  sy->add_option("--branch-probs", ms.branch_probs, "Transition mixture weights")->delimiter(',')->capture_default_str();
  sy->add_option("--doc-min", ms.doc_min, "Minimum document length")->capture_default_str();
  sy->add_option("--doc-max", ms.doc_max, "Maximum document length")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return report_error(json_errors, "usage", cli::kExitUsage, e.what());
  }

  std::string stage = "internal";
  int code = cli::kExitInternal;
  auto enter = [&](std::string s, int c) {
    stage = std::move(s);
    code = c;
  };
  try {
    if (*prep) {
      enter("prepare", cli::kExitPrepare);
      const fs::path src = prep_sources;
      corpus::CorpusConfig cfg =
          corpus::corpus_config_from_json(nlohmann::json::parse(read_text_file(src)), fs::absolute(src).parent_path());
      if (prep_seed) cfg.seed = *prep_seed;
      if (prep_chunks) cfg.n_chunks = *prep_chunks;
      if (prep_len) cfg.max_seq_len = *prep_len;
      const auto m = corpus::prepare_corpus(cfg, prep_out);
      std::cout << nlohmann::ordered_json{{"manifest", (fs::path(prep_out) / corpus::kManifestFile).string()},
                                          {"sha256", sha256_file_hex(fs::path(prep_out) / corpus::kManifestFile)},
                                          {"chunks", m.n_chunks},
                                          {"total_tokens", m.total_tokens}}
                       .dump(2)
                << std::endl;
    } else if (*ver) {
      enter("verify", cli::kExitVerify);
      const auto m = corpus::read_manifest(ver_manifest);
      const auto report = corpus::verify_manifest(m, fs::path(ver_manifest).parent_path());
      std::cout << corpus::to_json(report).dump(2) << std::endl;
      if (!report.ok) {
        std::string failed;
        for (auto i : report.failed_chunks()) failed += " " + std::to_string(i);
        return report_error(json_errors, stage, code, "verification failed; bad chunks:" + failed);
      }
    } else if (*tr) {
      enter("train", cli::kExitTrain);
      const trainer::TrainPlan plan = trainer::train_plan_from_json(nlohmann::json::parse(read_text_file(tr_plan)));
      plan.validate();
      trainer::TrainOptions to;
      to.deterministic = !tr_fast;
      to.threads = tr_threads;
      to.faults = faults_from(tr_nan, tr_grad);
      to.stop_after_checkpoint = tr_stop;
      to.log = log_line;
      std::optional<fs::path> resume;
      if (!tr_resume.empty()) resume = tr_resume;
      const auto r = trainer::run_training(plan, tr_manifest, tr_out, to, resume);
      std::cout << nlohmann::ordered_json{{"final_checkpoint", r.final_checkpoint.string()},
                                          {"checkpoints_written", r.checkpoints.size()},
                                          {"trained", r.run_state.trained},
                                          {"skipped", r.run_state.skipped},
                                          {"stopped_early", r.stopped_early}}
                       .dump(2)
                << std::endl;
    } else if (*ev) {
      enter("eval", cli::kExitEval);
      registry::LoadOptions lo;
      lo.require_optimizer = false;
      registry::LoadReport lr;
      const auto ck = registry::load_checkpoint(ev_ckpt, lo, &lr);
      for (const auto& w : lr.warnings) log_line(w);
      const auto heldout = corpus::read_chunk_file(ev_heldout);
      if (!ev_manifest.empty()) {
        const auto m = corpus::read_manifest(ev_manifest);
        registry::check_heldout_disjoint(heldout, m, fs::path(ev_manifest).parent_path());
      }
      const auto r = registry::eval_perplexity(ck.params, heldout);
      std::cout << nlohmann::ordered_json{{"checkpoint", ck.index},
                                          {"step", ck.step},
                                          {"perplexity", r.perplexity},
                                          {"mean_nll", r.mean_nll},
                                          {"tokens", r.tokens}}
                       .dump(2)
                << std::endl;
    } else if (*mem) {
      enter("memorize", cli::kExitMemorize);
      mo.log = log_line;
      const auto rep = analysis::run_memorization(mem_run, mo);
      std::cout << analysis::summary_json(rep).dump(2) << std::endl;
    } else if (*ex) {
      enter("export", cli::kExitExport);
      registry::export_metrics_csv(fs::path(ex_run) / registry::kMetricsFile, ex_csv);
    } else if (*rd) {
      enter("config", cli::kExitConfig);
      cli::RunConfig cfg = cli::load_run_config(rd_config);
      if (!rd_out.empty()) {
        cfg = cli::validate_config(
            [&] {
              auto doc = nlohmann::json::parse(read_text_file(rd_config));
              doc["output_root"] = fs::absolute(rd_out).string();
              return doc;
            }(),
            fs::absolute(rd_config).parent_path());
      }
      cli::DeskOptions opt;
      opt.deterministic = !rd_fast;
      opt.threads = rd_threads;
      opt.faults = faults_from(rd_nan, rd_grad);
      opt.log = log_line;
      const auto r = cli::reproduce_desk(cfg, opt);
      std::cout << nlohmann::ordered_json{{"output_root", r.output_root.string()},
                                          {"provenance", r.provenance.string()},
                                          {"checkpoints", r.checkpoints},
                                          {"resumed", r.resumed}}
                       .dump(2)
                << std::endl;
    } else if (*vc) {
      enter("config", cli::kExitConfig);
      const auto cfg = cli::load_run_config(vc_config);
      std::cout << cli::to_json(cfg).dump(2) << std::endl;
    } else if (*sy) {
      enter("synth", cli::kExitPrepare);
      if (fs::path(sy_out).has_parent_path()) fs::create_directories(fs::path(sy_out).parent_path());
      corpus::write_binary_documents(sy_out, corpus::generate_markov_documents(ms));
    }
  } catch (const cli::ConfigValidationError& e) {
    return report_error(json_errors, "config", cli::kExitConfig, e.what(), e.issues());
  } catch (const StageError& e) {
    return report_error(json_errors, e.stage(), e.code(), e.what());
  } catch (const ConfigError& e) {
    return report_error(json_errors, stage == "internal" ? "config" : stage,
                        stage == "internal" ? cli::kExitConfig : code, e.what());
  } catch (const std::exception& e) {
    return report_error(json_errors, stage, code, e.what());
  }
  return cli::kExitOk;
}
