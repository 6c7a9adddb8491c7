#include "provlm/trainer/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include "provlm/common/error.hpp"
#include "provlm/common/file_io.hpp"
#include "provlm/common/sha256.hpp"
#include "provlm/corpus/permute.hpp"
#include "provlm/corpus/tokenizer.hpp"
#include "provlm/registry/checkpoint.hpp"

namespace provlm::trainer {

namespace fs = std::filesystem;

TrainState initial_state(const TrainPlan& plan) {
  TrainState s;
  s.params = model::init_parameters<float>(plan.model, plan.init_seed);
  s.optimizer = OptimizerState<float>::zeros(s.params.values.size());
  s.rng = Xoshiro256(plan.train_seed);
  s.step = 0;
  return s;
}

namespace {

model::Batch slice_rows(const model::Batch& b, std::size_t r0, std::size_t r1) {
  model::Batch out;
  out.rows = r1 - r0;
  out.seq = b.seq;
  const auto first = static_cast<std::ptrdiff_t>(r0 * b.seq), last = static_cast<std::ptrdiff_t>(r1 * b.seq);
  out.inputs.assign(b.inputs.begin() + first, b.inputs.begin() + last);
  out.targets.assign(b.targets.begin() + first, b.targets.begin() + last);
  out.keep.assign(b.keep.begin() + first, b.keep.begin() + last);
  return out;
}

// Fast mode: rows split across workers, partial gradients summed in whatever
// order the workers finish, so results differ from run to run in the last bits.
double parallel_loss_and_grad(const model::Transformer<float>& net, std::span<const float> params,
                              const model::Batch& batch, std::span<float> grads, unsigned threads) {
  const std::size_t total = batch.counted_tokens();
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, batch.rows));
  std::mutex mu;
  double loss_sum = 0.0;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t r0 = batch.rows * w / workers, r1 = batch.rows * (w + 1) / workers;
    pool.emplace_back([&, r0, r1] {
      const model::Batch part = slice_rows(batch, r0, r1);
      if (part.counted_tokens() == 0) return;
      std::vector<float> local(grads.size(), 0.0f);
      const auto r = model::loss_and_grad(net, params, part, std::span<float>(local), total);
      std::lock_guard lock(mu);
      loss_sum += r.mean_nll * static_cast<double>(r.count);
      for (std::size_t i = 0; i < local.size(); ++i) grads[i] += local[i];
    });
  }
  for (auto& t : pool) t.join();
  return loss_sum / static_cast<double>(total);
}

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

}  // namespace

StepResult train_step(const model::Transformer<float>& net, TrainState& state, const model::Batch& batch,
                      const TrainPlan& plan, std::uint64_t total_steps, const TrainOptions& options,
                      std::optional<FailureKind> poison) {
  StepResult r;
  const std::uint64_t next = state.step + 1;
  TrainPlan schedule = plan;
  schedule.total_steps = total_steps;
  r.lr = lr_at(std::min(next, total_steps), schedule);
  r.tokens = batch.counted_tokens();

  std::vector<float> grads(state.params.values.size(), 0.0f);
  const std::span<const float> params(state.params.values);
  if (options.deterministic) {
    r.loss = model::loss_and_grad(net, params, batch, std::span<float>(grads)).mean_nll;
  } else {
    const unsigned threads = options.threads ? options.threads : std::max(2u, std::thread::hardware_concurrency());
    r.loss = parallel_loss_and_grad(net, params, batch, grads, threads);
  }

  if (poison == FailureKind::nan_loss) r.loss = std::numeric_limits<double>::quiet_NaN();
  if (poison == FailureKind::nonfinite_grad) grads[0] = std::numeric_limits<float>::infinity();
  if (!std::isfinite(r.loss)) {
    r.failure = FailureKind::nan_loss;
    return r;
  }
  const ClipResult clip = clip_gradients(std::span<float>(grads), plan.clip_norm);
  r.grad_norm_preclip = clip.pre_clip_norm;
  if (!clip.finite) {
    r.failure = FailureKind::nonfinite_grad;
    return r;
  }
  adamw_step(std::span<float>(state.params.values), std::span<const float>(grads), state.optimizer, r.lr, plan);
  state.step = next;
  return r;
}

std::uint64_t steps_per_chunk(std::uint64_t sequences, std::uint64_t batch_size) {
  return (sequences + batch_size - 1) / batch_size;
}

ChunkOutcome train_chunk(const model::Transformer<float>& net, const corpus::ChunkData& chunk,
                         std::uint32_t chunk_index, TrainState& state, const TrainPlan& plan,
                         std::uint64_t total_steps, const TrainOptions& options, std::uint32_t attempt) {
  const TrainState snapshot = state;
  ChunkOutcome out;
  out.chunk = chunk_index;

  const std::size_t n = chunk.sequence_count();
  const std::size_t bs = plan.batch_size_sequences;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto shuffle_with = [&](Xoshiro256& rng) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.bounded(i)]);
  };
  if (plan.shuffle_within_chunk) shuffle_with(state.rng);
  if (attempt > 0) {
    Xoshiro256 retry_rng(derive_seed(derive_seed(plan.train_seed, chunk_index), attempt));
    shuffle_with(retry_rng);
  }

  const std::size_t n_batches = steps_per_chunk(n, bs);
  std::optional<FailureKind> poison_kind;
  if (options.faults.nan_loss_chunks.contains(chunk_index))
    poison_kind = FailureKind::nan_loss;
  else if (options.faults.nonfinite_grad_chunks.contains(chunk_index))
    poison_kind = FailureKind::nonfinite_grad;
  const std::size_t poison_at = n_batches / 2;

  double loss_sum = 0.0;
  for (std::size_t b = 0; b < n_batches; ++b) {
    std::vector<std::span<const corpus::TokenId>> windows;
    for (std::size_t i = b * bs; i < std::min(n, (b + 1) * bs); ++i) windows.push_back(chunk.sequence(order[i]));
    const model::Batch batch = model::make_batch(windows);
    if (batch.counted_tokens() == 0) continue;

    const auto t0 = std::chrono::steady_clock::now();
    const std::optional<FailureKind> poison = (poison_kind && b == poison_at) ? poison_kind : std::nullopt;
    const StepResult r = train_step(net, state, batch, plan, total_steps, options, poison);
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (r.failure) {
      out.failure = NanEvent{chunk_index, state.step + 1, *r.failure, attempt};
      state = snapshot;
      out.metrics.clear();
      out.steps = 0;
      return out;
    }
    loss_sum += r.loss;
    ++out.steps;
    out.metrics.push_back(registry::MetricsRecord{state.step, chunk_index, r.loss, r.grad_norm_preclip, r.lr,
                                                  dt > 0 ? static_cast<double>(r.tokens) / dt : 0.0,
                                                  now_seconds()});
  }
  out.ok = true;
  out.mean_loss = out.steps ? loss_sum / static_cast<double>(out.steps) : 0.0;
  return out;
}

nlohmann::json RunState::to_json() const {
  nlohmann::ordered_json j;
  j["total_steps"] = total_steps;
  j["queue"] = std::vector<std::uint32_t>(queue.begin(), queue.end());
  j["trained"] = trained;
  j["trained_original"] = trained_original;
  j["skipped"] = skipped;
  j["substitutions_owed"] = substitutions_owed;
  j["completing"] = completing;
  j["used_as_substitute"] = std::vector<std::uint32_t>(used_as_substitute.begin(), used_as_substitute.end());
  j["nan_ledger"] = ledger.to_json();
  return j;
}

RunState RunState::from_json(const nlohmann::json& j) {
  RunState s;
  try {
    s.total_steps = j.at("total_steps").get<std::uint64_t>();
    for (auto c : j.at("queue")) s.queue.push_back(c.get<std::uint32_t>());
    s.trained = j.at("trained").get<std::vector<std::uint32_t>>();
    s.trained_original = j.at("trained_original").get<std::vector<std::uint32_t>>();
    s.skipped = j.at("skipped").get<std::vector<std::uint32_t>>();
    s.substitutions_owed = j.at("substitutions_owed").get<std::size_t>();
    s.completing = j.at("completing").get<bool>();
    for (auto c : j.at("used_as_substitute")) s.used_as_substitute.insert(c.get<std::uint32_t>());
    s.ledger = NanLedger::from_json(j.at("nan_ledger"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint has no usable run state: ") + e.what());
  }
  return s;
}

std::uint64_t planned_total_steps(const corpus::CorpusManifest& manifest, std::uint64_t batch_size) {
  std::uint64_t total = 0;
  for (const auto& c : manifest.chunks) total += steps_per_chunk(c.sequences, batch_size);
  return total;
}

RunResult run_training(const TrainPlan& plan, const fs::path& manifest_path, const fs::path& out_dir,
                       const TrainOptions& options, const std::optional<fs::path>& resume) {
  plan.validate();
  auto log = [&](const std::string& msg) {
    if (options.log) options.log(msg);
  };
  const corpus::CorpusManifest manifest = corpus::read_manifest(manifest_path);
  const fs::path chunk_dir = manifest_path.parent_path();
  const std::string manifest_checksum = sha256_file_hex(manifest_path);

  if (plan.model.vocab_size != corpus::kVocabSize)
    throw ConfigError("model.vocab_size must equal the tokenizer vocabulary (" +
                      std::to_string(corpus::kVocabSize) + ")");
  if (plan.model.max_seq_len + 1 < manifest.max_seq_len)
    throw ConfigError("model.max_seq_len is shorter than the corpus windows minus one");
  const corpus::VerificationReport verification = corpus::verify_manifest(manifest, chunk_dir);
  if (!verification.ok) {
    std::string failed;
    for (auto i : verification.failed_chunks()) failed += " " + std::to_string(i);
    throw CorpusError("manifest verification failed; bad chunks:" + failed);
  }

  const fs::path ckpt_dir = out_dir / kCheckpointDir;
  fs::create_directories(ckpt_dir);
  registry::MetricsLedger metrics(out_dir / registry::kMetricsFile);

  TrainState state;
  RunState rs;
  RunResult result;
  if (resume) {
    registry::LoadOptions lo;
    lo.expect_config = plan.model;
    lo.expect_manifest_checksum = manifest_checksum;
    lo.require_optimizer = true;
    registry::LoadReport report;
    registry::Checkpoint ck = registry::load_checkpoint(*resume, lo, &report);
    for (const auto& w : report.warnings) log(w);
    state.params = std::move(ck.params);
    state.optimizer = std::move(*ck.optimizer);
    state.rng = Xoshiro256::deserialize(ck.rng_state);
    state.step = ck.step;
    rs = RunState::from_json(ck.run_state);
    if (metrics.last_step() && *metrics.last_step() > state.step)
      throw ConfigError("metrics ledger in " + out_dir.string() + " already extends past step " +
                        std::to_string(state.step) + "; resume into a fresh directory");
    log("resumed from " + resume->string() + " at step " + std::to_string(state.step));
  } else {
    if (!metrics.records().empty() || !registry::list_checkpoints(ckpt_dir).empty())
      throw ConfigError(out_dir.string() + " already holds a run; pass --resume or use a fresh directory");
    state = initial_state(plan);
    rs.total_steps = plan.total_steps ? plan.total_steps : planned_total_steps(manifest, plan.batch_size_sequences);
    for (std::uint32_t i = 0; i < manifest.n_chunks; ++i) rs.queue.push_back(i);
    rs.ledger = NanLedger(plan.completion_policy);
  }
  if (plan.warmup_steps >= rs.total_steps)
    throw ConfigError("train.warmup_steps must be smaller than total_steps (" + std::to_string(rs.total_steps) + ")");

  {
    nlohmann::ordered_json run;
    run["plan"] = to_json(plan);
    run["manifest"] = fs::relative(fs::absolute(manifest_path), fs::absolute(out_dir)).generic_string();
    run["manifest_checksum"] = manifest_checksum;
    run["total_steps"] = rs.total_steps;
    run["deterministic"] = options.deterministic;
    write_file_atomic(out_dir / kRunFile, run.dump(2) + "\n");
  }

  auto save = [&](std::uint32_t index) {
    registry::Checkpoint ck;
    ck.index = index;
    ck.step = state.step;
    ck.params = state.params;
    if (plan.save_optimizer_state) ck.optimizer = state.optimizer;
    ck.rng_state = state.rng.serialize();
    ck.precision = plan.checkpoint_precision;
    ck.manifest_checksum = manifest_checksum;
    ck.run_state = rs.to_json();
    const fs::path p = registry::save_checkpoint(ck, ckpt_dir);
    result.checkpoints.push_back(p);
    result.final_checkpoint = p;
    return p;
  };
  auto write_ledger = [&] { write_file_atomic(out_dir / kNanLedgerFile, rs.ledger.to_json().dump(2) + "\n"); };

  if (!resume) save(0);
  write_ledger();

  const model::Transformer<float> net(plan.model);
  while (true) {
    if (rs.queue.empty()) {
      rs.completing = true;
      if (plan.completion_policy != CompletionPolicy::first_successful || rs.substitutions_owed == 0) break;
      auto it = std::find_if(rs.trained_original.begin(), rs.trained_original.end(),
                             [&](std::uint32_t c) { return !rs.used_as_substitute.contains(c); });
      if (it == rs.trained_original.end()) {
        log("completion policy: no unused chunk left to substitute");
        break;
      }
      const std::uint32_t skipped = rs.skipped[rs.ledger.substitutions().size()];
      rs.ledger.record(Substitution{skipped, *it});
      rs.used_as_substitute.insert(*it);
      rs.queue.push_back(*it);
      --rs.substitutions_owed;
      log("substituting chunk " + std::to_string(*it) + " for skipped chunk " + std::to_string(skipped));
      continue;
    }

    const std::uint32_t c = rs.queue.front();
    const corpus::ChunkData data = corpus::read_chunk_file(chunk_dir / manifest.chunk(c).file);
    ChunkOutcome outcome;
    for (std::uint32_t attempt = 0; attempt <= plan.nan_retries; ++attempt) {
      outcome = train_chunk(net, data, c, state, plan, rs.total_steps, options, attempt);
      if (outcome.ok) break;
      rs.ledger.record(*outcome.failure);
      log("chunk " + std::to_string(c) + ": " + to_string(outcome.failure->kind) + " at step " +
          std::to_string(outcome.failure->step) + " (attempt " + std::to_string(attempt) + ")");
    }
    rs.queue.pop_front();
    // Substitutes are only drawn from chunks that succeeded in the original pass.
    const bool original = !rs.completing;
    if (outcome.ok) {
      metrics.append(outcome.metrics);
      rs.trained.push_back(c);
      if (original) rs.trained_original.push_back(c);
      const auto index = static_cast<std::uint32_t>(rs.trained.size());
      const fs::path p = save(index);
      log("chunk " + std::to_string(c) + " -> " + p.filename().string() + " step " + std::to_string(state.step) +
          " loss " + std::to_string(outcome.mean_loss));
      write_ledger();
      if (options.stop_after_checkpoint && index >= *options.stop_after_checkpoint) {
        result.stopped_early = !rs.queue.empty() || rs.substitutions_owed > 0;
        break;
      }
    } else {
      rs.skipped.push_back(c);
      if (plan.completion_policy == CompletionPolicy::first_successful) ++rs.substitutions_owed;
      write_ledger();
    }
  }
  if (result.final_checkpoint.empty()) {
    const auto all = registry::list_checkpoints(ckpt_dir);
    if (!all.empty()) result.final_checkpoint = all.back();
  }
  result.run_state = rs;
  return result;
}

}  // namespace provlm::trainer
