#include <gtest/gtest.h>

#include <cmath>

#include "provlm/common/error.hpp"
#include "provlm/common/rng.hpp"
#include "provlm/common/file_io.hpp"
#include "provlm/common/sha256.hpp"
#include "provlm/corpus/prepare.hpp"
#include "provlm/corpus/synthetic.hpp"
#include "provlm/model/generate.hpp"
#include "provlm/registry/checkpoint.hpp"
#include "provlm/trainer/optimizer.hpp"
#include "provlm/trainer/plan.hpp"
#include "provlm/trainer/trainer.hpp"
#include "test_util.hpp"

using namespace provlm;
using namespace provlm::trainer;
namespace fs = std::filesystem;
using provlm::testing::TempDir;

namespace {

TrainPlan reference_schedule() {
  TrainPlan p;
  p.peak_lr = 3e-4;
  p.final_lr = 3e-5;
  p.warmup_steps = 2000;
  p.total_steps = 10000;
  return p;
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

model::ModelConfig micro_config() {
  model::ModelConfig c;
  c.hidden_size = 32;
  c.n_layers = 1;
  c.n_heads = 2;
  c.intermediate_size = 64;
  c.max_seq_len = 32;
  return c;
}

TrainPlan micro_plan() {
  TrainPlan p;
  p.model = micro_config();
  p.init_seed = 5;
  p.train_seed = 6;
  p.peak_lr = 3e-3;
  p.final_lr = 3e-4;
  p.warmup_steps = 4;
  p.batch_size_sequences = 8;
  return p;
}

// Writes a 6-chunk corpus with 32-token windows and returns the manifest path.
fs::path micro_corpus(const fs::path& dir, std::uint32_t chunks = 6) {
  corpus::MarkovSourceSpec s;
  s.tokens = 12000;
  s.seed = 9;
  s.doc_min = 50;
  s.doc_max = 300;
  corpus::write_binary_documents(dir / "src.bin", corpus::generate_markov_documents(s));
  corpus::CorpusConfig c;
  c.seed = 3;
  c.n_chunks = chunks;
  c.max_seq_len = 33;
  c.heldout_sequences = 4;
  c.base_dir = dir;
  c.sources = {{"markov", "src.bin", 12000, corpus::SourceFormat::binary}};
  corpus::prepare_corpus(c, dir / "data");
  return dir / "data" / corpus::kManifestFile;
}

}  // namespace

TEST(Schedule, ClosedFormValues) {
  const TrainPlan p = reference_schedule();
  EXPECT_LE(rel(lr_at(2000, p), 3e-4), 1e-12);
  EXPECT_LE(rel(lr_at(10000, p), 3e-5), 1e-12);
  EXPECT_LE(rel(lr_at(6000, p), 1.65e-4), 1e-12);
  EXPECT_EQ(lr_at(0, p), 0.0);
  EXPECT_LE(rel(lr_at(1000, p), 1.5e-4), 1e-12);
  EXPECT_THROW(lr_at(10001, p), std::out_of_range);
}

TEST(Schedule, ContinuousPeakedMonotone) {
  const TrainPlan p = reference_schedule();
  double prev = lr_at(0, p), peak = 0;
  std::uint64_t argmax = 0;
  for (std::uint64_t s = 1; s <= p.total_steps; ++s) {
    const double v = lr_at(s, p);
    ASSERT_LE(std::abs(v - prev), p.peak_lr / 1000.0 + 1e-15) << s;  // no jumps
    if (s > p.warmup_steps) ASSERT_LE(v, prev + 1e-18) << s;
    if (v > peak) {
      peak = v;
      argmax = s;
    }
    prev = v;
  }
  EXPECT_EQ(argmax, p.warmup_steps);
}

TEST(Plan, ValidationNamesKeys) {
  TrainPlan p = reference_schedule();
  p.warmup_steps = 10000;
  try {
    p.validate();
    FAIL();
  } catch (const ConfigError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("warmup_steps"), std::string::npos);
    EXPECT_NE(m.find("total_steps"), std::string::npos);
  }
  p = reference_schedule();
  p.final_lr = 1e-3;
  EXPECT_THROW(p.validate(), ConfigError);
  p = reference_schedule();
  p.clip_norm = 0;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Plan, JsonRoundTrip) {
  TrainPlan p = micro_plan();
  p.nan_retries = 2;
  p.checkpoint_precision = CheckpointPrecision::half;
  p.completion_policy = CompletionPolicy::none;
  const TrainPlan q = train_plan_from_json(nlohmann::json::parse(to_json(p).dump()));
  EXPECT_EQ(to_json(q).dump(), to_json(p).dump());
  EXPECT_THROW(train_plan_from_json(nlohmann::json{{"completion_policy", "last"}}), ConfigError);
}

TEST(Clip, BelowThresholdUnchanged) {
  std::vector<double> g{0.3, 0.4};  // norm 0.5
  const auto r = clip_gradients(std::span<double>(g), 1.0);
  EXPECT_DOUBLE_EQ(r.pre_clip_norm, 0.5);
  EXPECT_FALSE(r.clipped);
  EXPECT_EQ(g, (std::vector<double>{0.3, 0.4}));
}

TEST(Clip, AboveThresholdScaled) {
  std::vector<double> g{1.2, 1.6};  // norm 2
  const auto r = clip_gradients(std::span<double>(g), 1.0);
  EXPECT_DOUBLE_EQ(r.pre_clip_norm, 2.0);
  EXPECT_NEAR(g[0], 0.6, 1e-15);
  EXPECT_NEAR(g[1], 0.8, 1e-15);
  EXPECT_NEAR(global_norm(std::span<const double>(g)), 1.0, 1e-15);
}

TEST(Clip, RandomPostNormIsMinOfPreAndClip) {
  Xoshiro256 rng(12);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> g(1 + rng.bounded(500));
    const double scale = std::exp(rng.uniform() * 8 - 5);
    for (double& x : g) x = rng.normal() * scale;
    double pre = 0;
    for (double x : g) pre += x * x;
    pre = std::sqrt(pre);
    const auto r = clip_gradients(std::span<double>(g), 1.0);
    EXPECT_NEAR(r.pre_clip_norm, pre, 1e-12 * pre);
    double post = 0;
    for (double x : g) post += x * x;
    post = std::sqrt(post);
    ASSERT_NEAR(post, std::min(pre, 1.0), 1e-9);
    ASSERT_LE(post, 1.0 + 1e-9);
  }
}

TEST(Clip, NonFiniteNormSignalled) {
  std::vector<float> g{1.0f, std::numeric_limits<float>::quiet_NaN()};
  const auto r = clip_gradients(std::span<float>(g), 1.0);
  EXPECT_FALSE(r.finite);
  EXPECT_EQ(g[0], 1.0f);
}

TEST(AdamW, ZeroGradNoDecayIsIdentity) {
  TrainPlan p;
  p.weight_decay = 0.0;
  std::vector<double> w{1.0, -2.0, 3.0};
  const std::vector<double> g(3, 0.0);
  auto st = OptimizerState<double>::zeros(3);
  adamw_step(std::span<double>(w), std::span<const double>(g), st, 1e-3, p);
  EXPECT_EQ(w, (std::vector<double>{1.0, -2.0, 3.0}));
  EXPECT_EQ(st.t, 1u);
}

TEST(AdamW, ZeroGradDecoupledDecay) {
  TrainPlan p;
  p.weight_decay = 0.1;
  std::vector<double> w{1.0, -2.0, 3.0};
  const std::vector<double> g(3, 0.0);
  auto st = OptimizerState<double>::zeros(3);
  const double lr = 1e-2;
  adamw_step(std::span<double>(w), std::span<const double>(g), st, lr, p);
  EXPECT_DOUBLE_EQ(w[0], 1.0 * (1 - lr * 0.1));
  EXPECT_DOUBLE_EQ(w[1], -2.0 * (1 - lr * 0.1));
}

TEST(AdamW, FirstStepIsSignOfGradient) {
  TrainPlan p;
  p.weight_decay = 0.0;
  p.eps = 1e-12;
  std::vector<double> w{0.5, 0.5, 0.5};
  const std::vector<double> g{0.3, -7.0, 1e-3};
  auto st = OptimizerState<double>::zeros(3);
  const double lr = 1e-3;
  adamw_step(std::span<double>(w), std::span<const double>(g), st, lr, p);
  // m_hat = g and v_hat = g^2 after one step, so the update is lr * sign(g).
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(w[i] - 0.5, -lr * (g[i] > 0 ? 1 : -1), 1e-12);
}

TEST(AdamW, MatchesScalarReferenceOverSteps) {
  TrainPlan p;
  Xoshiro256 rng(8);
  const std::size_t n = 16;
  std::vector<double> w(n), wr(n), m(n), v(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = wr[i] = rng.normal();
  auto st = OptimizerState<double>::zeros(n);
  for (int t = 1; t <= 25; ++t) {
    std::vector<double> g(n);
    for (double& x : g) x = rng.normal();
    const double lr = 1e-3 * t;
    adamw_step(std::span<double>(w), std::span<const double>(g), st, lr, p);
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.95 * v[i] + 0.05 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.95, t));
      wr[i] -= lr * (mh / (std::sqrt(vh) + 1e-8) + 0.1 * wr[i]);
    }
  }
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(w[i], wr[i], 1e-12);
  EXPECT_EQ(st.t, 25u);
}

TEST(AdamW, NonFiniteGradientRejectedWithoutSideEffects) {
  TrainPlan p;
  std::vector<float> w{1.0f, 2.0f};
  const std::vector<float> g{0.1f, std::numeric_limits<float>::infinity()};
  auto st = OptimizerState<float>::zeros(2);
  EXPECT_THROW(adamw_step(std::span<float>(w), std::span<const float>(g), st, 1e-3, p), NumericalError);
  EXPECT_EQ(w, (std::vector<float>{1.0f, 2.0f}));
  EXPECT_EQ(st.t, 0u);
}

TEST(TrainStep, LossStrictlyDecreasesOnFixedData) {
  TrainPlan plan;
  plan.model = model::toy_config();
  plan.init_seed = 1;
  plan.peak_lr = 1e-3;
  plan.final_lr = 1e-4;
  plan.warmup_steps = 10;
  const std::uint64_t total = 1000;
  TrainState st = initial_state(plan);
  const model::Transformer<float> net(plan.model);

  Xoshiro256 rng(2);
  std::vector<std::vector<corpus::TokenId>> rows(4, std::vector<corpus::TokenId>(65));
  for (auto& r : rows)
    for (auto& t : r) t = static_cast<corpus::TokenId>(rng.bounded(256));
  std::vector<std::span<const corpus::TokenId>> windows(rows.begin(), rows.end());
  const model::Batch batch = model::make_batch(windows);

  double prev = std::numeric_limits<double>::infinity();
  for (int s = 0; s < 51; ++s) {
    const StepResult r = train_step(net, st, batch, plan, total);
    ASSERT_FALSE(r.failure);
    if (s > 1) ASSERT_LT(r.loss, prev) << "step " << s;  // step 1 runs at lr 0
    prev = r.loss;
  }
  EXPECT_EQ(st.step, 51u);
}

TEST(TrainStep, OverfitSingleSequenceIsReproduced) {
  TrainPlan plan;
  plan.model = model::toy_config();
  plan.init_seed = 4;
  plan.peak_lr = 3e-3;
  plan.final_lr = 3e-3;
  plan.warmup_steps = 5;
  plan.weight_decay = 0.0;
  TrainState st = initial_state(plan);
  const model::Transformer<float> net(plan.model);
  Xoshiro256 rng(17);
  std::vector<corpus::TokenId> seq(64);
  for (auto& t : seq) t = static_cast<corpus::TokenId>(rng.bounded(256));
  const std::vector<std::span<const corpus::TokenId>> windows{seq};
  const model::Batch batch = model::make_batch(windows);
  for (int s = 0; s < 300; ++s) ASSERT_FALSE(train_step(net, st, batch, plan, 1000).failure);

  const auto gen = model::generate_greedy(net, std::span<const float>(st.params.values),
                                          std::span(seq).first(32), 32);
  EXPECT_TRUE(std::equal(gen.begin(), gen.end(), seq.begin() + 32));
}

TEST(TrainChunk, PoisonedChunkRestoresEntryState) {
  TempDir dir;
  const fs::path manifest = micro_corpus(dir.path());
  const auto m = corpus::read_manifest(manifest);
  const auto data = corpus::read_chunk_file(manifest.parent_path() / m.chunk(0).file);
  const TrainPlan plan = micro_plan();
  const model::Transformer<float> net(plan.model);
  TrainState st = initial_state(plan);
  const TrainState before = st;

  TrainOptions opts;
  opts.faults.nan_loss_chunks = {0};
  const ChunkOutcome bad = train_chunk(net, data, 0, st, plan, 100, opts);
  EXPECT_FALSE(bad.ok);
  ASSERT_TRUE(bad.failure);
  EXPECT_EQ(bad.failure->kind, FailureKind::nan_loss);
  EXPECT_TRUE(bad.metrics.empty());
  EXPECT_EQ(st.params.values, before.params.values);
  EXPECT_EQ(st.optimizer, before.optimizer);
  EXPECT_EQ(st.rng.serialize(), before.rng.serialize());
  EXPECT_EQ(st.step, 0u);

  opts.faults = {};
  opts.faults.nonfinite_grad_chunks = {0};
  const ChunkOutcome bad2 = train_chunk(net, data, 0, st, plan, 100, opts);
  ASSERT_TRUE(bad2.failure);
  EXPECT_EQ(bad2.failure->kind, FailureKind::nonfinite_grad);
  EXPECT_EQ(st.params.values, before.params.values);

  const ChunkOutcome good = train_chunk(net, data, 0, st, plan, 100);
  EXPECT_TRUE(good.ok);
  EXPECT_EQ(good.steps, steps_per_chunk(data.sequence_count(), plan.batch_size_sequences));
  EXPECT_EQ(st.step, good.steps);
  EXPECT_EQ(good.metrics.size(), good.steps);
}

TEST(RunTraining, CadenceAndLedgers) {
  TempDir dir;
  const fs::path manifest = micro_corpus(dir.path());
  const RunResult r = run_training(micro_plan(), manifest, dir / "run");
  const auto ckpts = registry::list_checkpoints(dir / "run" / kCheckpointDir);
  EXPECT_EQ(ckpts.size(), 7u);  // initial + one per chunk
  EXPECT_EQ(r.checkpoints.size(), 7u);
  EXPECT_TRUE(r.run_state.ledger.events().empty());
  EXPECT_EQ(r.run_state.trained, (std::vector<std::uint32_t>{0, 1, 2, 3, 4, 5}));
  const registry::MetricsLedger ledger(dir / "run" / registry::kMetricsFile);
  EXPECT_EQ(ledger.records().size(), r.run_state.total_steps);
  const auto last = registry::load_checkpoint(ckpts.back());
  EXPECT_EQ(last.step, r.run_state.total_steps);
  EXPECT_EQ(last.manifest_checksum, sha256_file_hex(manifest));
  EXPECT_THROW(run_training(micro_plan(), manifest, dir / "run"), ConfigError);  // refuses to clobber
}

TEST(RunTraining, ResumeIsBitIdentical) {
  TempDir dir;
  const fs::path manifest = micro_corpus(dir.path());
  const TrainPlan plan = micro_plan();
  const RunResult full = run_training(plan, manifest, dir / "full");
  const std::string want = registry::checkpoint_hash(full.final_checkpoint);

  TrainOptions stop;
  stop.stop_after_checkpoint = 2;
  const RunResult part = run_training(plan, manifest, dir / "part", stop);
  EXPECT_TRUE(part.stopped_early);
  EXPECT_EQ(registry::checkpoint_hash(part.final_checkpoint),
            registry::checkpoint_hash(dir / "full" / kCheckpointDir / registry::checkpoint_file_name(2)));
  const RunResult resumed = run_training(plan, manifest, dir / "resumed", {}, part.final_checkpoint);
  EXPECT_EQ(registry::checkpoint_hash(resumed.final_checkpoint), want);
  EXPECT_EQ(resumed.final_checkpoint.filename(), full.final_checkpoint.filename());
}

TEST(RunTraining, InjectedNanChunksAreSkippedAndSubstituted) {
  TempDir dir;
  const fs::path manifest = micro_corpus(dir.path());
  TrainOptions opts;
  opts.faults.nan_loss_chunks = {1, 4};
  const RunResult r = run_training(micro_plan(), manifest, dir / "run", opts);
  EXPECT_EQ(r.run_state.ledger.failed_chunks(), (std::vector<std::uint32_t>{1, 4}));
  EXPECT_EQ(r.run_state.ledger.events().size(), 2u);
  const auto& subs = r.run_state.ledger.substitutions();
  ASSERT_EQ(subs.size(), 2u);
  EXPECT_EQ(subs[0], (Substitution{1, 0}));
  EXPECT_EQ(subs[1], (Substitution{4, 2}));
  EXPECT_EQ(r.run_state.trained, (std::vector<std::uint32_t>{0, 2, 3, 5, 0, 2}));
  EXPECT_EQ(registry::list_checkpoints(dir / "run" / kCheckpointDir).size(), 7u);

  const registry::MetricsLedger ledger(dir / "run" / registry::kMetricsFile);
  for (const auto& rec : ledger.records()) {
    EXPECT_NE(rec.chunk, 1u);
    EXPECT_NE(rec.chunk, 4u);
  }
  const auto saved = nlohmann::json::parse(read_text_file(dir / "run" / kNanLedgerFile));
  EXPECT_EQ(NanLedger::from_json(saved).events(), r.run_state.ledger.events());
}

TEST(RunTraining, RetriesAreRecordedPerAttempt) {
  TempDir dir;
  const fs::path manifest = micro_corpus(dir.path(), 3);
  TrainPlan plan = micro_plan();
  plan.nan_retries = 2;
  plan.completion_policy = CompletionPolicy::none;
  TrainOptions opts;
  opts.faults.nan_loss_chunks = {1};
  const RunResult r = run_training(plan, manifest, dir / "run", opts);
  ASSERT_EQ(r.run_state.ledger.events().size(), 3u);
  for (std::uint32_t a = 0; a < 3; ++a) EXPECT_EQ(r.run_state.ledger.events()[a].attempt, a);
  EXPECT_TRUE(r.run_state.ledger.substitutions().empty());
  EXPECT_EQ(r.run_state.trained, (std::vector<std::uint32_t>{0, 2}));
}

TEST(RunTraining, ResumeWithoutOptimizerStateIsHardError) {
  TempDir dir;
  const fs::path manifest = micro_corpus(dir.path(), 3);
  TrainPlan plan = micro_plan();
  plan.save_optimizer_state = false;
  TrainOptions stop;
  stop.stop_after_checkpoint = 1;
  const RunResult part = run_training(plan, manifest, dir / "part", stop);
  try {
    run_training(plan, manifest, dir / "resumed", {}, part.final_checkpoint);
    FAIL();
  } catch (const CheckpointError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("optimizer state absent; exact resume impossible"), std::string::npos) << m;
    EXPECT_NE(m.find(part.final_checkpoint.filename().string()), std::string::npos) << m;
  }
}

TEST(RunTraining, FastModeCompletes) {
  TempDir dir;
  const fs::path manifest = micro_corpus(dir.path(), 3);
  TrainOptions opts;
  opts.deterministic = false;
  opts.threads = 3;
  const RunResult fast = run_training(micro_plan(), manifest, dir / "fast", opts);
  const RunResult det = run_training(micro_plan(), manifest, dir / "det");
  const auto a = registry::load_checkpoint(fast.final_checkpoint);
  const auto b = registry::load_checkpoint(det.final_checkpoint);
  ASSERT_EQ(a.params.values.size(), b.params.values.size());
  double max_diff = 0;
  for (std::size_t i = 0; i < a.params.values.size(); ++i)
    max_diff = std::max(max_diff, static_cast<double>(std::abs(a.params.values[i] - b.params.values[i])));
  EXPECT_LT(max_diff, 1e-2);  // same trajectory up to reduction-order rounding
}
