#include <gtest/gtest.h>

#include <cmath>

#include "provlm/common/error.hpp"
#include "provlm/common/file_io.hpp"
#include "provlm/common/rng.hpp"
#include "provlm/common/sha256.hpp"
#include "provlm/corpus/chunk_file.hpp"
#include "provlm/corpus/prepare.hpp"
#include "provlm/corpus/synthetic.hpp"
#include "provlm/model/loss.hpp"
#include "provlm/registry/checkpoint.hpp"
#include "provlm/registry/metrics.hpp"
#include "provlm/registry/perplexity.hpp"
#include "test_util.hpp"

using namespace provlm;
using namespace provlm::registry;
namespace fs = std::filesystem;
using provlm::testing::TempDir;

namespace {

model::ModelConfig small_config() {
  model::ModelConfig c;
  c.hidden_size = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.intermediate_size = 24;
  c.max_seq_len = 16;
  c.norm_kind = model::NormKind::layernorm;
  return c;
}

Checkpoint sample_checkpoint(std::uint32_t index = 3, bool optimizer = true) {
  Checkpoint c;
  c.index = index;
  c.step = 1234;
  c.params = model::init_parameters<float>(small_config(), 7);
  if (optimizer) {
    auto o = trainer::OptimizerState<float>::zeros(c.params.values.size());
    Xoshiro256 rng(1);
    for (auto& x : o.m) x = static_cast<float>(rng.normal());
    for (auto& x : o.v) x = static_cast<float>(rng.uniform());
    o.t = 1234;
    c.optimizer = o;
  }
  Xoshiro256 r(5);
  r.normal();
  c.rng_state = r.serialize();
  c.manifest_checksum = std::string(64, 'a');
  c.run_state = {{"queue", {4, 5}}};
  return c;
}

void expect_equal(const Checkpoint& a, const Checkpoint& b) {
  EXPECT_EQ(a.index, b.index);
  EXPECT_EQ(a.step, b.step);
  EXPECT_EQ(a.params.config, b.params.config);
  EXPECT_EQ(a.params.values, b.params.values);
  EXPECT_EQ(a.optimizer, b.optimizer);
  EXPECT_EQ(a.rng_state, b.rng_state);
  EXPECT_EQ(a.precision, b.precision);
  EXPECT_EQ(a.manifest_checksum, b.manifest_checksum);
  EXPECT_EQ(a.schema_version, b.schema_version);
  EXPECT_EQ(a.run_state, b.run_state);
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Checkpoint, FullPrecisionRoundTripIsExact) {
  TempDir dir;
  const Checkpoint c = sample_checkpoint();
  const fs::path p = save_checkpoint(c, dir.path());
  EXPECT_EQ(p.filename(), "ckpt_00003.lckp");
  LoadReport rep;
  const Checkpoint back = load_checkpoint(p, {}, &rep);
  expect_equal(c, back);
  EXPECT_TRUE(rep.warnings.empty());
  EXPECT_EQ(rep.content_hash, checkpoint_hash(p));
  fs::path sidecar = p;
  sidecar += ".sha256";
  EXPECT_EQ(read_text_file(sidecar).substr(0, 64), rep.content_hash);
}

TEST(Checkpoint, EncodingIsDeterministic) {
  EXPECT_EQ(encode_checkpoint(sample_checkpoint()), encode_checkpoint(sample_checkpoint()));
}

TEST(Checkpoint, SectionTableIsSelfDescribing) {
  const auto bytes = encode_checkpoint(sample_checkpoint());
  ByteReader r(bytes);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "LCKP");
  r.take(4);
  EXPECT_EQ(r.u32(), kCheckpointVersion);
  const std::uint32_t n = r.u32();
  std::vector<std::string> names;
  std::uint64_t expected_offset = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto name = r.take(r.u16());
    names.emplace_back(name.begin(), name.end());
    const std::uint64_t off = r.u64(), len = r.u64();
    if (i > 0) EXPECT_EQ(off, expected_offset);
    expected_offset = off + len;
    r.u8();
    const auto nd = r.u8();
    for (int d = 0; d < nd; ++d) r.u64();
  }
  EXPECT_EQ(expected_offset + 36, bytes.size());
  EXPECT_EQ(names.front(), "meta");
  EXPECT_EQ(names.back(), "rng");
  EXPECT_NE(std::find(names.begin(), names.end(), "param/layers.0.attn.wq"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "optim/m/lm_head"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "optim/step"), names.end());
}

TEST(Checkpoint, HalfPrecisionWarnsAndRounds) {
  TempDir dir;
  Checkpoint c = sample_checkpoint();
  c.precision = CheckpointPrecision::half;
  const fs::path p = save_checkpoint(c, dir.path());
  LoadReport rep;
  const Checkpoint back = load_checkpoint(p, {}, &rep);
  ASSERT_EQ(rep.warnings.size(), 1u);
  EXPECT_NE(rep.warnings[0].find("WARNING"), std::string::npos);
  EXPECT_NE(rep.warnings[0].find("bf16"), std::string::npos);
  EXPECT_EQ(back.precision, CheckpointPrecision::half);
  bool any_diff = false;
  for (std::size_t i = 0; i < c.params.values.size(); ++i) {
    const float want = bf16_to_float(float_to_bf16(c.params.values[i]));
    ASSERT_EQ(back.params.values[i], want);
    any_diff |= want != c.params.values[i];
  }
  EXPECT_TRUE(any_diff);
  EXPECT_EQ(back.optimizer, c.optimizer);  // moments stay f32
}

TEST(Checkpoint, Bf16Conversion) {
  EXPECT_EQ(float_to_bf16(1.0f), 0x3F80);
  EXPECT_EQ(float_to_bf16(-2.0f), 0xC000);
  EXPECT_EQ(bf16_to_float(0x3F80), 1.0f);
  // 1 + 2^-8 sits exactly between two bf16 values; ties go to the even one.
  EXPECT_EQ(float_to_bf16(1.00390625f), 0x3F80);
  EXPECT_EQ(float_to_bf16(1.01171875f), 0x3F82);
  EXPECT_TRUE(std::isnan(bf16_to_float(float_to_bf16(std::nanf("")))));
  EXPECT_TRUE(std::isinf(bf16_to_float(float_to_bf16(INFINITY))));
}

TEST(Checkpoint, FlippedByteFailsIntegrity) {
  TempDir dir;
  const fs::path p = save_checkpoint(sample_checkpoint(), dir.path());
  for (std::size_t pos : {std::size_t{100}, fs::file_size(p) / 2, fs::file_size(p) - 1}) {
    auto bytes = read_file(p);
    bytes[pos] ^= 0x10;
    const fs::path q = dir / "bad.lckp";
    write_file_atomic(q, bytes);
    const std::string err = error_of([&] { load_checkpoint(q); });
    EXPECT_NE(err.find("integrity"), std::string::npos) << err;
  }
}

TEST(Checkpoint, MissingOptimizerState) {
  TempDir dir;
  const fs::path p = save_checkpoint(sample_checkpoint(2, false), dir.path());
  const std::string err = error_of([&] { load_checkpoint(p); });
  EXPECT_NE(err.find("optimizer state absent; exact resume impossible"), std::string::npos) << err;
  LoadOptions weights_only;
  weights_only.require_optimizer = false;
  const Checkpoint c = load_checkpoint(p, weights_only);
  EXPECT_FALSE(c.optimizer.has_value());
}

TEST(Checkpoint, ShapeAndManifestAgreement) {
  TempDir dir;
  const fs::path p = save_checkpoint(sample_checkpoint(), dir.path());
  LoadOptions o;
  o.expect_config = small_config();
  EXPECT_NO_THROW(load_checkpoint(p, o));
  o.expect_config->hidden_size = 32;
  EXPECT_THROW(load_checkpoint(p, o), CheckpointError);
  LoadOptions m;
  m.expect_manifest_checksum = std::string(64, 'b');
  const std::string err = error_of([&] { load_checkpoint(p, m); });
  EXPECT_NE(err.find("manifest checksum mismatch"), std::string::npos) << err;
}

TEST(Checkpoint, CrashMidSaveLeavesNothingLoadable) {
  TempDir dir;
  const fs::path good = save_checkpoint(sample_checkpoint(1), dir.path());
  const std::string good_hash = checkpoint_hash(good);
  SaveOptions crash;
  crash.crash_after_bytes = 5000;
  EXPECT_THROW(save_checkpoint(sample_checkpoint(2), dir.path(), crash), IoError);
  EXPECT_FALSE(fs::exists(dir / "ckpt_00002.lckp"));
  EXPECT_TRUE(fs::exists(dir / "ckpt_00002.lckp.tmp"));
  const auto listed = list_checkpoints(dir.path());
  ASSERT_EQ(listed.size(), 1u);
  EXPECT_EQ(listed[0], good);
  EXPECT_EQ(checkpoint_hash(good), good_hash);
  EXPECT_THROW(load_checkpoint(dir / "ckpt_00002.lckp.tmp"), CheckpointError);

  // A later successful save replaces the stale temp file.
  save_checkpoint(sample_checkpoint(2), dir.path());
  EXPECT_EQ(list_checkpoints(dir.path()).size(), 2u);
  EXPECT_FALSE(fs::exists(dir / "ckpt_00002.lckp.tmp"));
}

TEST(Checkpoint, UnwritableDirectoryIsIoError) {
  TempDir dir;
  write_file_atomic(dir / "file", std::string_view("x"));
  EXPECT_ANY_THROW(save_checkpoint(sample_checkpoint(), dir / "file"));
}

TEST(Checkpoint, TruncatedFileRefused) {
  TempDir dir;
  const fs::path p = save_checkpoint(sample_checkpoint(), dir.path());
  fs::resize_file(p, 40);
  EXPECT_THROW(load_checkpoint(p), CheckpointError);
}

TEST(Metrics, AppendQueryAndOrdering) {
  TempDir dir;
  MetricsLedger l(dir / "m.jsonl");
  for (std::uint64_t s = 1; s <= 3; ++s) l.append(MetricsRecord{s, 0, 1.0 / s, 0.5, 1e-4, 1000.0, 1.7e9 + s});
  const auto all = l.query(0, 100);
  ASSERT_EQ(all.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(all[i].step, i + 1);
  EXPECT_TRUE(l.query(2, 2).empty());
  EXPECT_TRUE(l.query(10, 20).empty());
  EXPECT_EQ(l.query(2, 3).size(), 1u);
  EXPECT_THROW(l.append(MetricsRecord{3, 0}), std::invalid_argument);
  EXPECT_THROW(l.append(MetricsRecord{2, 0}), std::invalid_argument);
  const std::vector<MetricsRecord> batch{{5, 1}, {4, 1}};
  EXPECT_THROW(l.append(batch), std::invalid_argument);
  EXPECT_EQ(l.records().size(), 3u);  // rejected batch wrote nothing
}

TEST(Metrics, ReplayIsExact) {
  TempDir dir;
  std::vector<MetricsRecord> recs;
  {
    MetricsLedger l(dir / "m.jsonl");
    Xoshiro256 rng(3);
    for (std::uint64_t s = 1; s <= 50; ++s) {
      recs.push_back({s, static_cast<std::uint32_t>(s / 10), rng.uniform() * 6, rng.normal(), rng.uniform() * 1e-3,
                      rng.uniform() * 1e5, 1.7e9 + rng.uniform()});
      l.append(recs.back());
    }
  }
  MetricsLedger again(dir / "m.jsonl");
  EXPECT_EQ(again.records(), recs);
  EXPECT_THROW(again.append(MetricsRecord{50, 0}), std::invalid_argument);
}

TEST(Metrics, TenThousandRowCsvIsStable) {
  TempDir dir;
  {
    MetricsLedger l(dir / "m.jsonl");
    std::vector<MetricsRecord> recs;
    for (std::uint64_t s = 1; s <= 10000; ++s)
      recs.push_back({s, static_cast<std::uint32_t>(s / 500), 5.0 / std::sqrt(s), 0.1 * s, 3e-4, 12345.5, 1.7e9 + s});
    l.append(recs);
  }
  export_metrics_csv(dir / "m.jsonl", dir / "a.csv");
  export_metrics_csv(dir / "m.jsonl", dir / "b.csv");
  const std::string a = read_text_file(dir / "a.csv");
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 10001);
  EXPECT_EQ(a.substr(0, a.find('\n')), kMetricsCsvHeader);
  EXPECT_EQ(sha256_file_hex(dir / "a.csv"), sha256_file_hex(dir / "b.csv"));
}

TEST(Perplexity, UntrainedModelIsNearVocabSize) {
  corpus::ChunkData d;
  d.max_seq_len = 65;
  Xoshiro256 rng(4);
  for (int i = 0; i < 64 * 65; ++i) d.tokens.push_back(static_cast<corpus::TokenId>(rng.bounded(256)));
  const auto params = model::init_parameters<float>(model::toy_config(), 0);
  const PerplexityResult r = eval_perplexity(params, d);
  EXPECT_EQ(r.tokens, 64u * 64u);
  EXPECT_NEAR(r.perplexity / 258.0, 1.0, 0.01);
  EXPECT_DOUBLE_EQ(r.perplexity, std::exp(r.mean_nll));
}

TEST(Perplexity, AgreesWithBatchLossAndSkipsPads) {
  corpus::ChunkData d;
  d.max_seq_len = 17;
  Xoshiro256 rng(6);
  for (int i = 0; i < 5 * 17; ++i) d.tokens.push_back(static_cast<corpus::TokenId>(rng.bounded(256)));
  for (int i = 0; i < 6; ++i) d.tokens[d.tokens.size() - 1 - i] = corpus::kPad;
  const auto params = model::init_parameters<float>(small_config(), 2);
  const PerplexityResult r = eval_perplexity(params, d, 2);
  EXPECT_EQ(r.tokens, 5u * 16u - 6u);
  std::vector<std::span<const corpus::TokenId>> w;
  for (std::size_t i = 0; i < 5; ++i) w.push_back(d.sequence(i));
  const model::Transformer<float> net(small_config());
  const auto loss = model::batch_loss(net, std::span<const float>(params.values), model::make_batch(w));
  EXPECT_NEAR(r.mean_nll, loss.mean_nll, 1e-9);
}

TEST(Perplexity, OverlapWithTrainingIsRejected) {
  TempDir dir;
  corpus::MarkovSourceSpec s;
  s.tokens = 8000;
  s.seed = 2;
  corpus::write_binary_documents(dir / "src.bin", corpus::generate_markov_documents(s));
  corpus::CorpusConfig c;
  c.seed = 1;
  c.n_chunks = 4;
  c.max_seq_len = 32;
  c.heldout_sequences = 5;
  c.base_dir = dir.path();
  c.sources = {{"m", "src.bin", 8000, corpus::SourceFormat::binary}};
  const auto m = corpus::prepare_corpus(c, dir / "data");
  const auto held = corpus::read_chunk_file(dir / "data" / corpus::kHeldoutFile);
  EXPECT_NO_THROW(check_heldout_disjoint(held, m, dir / "data"));
  const auto train0 = corpus::read_chunk_file(dir / "data" / m.chunk(0).file);
  const std::string err = error_of([&] { check_heldout_disjoint(train0, m, dir / "data"); });
  EXPECT_NE(err.find("overlaps training chunk 0"), std::string::npos) << err;
}

TEST(Metrics, TruncateDropsLaterSteps) {
  TempDir dir;
  {
    MetricsLedger l(dir / "m.jsonl");
    for (std::uint64_t s = 1; s <= 10; ++s) l.append(MetricsRecord{s, static_cast<std::uint32_t>(s / 4), 1.0});
  }
  EXPECT_EQ(truncate_metrics_ledger(dir / "m.jsonl", 6), 4u);
  EXPECT_EQ(truncate_metrics_ledger(dir / "m.jsonl", 6), 0u);
  MetricsLedger l(dir / "m.jsonl");
  ASSERT_EQ(l.records().size(), 6u);
  EXPECT_EQ(*l.last_step(), 6u);
  l.append(MetricsRecord{7, 1, 2.0});
  EXPECT_EQ(truncate_metrics_ledger(dir / "m.jsonl", 0), 7u);
}
