#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "provlm/analysis/memorization.hpp"
#include "provlm/analysis/report.hpp"
#include "provlm/common/error.hpp"
#include "provlm/common/file_io.hpp"
#include "provlm/common/rng.hpp"
#include "provlm/common/sha256.hpp"
#include "provlm/corpus/prepare.hpp"
#include "provlm/corpus/synthetic.hpp"
#include "provlm/model/generate.hpp"
#include "provlm/trainer/trainer.hpp"
#include "test_util.hpp"

using namespace provlm;
using namespace provlm::analysis;
namespace fs = std::filesystem;
using provlm::testing::TempDir;

namespace {

// Enumerates every sequence over [0, vocab)^len.
void for_each_sequence(std::size_t len, TokenId vocab, const std::function<void(const std::vector<TokenId>&)>& f) {
  std::vector<TokenId> s(len, 0);
  while (true) {
    f(s);
    std::size_t i = 0;
    while (i < len && ++s[i] == vocab) s[i++] = 0;
    if (i == len) return;
  }
}

// Counts agreeing continuation positions by walking mismatches instead.
std::size_t brute_hits(const std::vector<TokenId>& S, const std::vector<TokenId>& G, std::size_t k) {
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < G.size(); ++i)
    if (S.at(k + i) != G.at(i)) ++mismatches;
  return G.size() - mismatches;
}

MemorizationResult fake_result(std::uint32_t ckpt, std::vector<std::uint32_t> seen, std::vector<std::uint32_t> ids,
                               std::vector<std::uint16_t> matches, std::uint32_t l = 4) {
  MemorizationResult r;
  r.checkpoint = ckpt;
  r.l = l;
  r.seen_chunks.insert(seen.begin(), seen.end());
  r.latest_chunk = seen.empty() ? 0 : seen.back();
  r.baseline = seen.empty();
  r.probe_ids = std::move(ids);
  r.matches = std::move(matches);
  return r;
}

ProbeSet fake_probes(const std::vector<std::uint32_t>& chunks, std::uint32_t l = 4) {
  ProbeSet ps;
  ps.k = 2;
  ps.l = l;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    Probe p;
    p.chunk = chunks[i];
    p.sequence = i;
    p.tokens.assign(ps.k + ps.l, 0);
    ps.probes.push_back(p);
  }
  return ps;
}

model::ModelConfig tiny_model() {
  model::ModelConfig c;
  c.hidden_size = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.intermediate_size = 24;
  c.max_seq_len = 16;
  return c;
}

registry::Checkpoint tiny_checkpoint(std::vector<std::uint32_t> trained, std::string manifest = "m") {
  registry::Checkpoint c;
  c.index = static_cast<std::uint32_t>(trained.size());
  c.params = model::init_parameters<float>(tiny_model(), 1);
  c.manifest_checksum = std::move(manifest);
  c.run_state = {{"trained", trained}};
  return c;
}

fs::path probe_corpus(const fs::path& dir, std::uint32_t chunks = 4) {
  corpus::MarkovSourceSpec s;
  s.tokens = 6000;
  s.seed = 21;
  s.doc_min = 20;
  s.doc_max = 90;
  corpus::write_binary_documents(dir / "src.bin", corpus::generate_markov_documents(s));
  corpus::CorpusConfig c;
  c.seed = 8;
  c.n_chunks = chunks;
  c.max_seq_len = 16;
  c.base_dir = dir;
  c.sources = {{"m", "src.bin", 6000, corpus::SourceFormat::binary}};
  corpus::prepare_corpus(c, dir / "data");
  return dir / "data" / corpus::kManifestFile;
}

}  // namespace

TEST(Score, ExhaustiveAgreementSmallVocab) {
  for (TokenId vocab = 1; vocab <= 3; ++vocab)
    for (std::size_t l = 1; l <= 4; ++l)
      for (std::size_t k = 0; k <= 2; ++k)
        for_each_sequence(k + l, vocab, [&](const std::vector<TokenId>& S) {
          for_each_sequence(l, vocab, [&](const std::vector<TokenId>& G) {
            const double got = memorization_score(S, G, k, l);
            const std::size_t hits = brute_hits(S, G, k);
            ASSERT_EQ(got, static_cast<double>(hits) / static_cast<double>(l));
            ASSERT_EQ(got == 1.0, hits == l);
          });
        });
}

TEST(Score, Examples) {
  std::vector<TokenId> S(64), G(32);
  for (std::size_t i = 0; i < 64; ++i) S[i] = static_cast<TokenId>(i);
  std::copy(S.begin() + 32, S.end(), G.begin());
  EXPECT_EQ(memorization_score(S, G, 32, 32), 1.0);
  for (auto& g : G) g = 200;
  EXPECT_EQ(memorization_score(S, G, 32, 32), 0.0);
  for (std::size_t i = 0; i < 16; ++i) G[2 * i] = S[32 + 2 * i];
  EXPECT_EQ(memorization_score(S, G, 32, 32), 0.5);
  EXPECT_THROW(memorization_score(std::span(S).first(63), G, 32, 32), std::invalid_argument);
  EXPECT_THROW(memorization_score(S, std::span(G).first(31), 32, 32), std::invalid_argument);
}

TEST(Score, MonteCarloChanceLevel) {
  Xoshiro256 rng(99);
  const std::size_t n = 20000, k = 32, l = 32;
  double sum = 0, ss = 0;
  std::vector<TokenId> S(k + l), G(l);
  for (std::size_t t = 0; t < n; ++t) {
    for (auto& x : S) x = static_cast<TokenId>(rng.bounded(258));
    for (auto& x : G) x = static_cast<TokenId>(rng.bounded(258));
    const double s = memorization_score(S, G, k, l);
    sum += s;
    ss += s * s;
  }
  const double mean = sum / n;
  const double se = std::sqrt((ss / n - mean * mean) / n);
  EXPECT_LT(std::abs(mean - 1.0 / 258), 3 * se);
}

TEST(Probes, DeterministicWithoutReplacement) {
  TempDir dir;
  const fs::path mp = probe_corpus(dir.path());
  const auto m = corpus::read_manifest(mp);
  const ProbeSet a = sample_probes(m, mp.parent_path(), 10, 4, 4, 3);
  const ProbeSet b = sample_probes(m, mp.parent_path(), 10, 4, 4, 3);
  ASSERT_EQ(a.probes.size(), 40u);
  EXPECT_TRUE(a.warnings.empty());
  for (std::size_t i = 0; i < a.probes.size(); ++i) {
    EXPECT_EQ(a.probes[i].tokens, b.probes[i].tokens);
    EXPECT_EQ(a.probes[i].sequence, b.probes[i].sequence);
    EXPECT_EQ(a.probes[i].tokens.size(), 8u);
    if (i > 0 && a.probes[i].chunk == a.probes[i - 1].chunk) EXPECT_LT(a.probes[i - 1].sequence, a.probes[i].sequence);
  }
  const ProbeSet c = sample_probes(m, mp.parent_path(), 10, 4, 4, 4);
  bool differs = false;
  for (std::size_t i = 0; i < c.probes.size(); ++i) differs |= c.probes[i].sequence != a.probes[i].sequence;
  EXPECT_TRUE(differs);
}

TEST(Probes, ProbesAreSequencePrefixesWithFlags) {
  TempDir dir;
  const fs::path mp = probe_corpus(dir.path());
  const auto m = corpus::read_manifest(mp);
  const ProbeSet ps = sample_probes(m, mp.parent_path(), 1000, 6, 6, 1);
  std::size_t total_eligible = 0;
  for (const auto& e : m.chunks) {
    const auto d = corpus::read_chunk_file(mp.parent_path() / e.file);
    for (std::size_t i = 0; i < d.sequence_count(); ++i) {
      const auto h = d.sequence(i).first(12);
      total_eligible += std::find(h.begin(), h.end(), corpus::kPad) == h.end();
    }
  }
  EXPECT_EQ(ps.probes.size(), total_eligible);  // n exceeds every chunk: all eligible taken
  EXPECT_EQ(ps.warnings.size(), m.chunks.size());
  std::size_t crossing = 0;
  for (const auto& p : ps.probes) {
    const auto d = corpus::read_chunk_file(mp.parent_path() / m.chunk(p.chunk).file);
    const auto seq = d.sequence(p.sequence);
    ASSERT_TRUE(std::equal(p.tokens.begin(), p.tokens.end(), seq.begin()));
    ASSERT_EQ(std::find(p.tokens.begin(), p.tokens.end(), corpus::kPad), p.tokens.end());
    ASSERT_EQ(p.crosses_document, std::find(p.tokens.begin(), p.tokens.end(), corpus::kSeparator) != p.tokens.end());
    crossing += p.crosses_document;
  }
  EXPECT_GT(crossing, 0u);
  EXPECT_THROW(sample_probes(m, mp.parent_path(), 1, 10, 10, 1), std::invalid_argument);
}

TEST(Evaluate, ExposureAndBaseline) {
  TempDir dir;
  const fs::path mp = probe_corpus(dir.path());
  const auto m = corpus::read_manifest(mp);
  const ProbeSet ps = sample_probes(m, mp.parent_path(), 5, 4, 4, 1, "m");

  const auto r2 = evaluate_checkpoint(tiny_checkpoint({0, 1}), ps, 3);
  EXPECT_FALSE(r2.baseline);
  EXPECT_EQ(r2.size(), 10u);
  for (auto id : r2.probe_ids) EXPECT_LE(ps.probes[id].chunk, 1u);
  for (std::size_t i = 0; i < r2.size(); ++i) {
    EXPECT_LE(r2.matches[i], 4);
    EXPECT_EQ(r2.score(i) * 4, r2.matches[i]);
  }
  const auto r0 = evaluate_checkpoint(tiny_checkpoint({}), ps);
  EXPECT_TRUE(r0.baseline);
  EXPECT_EQ(r0.size(), ps.probes.size());

  // Scores agree with one-at-a-time greedy decoding.
  const model::Transformer<float> net(tiny_model());
  const auto ck = tiny_checkpoint({0, 1});
  for (std::size_t i = 0; i < r2.size(); ++i) {
    const auto& S = ps.probes[r2.probe_ids[i]].tokens;
    const auto G = model::generate_greedy(net, std::span<const float>(ck.params.values), std::span(S).first(4), 4);
    EXPECT_EQ(r2.score(i), memorization_score(S, G, 4, 4));
  }
  EXPECT_THROW(evaluate_checkpoint(tiny_checkpoint({0}, "other"), ps), CheckpointError);
}

TEST(Evaluate, UntrainedModelIsAtChanceLevel) {
  // Random probes against an untrained toy model: mean within 3 SE of 1/258.
  ProbeSet ps;
  ps.k = 32;
  ps.l = 32;
  Xoshiro256 rng(5);
  for (std::uint32_t i = 0; i < 3000; ++i) {
    Probe p;
    p.chunk = 0;
    p.sequence = i;
    for (int t = 0; t < 64; ++t) p.tokens.push_back(static_cast<TokenId>(rng.bounded(256)));
    ps.probes.push_back(p);
  }
  registry::Checkpoint c;
  c.params = model::init_parameters<float>(model::toy_config(), 3);
  const auto r = evaluate_checkpoint(c, ps);
  ASSERT_TRUE(r.baseline);
  double ss = 0;
  const double mean = r.mean_score();
  for (std::size_t i = 0; i < r.size(); ++i) ss += (r.score(i) - mean) * (r.score(i) - mean);
  const double se = std::sqrt(ss / (r.size() - 1) / r.size());
  EXPECT_LT(std::abs(mean - 1.0 / 258), 3 * se) << mean << " se " << se;
}

TEST(Evaluate, OverfitProbeScoresOne) {
  trainer::TrainPlan plan;
  plan.model = model::toy_config();
  plan.init_seed = 2;
  plan.peak_lr = 3e-3;
  plan.final_lr = 3e-3;
  plan.warmup_steps = 5;
  plan.weight_decay = 0;
  trainer::TrainState st = trainer::initial_state(plan);
  const model::Transformer<float> net(plan.model);
  Xoshiro256 rng(31);
  std::vector<TokenId> seq(64);
  for (auto& t : seq) t = static_cast<TokenId>(rng.bounded(256));
  const std::vector<std::span<const TokenId>> w{seq};
  const auto batch = model::make_batch(w);
  for (int s = 0; s < 300; ++s) trainer::train_step(net, st, batch, plan, 1000);

  ProbeSet ps;
  ps.probes.push_back(Probe{0, 0, seq, false});
  registry::Checkpoint c;
  c.index = 1;
  c.params = st.params;
  c.run_state = {{"trained", {0}}};
  const auto r = evaluate_checkpoint(c, ps);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r.score(0), 1.0);
  EXPECT_TRUE(r.extractible(0));
}

TEST(Groups, SingleCheckpointSingleGroup) {
  const ProbeSet ps = fake_probes({0, 0, 0});
  const std::vector<MemorizationResult> rows{fake_result(1, {0}, {0, 1, 2}, {4, 2, 0})};
  const auto m = chunk_group_matrix(rows, ps);
  ASSERT_EQ(m.groups.size(), 1u);
  ASSERT_EQ(m.checkpoints.size(), 1u);
  EXPECT_DOUBLE_EQ(*m.mean[0][0], 0.5);
  EXPECT_EQ(m.latest[0], 0u);
  EXPECT_EQ(m.rows_compared(), 0u);
}

TEST(Groups, ReaggregationOracleAndRecency) {
  Xoshiro256 rng(4);
  std::vector<std::uint32_t> chunk_of;
  for (std::uint32_t c = 0; c < 6; ++c)
    for (int i = 0; i < 7; ++i) chunk_of.push_back(c);
  const ProbeSet ps = fake_probes(chunk_of, 8);
  std::vector<MemorizationResult> rows;
  for (std::uint32_t ck : {2u, 4u, 6u}) {
    std::vector<std::uint32_t> seen, ids;
    std::vector<std::uint16_t> matches;
    for (std::uint32_t c = 0; c < ck; ++c) seen.push_back(c);
    for (std::uint32_t i = 0; i < ps.probes.size(); ++i)
      if (ps.probes[i].chunk < ck) {
        ids.push_back(i);
        // latest two chunks score high, older ones low
        matches.push_back(static_cast<std::uint16_t>(ps.probes[i].chunk + 2 >= ck ? 6 + rng.bounded(3) : rng.bounded(3)));
      }
    rows.push_back(fake_result(ck, seen, ids, matches, 8));
  }
  const auto m = chunk_group_matrix(rows, ps);
  ASSERT_EQ(m.groups.size(), 3u);
  EXPECT_EQ(m.groups[1].chunk_begin, 2u);
  EXPECT_EQ(m.groups[1].chunk_end, 4u);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(m.latest[r], r);
    for (std::size_t g = 0; g < 3; ++g) {
      double sum = 0;
      std::size_t n = 0;
      for (std::size_t i = 0; i < rows[r].size(); ++i) {
        const auto c = ps.probes[rows[r].probe_ids[i]].chunk;
        if (c >= m.groups[g].chunk_begin && c < m.groups[g].chunk_end) {
          sum += rows[r].matches[i] / 8.0;
          ++n;
        }
      }
      if (n == 0) {
        EXPECT_FALSE(m.mean[r][g].has_value());
      } else {
        EXPECT_EQ(*m.mean[r][g], sum / n);
        EXPECT_EQ(m.counts[r][g], n);
      }
    }
  }
  EXPECT_EQ(m.rows_compared(), 2u);
  EXPECT_EQ(m.rows_latest_higher(), 2u);
}

TEST(Correlation, SelfIsOneAndIndependentIsNearZero) {
  Xoshiro256 rng(7);
  const std::size_t n = 5000;
  std::vector<std::uint32_t> ids(n);
  std::vector<std::uint16_t> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    ids[i] = static_cast<std::uint32_t>(i);
    a[i] = static_cast<std::uint16_t>(rng.bounded(33));
    b[i] = static_cast<std::uint16_t>(rng.bounded(33));
  }
  const auto ra = fake_result(1, {0}, ids, a, 32), rb = fake_result(2, {0, 1}, ids, b, 32);
  const auto self = checkpoint_correlation(ra, ra);
  EXPECT_NEAR(*self.pearson_score, 1.0, 1e-12);
  EXPECT_NEAR(*self.binary_agreement, 1.0, 1e-12);
  const auto ind = checkpoint_correlation(ra, rb);
  EXPECT_EQ(ind.n_common, n);
  EXPECT_LT(std::abs(*ind.pearson_score), 4.0 / std::sqrt(static_cast<double>(n)));
}

TEST(Correlation, PhiAbsentWhenFlagsConstantAndDisjointFails) {
  const auto a = fake_result(1, {0}, {0, 1, 2}, {1, 2, 3});
  const auto b = fake_result(2, {0, 1}, {0, 1, 2, 3}, {2, 3, 1, 4});
  const auto p = checkpoint_correlation(a, b);
  EXPECT_EQ(p.n_common, 3u);
  EXPECT_FALSE(p.binary_agreement.has_value());
  EXPECT_TRUE(p.pearson_score.has_value());
  const auto c = fake_result(3, {2}, {5, 6}, {1, 2});
  EXPECT_THROW(checkpoint_correlation(a, c), std::invalid_argument);
  const std::vector<double> x{1, 2, 3}, y{2, 4, 6}, z{1, 1, 1};
  EXPECT_NEAR(*pearson(x, y), 1.0, 1e-15);
  EXPECT_FALSE(pearson(x, z).has_value());
}

TEST(Selection, Rules) {
  EXPECT_EQ(select_checkpoints("auto10", 20), (std::vector<std::uint32_t>{2, 4, 6, 8, 10, 12, 14, 16, 18, 20}));
  EXPECT_EQ(select_checkpoints("auto10", 4), (std::vector<std::uint32_t>{1, 2, 3, 4}));
  EXPECT_EQ(select_checkpoints("auto3", 360), (std::vector<std::uint32_t>{120, 240, 360}));
  EXPECT_EQ(select_checkpoints("all", 3), (std::vector<std::uint32_t>{1, 2, 3}));
  EXPECT_EQ(select_checkpoints("5,1,5", 9), (std::vector<std::uint32_t>{1, 5}));
  EXPECT_THROW(select_checkpoints("1,x", 9), ConfigError);
  EXPECT_THROW(select_checkpoints("12", 9), ConfigError);
  EXPECT_THROW(select_checkpoints("auto0", 9), ConfigError);
}

TEST(Report, TablesAreConsistentAndStable) {
  TempDir dir;
  std::vector<std::uint32_t> chunk_of;
  for (std::uint32_t c = 0; c < 4; ++c)
    for (int i = 0; i < 5; ++i) chunk_of.push_back(c);
  const ProbeSet ps = fake_probes(chunk_of);
  Xoshiro256 rng(1);
  std::vector<MemorizationResult> results;
  {
    std::vector<std::uint32_t> ids(20);
    std::vector<std::uint16_t> m(20);
    for (std::uint32_t i = 0; i < 20; ++i) {
      ids[i] = i;
      m[i] = static_cast<std::uint16_t>(rng.bounded(2));
    }
    results.push_back(fake_result(0, {}, ids, m));
  }
  for (std::uint32_t ck = 1; ck <= 4; ++ck) {
    std::vector<std::uint32_t> seen, ids;
    std::vector<std::uint16_t> m;
    for (std::uint32_t c = 0; c < ck; ++c) seen.push_back(c);
    for (std::uint32_t i = 0; i < 20; ++i)
      if (chunk_of[i] < ck) {
        ids.push_back(i);
        m.push_back(static_cast<std::uint16_t>(rng.bounded(5)));
      }
    results.push_back(fake_result(ck, seen, ids, m));
  }
  const auto rep = build_report(ps, results, {2, 4}, {3});
  emit_report(rep, dir / "a");
  emit_report(rep, dir / "b");
  for (const char* f : {"probes.csv", "scores.csv", "score_distribution.csv", "chunk_groups.csv",
                        "correlation_matrix.csv", "adjacent_correlation.csv", "summary.json"})
    EXPECT_EQ(sha256_file_hex(dir / "a" / f), sha256_file_hex(dir / "b" / f)) << f;

  // Histogram bins sum to the probe count and the pct column is the extractible fraction.
  std::ifstream in(dir / "a" / "score_distribution.csv");
  std::string line;
  std::getline(in, line);
  std::map<std::uint32_t, std::size_t> sums;
  std::map<std::uint32_t, double> pct;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cols;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
    const auto ck = static_cast<std::uint32_t>(std::stoul(cols[0]));
    sums[ck] += std::stoul(cols[2]);
    EXPECT_EQ(std::stoul(cols[3]), rep.result(ck)->size());
    pct[ck] = std::stod(cols[4]);
  }
  EXPECT_EQ(sums.size(), 3u);  // baseline plus the two selected checkpoints
  for (auto [ck, s] : sums) {
    EXPECT_EQ(s, rep.result(ck)->size());
    EXPECT_DOUBLE_EQ(pct[ck], 100.0 * rep.result(ck)->extractible_fraction());
  }
  const auto summary = nlohmann::json::parse(read_text_file(dir / "a" / "summary.json"));
  EXPECT_EQ(summary.at("nan_chunks"), nlohmann::json::array({3}));
  EXPECT_EQ(summary.at("files").size(), 6u);
  EXPECT_EQ(rep.adjacent.size(), 3u);
}
