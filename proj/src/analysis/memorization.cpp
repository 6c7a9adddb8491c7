#include "provlm/analysis/memorization.hpp"

#include <algorithm>
#include <stdexcept>

#include "provlm/common/error.hpp"
#include "provlm/common/rng.hpp"
#include "provlm/corpus/chunk_file.hpp"
#include "provlm/model/generate.hpp"

namespace provlm::analysis {

double memorization_score(std::span<const TokenId> S, std::span<const TokenId> G, std::size_t k, std::size_t l) {
  if (l == 0) throw std::invalid_argument("memorization_score: l must be positive");
  if (S.size() != k + l) throw std::invalid_argument("memorization_score: |S| must equal k + l");
  if (G.size() != l) throw std::invalid_argument("memorization_score: |G| must equal l");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < l; ++i) hits += S[k + i] == G[i];
  return static_cast<double>(hits) / static_cast<double>(l);
}

ProbeSet sample_probes(const corpus::CorpusManifest& manifest, const std::filesystem::path& chunk_dir,
                       std::uint32_t n, std::uint32_t k, std::uint32_t l, std::uint64_t seed,
                       const std::string& manifest_checksum) {
  if (k == 0 || l == 0) throw std::invalid_argument("sample_probes: k and l must be positive");
  if (k + l > manifest.max_seq_len)
    throw std::invalid_argument("sample_probes: k + l exceeds the corpus sequence length");
  ProbeSet ps;
  ps.k = k;
  ps.l = l;
  ps.n_per_chunk = n;
  ps.seed = seed;
  ps.manifest_checksum = manifest_checksum;
  for (const auto& entry : manifest.chunks) {
    const corpus::ChunkData data = corpus::read_chunk_file(chunk_dir / entry.file);
    std::vector<std::uint64_t> eligible;
    for (std::size_t i = 0; i < data.sequence_count(); ++i) {
      const auto head = data.sequence(i).first(k + l);
      if (std::find(head.begin(), head.end(), corpus::kPad) == head.end()) eligible.push_back(i);
    }
    if (eligible.size() < n)
      ps.warnings.push_back("chunk " + std::to_string(entry.index) + ": only " + std::to_string(eligible.size()) +
                            " eligible sequences for " + std::to_string(n) + " probes; taking all");
    // Partial Fisher-Yates: the first `take` slots become a uniform sample.
    const std::size_t take = std::min<std::size_t>(n, eligible.size());
    Xoshiro256 rng(derive_seed(seed, entry.index));
    for (std::size_t i = 0; i < take; ++i)
      std::swap(eligible[i], eligible[i + rng.bounded(eligible.size() - i)]);
    std::sort(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(take));
    for (std::size_t i = 0; i < take; ++i) {
      Probe p;
      p.chunk = entry.index;
      p.sequence = eligible[i];
      const auto head = data.sequence(eligible[i]).first(k + l);
      p.tokens.assign(head.begin(), head.end());
      p.crosses_document = std::find(head.begin(), head.end(), corpus::kSeparator) != head.end();
      ps.probes.push_back(std::move(p));
    }
  }
  return ps;
}

double MemorizationResult::mean_score() const {
  if (matches.empty()) return 0.0;
  double s = 0;
  for (std::size_t i = 0; i < matches.size(); ++i) s += score(i);
  return s / static_cast<double>(matches.size());
}

double MemorizationResult::extractible_fraction() const {
  if (matches.empty()) return 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < matches.size(); ++i) n += extractible(i);
  return static_cast<double>(n) / static_cast<double>(matches.size());
}

std::map<std::uint32_t, double> MemorizationResult::per_chunk_mean(const ProbeSet& probes) const {
  std::map<std::uint32_t, std::pair<double, std::size_t>> acc;
  for (std::size_t i = 0; i < size(); ++i) {
    auto& a = acc[probes.probes[probe_ids[i]].chunk];
    a.first += score(i);
    ++a.second;
  }
  std::map<std::uint32_t, double> out;
  for (const auto& [c, a] : acc) out[c] = a.first / static_cast<double>(a.second);
  return out;
}

std::vector<std::uint32_t> trained_chunks(const registry::Checkpoint& checkpoint) {
  const auto it = checkpoint.run_state.find("trained");
  if (it == checkpoint.run_state.end()) {
    if (checkpoint.index == 0) return {};
    throw CheckpointError("checkpoint " + std::to_string(checkpoint.index) + " does not record its trained chunks");
  }
  auto out = it->get<std::vector<std::uint32_t>>();
  if (out.size() != checkpoint.index)
    throw CheckpointError("checkpoint " + std::to_string(checkpoint.index) + " records " +
                          std::to_string(out.size()) + " trained chunks");
  return out;
}

MemorizationResult evaluate_checkpoint(const registry::Checkpoint& checkpoint, const ProbeSet& probes,
                                       std::size_t batch) {
  if (batch == 0) throw std::invalid_argument("evaluate_checkpoint: batch must be positive");
  if (!probes.manifest_checksum.empty() && probes.manifest_checksum != checkpoint.manifest_checksum)
    throw CheckpointError("manifest mismatch: probes were drawn from manifest " + probes.manifest_checksum +
                          " but checkpoint " + std::to_string(checkpoint.index) + " was trained on " +
                          checkpoint.manifest_checksum);
  MemorizationResult r;
  r.checkpoint = checkpoint.index;
  r.step = checkpoint.step;
  r.l = probes.l;
  const auto trained = trained_chunks(checkpoint);
  r.seen_chunks.insert(trained.begin(), trained.end());
  r.baseline = trained.empty();
  if (!trained.empty()) r.latest_chunk = trained.back();

  for (std::size_t i = 0; i < probes.probes.size(); ++i)
    if (r.baseline || r.seen_chunks.contains(probes.probes[i].chunk)) r.probe_ids.push_back(static_cast<std::uint32_t>(i));

  const model::Transformer<float> net(checkpoint.params.config);
  const std::span<const float> params(checkpoint.params.values);
  r.matches.reserve(r.probe_ids.size());
  for (std::size_t b = 0; b < r.probe_ids.size(); b += batch) {
    const std::size_t e = std::min(r.probe_ids.size(), b + batch);
    std::vector<std::vector<TokenId>> prompts;
    for (std::size_t i = b; i < e; ++i) {
      const auto& t = probes.probes[r.probe_ids[i]].tokens;
      prompts.emplace_back(t.begin(), t.begin() + probes.k);
    }
    const auto gen = model::generate_greedy_batch(net, params, prompts, probes.l);
    for (std::size_t i = b; i < e; ++i) {
      const auto& S = probes.probes[r.probe_ids[i]].tokens;
      const double s = memorization_score(S, gen[i - b], probes.k, probes.l);
      r.matches.push_back(static_cast<std::uint16_t>(std::lround(s * probes.l)));
    }
  }
  return r;
}

}  // namespace provlm::analysis
