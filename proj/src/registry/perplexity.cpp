#include "provlm/registry/perplexity.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>

#include "provlm/common/error.hpp"
#include "provlm/model/loss.hpp"

namespace provlm::registry {

PerplexityResult eval_perplexity(const model::ParameterSet<float>& params, const corpus::ChunkData& heldout,
                                 std::size_t batch_rows) {
  if (batch_rows == 0) throw std::invalid_argument("batch_rows must be positive");
  const model::Transformer<float> net(params.config);
  const std::size_t n = heldout.sequence_count();
  double nll_sum = 0.0;
  std::size_t tokens = 0;
  for (std::size_t begin = 0; begin < n; begin += batch_rows) {
    const std::size_t end = std::min(n, begin + batch_rows);
    std::vector<std::span<const corpus::TokenId>> windows;
    for (std::size_t i = begin; i < end; ++i) windows.push_back(heldout.sequence(i));
    const model::Batch b = model::make_batch(windows);
    if (b.counted_tokens() == 0) continue;
    const auto r = model::batch_loss(net, std::span<const float>(params.values), b);
    nll_sum += r.mean_nll * static_cast<double>(r.count);
    tokens += r.count;
  }
  if (tokens == 0) throw std::invalid_argument("held-out chunk has no scorable tokens");
  PerplexityResult out;
  out.tokens = tokens;
  out.mean_nll = nll_sum / static_cast<double>(tokens);
  out.perplexity = std::exp(out.mean_nll);
  return out;
}

namespace {
std::string key_of(std::span<const corpus::TokenId> s) {
  return {reinterpret_cast<const char*>(s.data()), s.size_bytes()};
}
}  // namespace

void check_heldout_disjoint(const corpus::ChunkData& heldout, const corpus::CorpusManifest& manifest,
                            const std::filesystem::path& chunk_dir) {
  std::unordered_map<std::string, std::size_t> held;
  for (std::size_t i = 0; i < heldout.sequence_count(); ++i) held.emplace(key_of(heldout.sequence(i)), i);
  for (const auto& c : manifest.chunks) {
    const corpus::ChunkData chunk = corpus::read_chunk_file(chunk_dir / c.file);
    if (chunk.max_seq_len != heldout.max_seq_len) continue;
    for (std::size_t j = 0; j < chunk.sequence_count(); ++j) {
      auto it = held.find(key_of(chunk.sequence(j)));
      if (it != held.end())
        throw CorpusError("held-out sequence " + std::to_string(it->second) + " overlaps training chunk " +
                          std::to_string(c.index) + " (sequence " + std::to_string(j) + ")");
    }
  }
}

}  // namespace provlm::registry
