#include "provlm/corpus/synthetic.hpp"

#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "provlm/common/rng.hpp"

namespace provlm::corpus {

namespace {

// Emits every document `copies` times, copies placed at random positions.
std::vector<std::string> replicate(std::vector<std::string> docs, std::uint32_t copies, std::uint64_t tokens,
                                   Xoshiro256& rng) {
  if (copies <= 1) return docs;
  std::vector<std::string> out;
  for (const auto& d : docs)
    for (std::uint32_t c = 0; c < copies; ++c) out.push_back(d);
  for (std::size_t i = out.size(); i > 1; --i) std::swap(out[i - 1], out[rng.bounded(i)]);
  std::uint64_t total = 0;
  for (auto& d : out) {
    if (total + d.size() > tokens) d.resize(tokens - total);
    total += d.size();
  }
  std::erase_if(out, [](const std::string& d) { return d.empty(); });
  return out;
}

}  // namespace

std::vector<std::string> generate_markov_documents(const MarkovSourceSpec& spec) {
  if (spec.branch_probs.empty()) throw std::invalid_argument("markov source needs at least one branch");
  if (spec.doc_min == 0 || spec.doc_max < spec.doc_min) throw std::invalid_argument("bad markov document length range");

  Xoshiro256 rng(spec.seed);
  std::vector<std::array<std::uint8_t, 256>> perms(spec.branch_probs.size());
  for (auto& p : perms) {
    std::iota(p.begin(), p.end(), std::uint8_t{0});
    for (int i = 255; i > 0; --i) std::swap(p[i], p[rng.bounded(static_cast<std::uint64_t>(i) + 1)]);
  }
  std::vector<double> cdf(spec.branch_probs.size());
  std::partial_sum(spec.branch_probs.begin(), spec.branch_probs.end(), cdf.begin());
  for (auto& c : cdf) c /= cdf.back();

  if (spec.copies == 0) throw std::invalid_argument("copies must be >= 1");
  const std::uint64_t unique = (spec.tokens + spec.copies - 1) / spec.copies;
  std::vector<std::string> docs;
  std::uint64_t produced = 0;
  while (produced < unique) {
    auto len = spec.doc_min + rng.bounded(spec.doc_max - spec.doc_min + 1);
    len = std::min<std::uint64_t>(len, unique - produced);
    std::string doc(len, '\0');
    auto cur = static_cast<std::uint8_t>(rng.bounded(256));
    for (std::uint64_t i = 0; i < len; ++i) {
      doc[i] = static_cast<char>(cur);
      const double u = rng.uniform();
      std::size_t b = 0;
      while (b + 1 < cdf.size() && u >= cdf[b]) ++b;
      cur = perms[b][cur];
    }
    produced += len;
    docs.push_back(std::move(doc));
  }
  return replicate(std::move(docs), spec.copies, spec.tokens, rng);
}

std::vector<std::string> generate_alphabet_documents(const AlphabetSourceSpec& spec) {
  if (spec.weights.empty() || spec.weights.size() > 256) throw std::invalid_argument("alphabet size must be in [1, 256]");
  if (spec.doc_min == 0 || spec.doc_max < spec.doc_min) throw std::invalid_argument("bad alphabet document length range");

  Xoshiro256 rng(spec.seed);
  std::vector<double> cdf(spec.weights.size());
  auto build_cdf = [&](const std::vector<double>& w) {
    std::partial_sum(w.begin(), w.end(), cdf.begin());
    for (auto& c : cdf) c /= cdf.back();
  };
  build_cdf(spec.weights);

  std::array<std::uint8_t, 256> bytes;
  std::iota(bytes.begin(), bytes.end(), std::uint8_t{0});
  if (spec.copies == 0) throw std::invalid_argument("copies must be >= 1");
  const std::uint64_t unique = (spec.tokens + spec.copies - 1) / spec.copies;
  std::vector<std::string> docs;
  std::uint64_t produced = 0;
  while (produced < unique) {
    auto len = spec.doc_min + rng.bounded(spec.doc_max - spec.doc_min + 1);
    len = std::min<std::uint64_t>(len, unique - produced);
    if (!spec.shared_alphabet || docs.empty())
      for (std::size_t i = 0; i < spec.weights.size(); ++i) std::swap(bytes[i], bytes[i + rng.bounded(256 - i)]);
    if (spec.weight_jitter > 0) {
      std::vector<double> w = spec.weights;
      for (auto& x : w) x *= std::exp(spec.weight_jitter * rng.normal());
      build_cdf(w);
    }
    std::string doc(len, '\0');
    for (std::uint64_t i = 0; i < len; ++i) {
      const double u = rng.uniform();
      std::size_t b = 0;
      while (b + 1 < cdf.size() && u >= cdf[b]) ++b;
      doc[i] = static_cast<char>(bytes[b]);
    }
    produced += len;
    docs.push_back(std::move(doc));
  }
  return replicate(std::move(docs), spec.copies, spec.tokens, rng);
}

}  // namespace provlm::corpus
