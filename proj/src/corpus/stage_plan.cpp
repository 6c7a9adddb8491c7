#include "provlm/corpus/stage_plan.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "provlm/common/error.hpp"

namespace provlm::corpus {

std::uint64_t Stage::total_tokens() const {
  std::uint64_t t = 0;
  for (const auto& [_, b] : budgets) t += b;
  return t;
}

StagePlan build_stage_plan(std::span<const StageSpec> specs, std::span<const SourceSpec> sources,
                           std::uint32_t n_chunks) {
  std::vector<StageSpec> effective(specs.begin(), specs.end());
  if (effective.empty()) {
    StageSpec all{"stage0", {}};
    for (const auto& s : sources) all.budgets.emplace_back(s.name, s.weight_tokens);
    effective.push_back(std::move(all));
  }
  if (n_chunks < effective.size())
    throw CorpusError("n_chunks (" + std::to_string(n_chunks) + ") is smaller than the number of stages (" +
                      std::to_string(effective.size()) + ")");

  std::map<std::string, std::uint64_t> requested;
  for (const auto& st : effective) {
    for (const auto& [name, budget] : st.budgets) {
      const bool known = std::any_of(sources.begin(), sources.end(), [&](const SourceSpec& s) { return s.name == name; });
      if (!known) throw CorpusError("stage '" + st.id + "' references unknown source '" + name + "'");
      requested[name] += budget;
    }
  }
  for (const auto& s : sources) {
    if (requested[s.name] > s.weight_tokens)
      throw CorpusError("stage budgets for source '" + s.name + "' total " + std::to_string(requested[s.name]) +
                        " tokens, exceeding its " + std::to_string(s.weight_tokens) + " available");
  }

  std::vector<std::uint64_t> totals;
  for (const auto& st : effective) {
    std::uint64_t t = 0;
    for (const auto& [_, b] : st.budgets) t += b;
    if (t == 0) throw CorpusError("stage '" + st.id + "' has an empty budget");
    totals.push_back(t);
  }
  const std::uint64_t grand = std::accumulate(totals.begin(), totals.end(), std::uint64_t{0});

  // Largest-remainder apportionment using exact integer arithmetic.
  const std::size_t n = effective.size();
  std::vector<std::uint64_t> counts(n);
  std::vector<std::pair<std::uint64_t, std::size_t>> remainders;
  std::uint64_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned __int128 scaled = static_cast<unsigned __int128>(totals[i]) * n_chunks;
    counts[i] = static_cast<std::uint64_t>(scaled / grand);
    remainders.emplace_back(static_cast<std::uint64_t>(scaled % grand), i);
    assigned += counts[i];
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < n_chunks; ++r, ++assigned) ++counts[remainders[r % n].second];

  for (std::size_t i = 0; i < n; ++i) {
    if (counts[i] > 0) continue;
    const auto donor = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    --counts[donor];
    counts[i] = 1;
  }

  StagePlan plan;
  std::uint32_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Stage st;
    st.id = effective[i].id;
    st.budgets = effective[i].budgets;
    st.chunk_begin = next;
    next += static_cast<std::uint32_t>(counts[i]);
    st.chunk_end = next;
    plan.stages.push_back(std::move(st));
  }
  return plan;
}

}  // namespace provlm::corpus
