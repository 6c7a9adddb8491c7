#include "provlm/corpus/prepare.hpp"

#include <cstdio>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>
#include <sstream>

#include "provlm/common/error.hpp"
#include "provlm/common/file_io.hpp"
#include "provlm/common/rng.hpp"
#include "provlm/common/sha256.hpp"
#include "provlm/corpus/chunk_file.hpp"
#include "provlm/corpus/permute.hpp"

namespace provlm::corpus {

CorpusConfig corpus_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  CorpusConfig c;
  c.base_dir = base_dir;
  try {
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("n_chunks")) c.n_chunks = j.at("n_chunks").get<std::uint32_t>();
    if (j.contains("max_seq_len")) c.max_seq_len = j.at("max_seq_len").get<std::uint32_t>();
    if (j.contains("heldout_sequences")) c.heldout_sequences = j.at("heldout_sequences").get<std::uint64_t>();
    if (j.contains("heldout_sources")) c.heldout_sources = j.at("heldout_sources").get<std::vector<std::string>>();
    std::set<std::string> names;
    for (const auto& s : j.at("sources")) {
      SourceSpec spec;
      spec.name = s.at("name").get<std::string>();
      spec.path = s.at("path").get<std::string>();
      spec.weight_tokens = s.at("weight_tokens").get<std::uint64_t>();
      spec.format = s.contains("format") ? parse_source_format(s.at("format").get<std::string>())
                                         : infer_source_format(spec.path);
      if (spec.weight_tokens == 0) throw CorpusError("source '" + spec.name + "': weight_tokens must be > 0");
      if (!names.insert(spec.name).second) throw CorpusError("duplicate source name '" + spec.name + "'");
      c.sources.push_back(std::move(spec));
    }
    if (j.contains("stages")) {
      for (const auto& st : j.at("stages")) {
        StageSpec spec;
        spec.id = st.at("id").get<std::string>();
        for (const auto& [name, tokens] : st.at("budgets").items())
          spec.budgets.emplace_back(name, tokens.get<std::uint64_t>());
        c.stages.push_back(std::move(spec));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorpusError(std::string("malformed sources document: ") + e.what());
  }
  if (c.sources.empty()) throw CorpusError("sources document lists no sources");
  return c;
}

nlohmann::ordered_json to_json(const CorpusConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["n_chunks"] = c.n_chunks;
  j["max_seq_len"] = c.max_seq_len;
  j["heldout_sequences"] = c.heldout_sequences;
  if (!c.heldout_sources.empty()) j["heldout_sources"] = c.heldout_sources;
  j["sources"] = nlohmann::ordered_json::array();
  for (const auto& s : c.sources)
    j["sources"].push_back({{"name", s.name},
                            {"path", s.path.generic_string()},
                            {"weight_tokens", s.weight_tokens},
                            {"format", to_string(s.format)}});
  j["stages"] = nlohmann::ordered_json::array();
  for (const auto& st : c.stages) {
    nlohmann::ordered_json b = nlohmann::ordered_json::object();
    for (const auto& [name, t] : st.budgets) b[name] = t;
    j["stages"].push_back({{"id", st.id}, {"budgets", b}});
  }
  return j;
}

std::vector<std::span<const SequenceRecord>> partition_chunks(std::span<const SequenceRecord> records,
                                                              std::uint32_t n_chunks) {
  const auto sizes = chunk_block_sizes(records.size(), n_chunks);
  std::vector<std::span<const SequenceRecord>> blocks;
  std::size_t offset = 0;
  for (auto s : sizes) {
    blocks.push_back(records.subspan(offset, s));
    offset += s;
  }
  return blocks;
}

std::string chunk_file_name(std::uint32_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "chunk_%05u.bin", index);
  return buf;
}

std::uint64_t stage_seed(std::uint64_t corpus_seed, std::size_t stage) {
  return stage == 0 ? corpus_seed : derive_seed(corpus_seed, stage);
}

namespace {

ChunkEntry write_chunk(const std::filesystem::path& dir, const std::string& file, std::uint32_t index,
                       std::span<const SequenceRecord> records, std::uint32_t max_seq_len) {
  const auto bytes = encode_chunk(records, max_seq_len);
  write_file_atomic(dir / file, bytes);
  ChunkEntry e;
  e.index = index;
  e.file = file;
  e.sequences = records.size();
  e.tokens = records.size() * max_seq_len;
  e.sha256 = sha256_hex(bytes);
  return e;
}

void append_origin(std::ostringstream& csv, const SequenceRecord& r, const std::string& chunk) {
  csv << r.global_index << ',' << chunk << ',' << r.origin.source << ',' << r.origin.index << ',' << r.n_pad << ','
      << (r.crosses_document ? 1 : 0) << '\n';
}

std::string content_key(const SequenceRecord& r) {
  return {reinterpret_cast<const char*>(r.tokens.data()), r.tokens.size() * sizeof(TokenId)};
}

}  // namespace

CorpusManifest prepare_corpus(const CorpusConfig& config, const std::filesystem::path& out_dir) {
  if (config.max_seq_len < 2) throw CorpusError("max_seq_len must be >= 2");
  std::filesystem::create_directories(out_dir);

  const StagePlan plan = build_stage_plan(config.stages, config.sources, config.n_chunks);

  std::vector<SourceCursor> cursors;
  for (const auto& s : config.sources) cursors.emplace_back(s, config.base_dir);
  std::map<std::string, std::set<std::uint64_t>> docs_touched;

  CorpusManifest m;
  m.seed = config.seed;
  m.n_chunks = config.n_chunks;
  m.tokenizer_id = std::string(kTokenizerId);
  m.max_seq_len = config.max_seq_len;
  m.stage_plan = plan;
  m.heldout_sources = config.heldout_sources;

  std::ostringstream origins;
  origins << "global_index,chunk,source,document,n_pad,crosses_document\n";
  std::uint64_t stream_position = 0;
  std::unordered_set<std::string> earlier_content;  // training sequences of finished stages

  for (std::size_t s = 0; s < plan.stages.size(); ++s) {
    const Stage& stage = plan.stages[s];
    std::vector<Document> docs;
    for (const auto& [name, budget] : stage.budgets) {
      auto it = std::find_if(cursors.begin(), cursors.end(), [&](const SourceCursor& c) { return c.spec().name == name; });
      auto drawn = it->draw(budget);
      for (auto& d : drawn) {
        docs_touched[name].insert(d.origin.index);
        docs.push_back(std::move(d));
      }
    }
    const auto packed = pack_sequences(docs, config.max_seq_len);
    const auto perm = global_permute(packed.size(), stage_seed(config.seed, s));
    std::vector<SequenceRecord> permuted;
    permuted.reserve(packed.size());
    for (auto idx : perm) permuted.push_back(packed[idx]);

    std::vector<SequenceRecord> heldout;
    if (s + 1 == plan.stages.size() && config.heldout_sequences > 0) {
      if (config.heldout_sequences >= permuted.size())
        throw CorpusError("heldout_sequences exceeds the final stage's sequence count");
      if (config.heldout_sources.empty()) {
        heldout.assign(permuted.end() - static_cast<std::ptrdiff_t>(config.heldout_sequences), permuted.end());
        permuted.resize(permuted.size() - config.heldout_sequences);
      } else {
        // Walk back from the tail, taking eligible sequences; the rest keep their order.
        std::unordered_map<std::string, std::uint32_t> copies;
        for (const auto& r : permuted) ++copies[content_key(r)];
        std::vector<bool> take(permuted.size(), false);
        std::uint64_t found = 0;
        for (std::size_t i = permuted.size(); i-- > 0 && found < config.heldout_sequences;) {
          const auto& r = permuted[i];
          if (r.crosses_document || r.padded()) continue;
          if (std::find(config.heldout_sources.begin(), config.heldout_sources.end(), r.origin.source) ==
              config.heldout_sources.end())
            continue;
          const auto key = content_key(r);
          if (copies[key] > 1 || earlier_content.contains(key)) continue;
          take[i] = true;
          ++found;
        }
        if (found < config.heldout_sequences)
          throw CorpusError("only " + std::to_string(found) + " eligible held-out sequences in the final stage");
        std::vector<SequenceRecord> rest;
        for (std::size_t i = 0; i < permuted.size(); ++i)
          (take[i] ? heldout : rest).push_back(std::move(permuted[i]));
        permuted = std::move(rest);
      }
    }
    std::span<const SequenceRecord> training(permuted);

    const auto blocks = partition_chunks(training, stage.chunk_count());
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const auto index = static_cast<std::uint32_t>(stage.chunk_begin + b);
      std::vector<SequenceRecord> block(blocks[b].begin(), blocks[b].end());
      for (auto& r : block) {
        r.global_index = stream_position++;
        append_origin(origins, r, std::to_string(index));
        m.content_tokens += r.tokens.size() - r.n_pad;
      }
      if (!config.heldout_sources.empty())
        for (const auto& r : block) earlier_content.insert(content_key(r));
      auto entry = write_chunk(out_dir, chunk_file_name(index), index, block, config.max_seq_len);
      m.total_tokens += entry.tokens;
      m.chunks.push_back(std::move(entry));
    }
    if (!heldout.empty()) {
      std::vector<SequenceRecord>& block = heldout;
      for (auto& r : block) {
        r.global_index = stream_position++;
        append_origin(origins, r, "heldout");
      }
      m.heldout = write_chunk(out_dir, kHeldoutFile, 0, block, config.max_seq_len);
    }
  }

  for (const auto& c : cursors) {
    SourceEntry e;
    e.spec = c.spec();
    e.drawn_tokens = c.consumed_tokens();
    e.documents = docs_touched[c.spec().name].size();
    m.sources.push_back(std::move(e));
  }

  const std::string origins_text = origins.str();
  write_file_atomic(out_dir / kOriginsFile, origins_text);
  m.origins_file = kOriginsFile;
  m.origins_sha256 = sha256_hex(origins_text);

  write_manifest(out_dir / kManifestFile, m);
  return m;
}

}  // namespace provlm::corpus
