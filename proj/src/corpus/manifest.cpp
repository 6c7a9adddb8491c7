#include "provlm/corpus/manifest.hpp"

#include "provlm/common/error.hpp"
#include "provlm/common/file_io.hpp"
#include "provlm/common/sha256.hpp"
#include "provlm/corpus/chunk_file.hpp"

namespace provlm::corpus {

using ojson = nlohmann::ordered_json;

const ChunkEntry& CorpusManifest::chunk(std::uint32_t index) const {
  if (index >= chunks.size()) throw CorpusError("chunk index " + std::to_string(index) + " out of range");
  return chunks[index];
}

namespace {

ojson chunk_to_json(const ChunkEntry& c) {
  ojson j;
  j["index"] = c.index;
  j["file"] = c.file;
  j["sequences"] = c.sequences;
  j["tokens"] = c.tokens;
  j["sha256"] = c.sha256;
  return j;
}

ChunkEntry chunk_from_json(const nlohmann::json& j) {
  ChunkEntry c;
  c.index = j.at("index").get<std::uint32_t>();
  c.file = j.at("file").get<std::string>();
  c.sequences = j.at("sequences").get<std::uint64_t>();
  c.tokens = j.at("tokens").get<std::uint64_t>();
  c.sha256 = j.at("sha256").get<std::string>();
  return c;
}

ojson budgets_to_json(const SourceBudgets& b) {
  ojson j = ojson::object();
  for (const auto& [name, tokens] : b) j[name] = tokens;
  return j;
}

}  // namespace

ojson to_json(const CorpusManifest& m) {
  ojson j;
  j["schema_version"] = m.schema_version;
  j["tokenizer_id"] = m.tokenizer_id;
  j["seed"] = m.seed;
  j["n_chunks"] = m.n_chunks;
  j["max_seq_len"] = m.max_seq_len;
  j["sources"] = ojson::array();
  for (const auto& s : m.sources) {
    ojson e;
    e["name"] = s.spec.name;
    e["path"] = s.spec.path.generic_string();
    e["format"] = to_string(s.spec.format);
    e["weight_tokens"] = s.spec.weight_tokens;
    e["drawn_tokens"] = s.drawn_tokens;
    e["documents"] = s.documents;
    j["sources"].push_back(std::move(e));
  }
  j["stages"] = ojson::array();
  for (const auto& st : m.stage_plan.stages) {
    ojson e;
    e["id"] = st.id;
    e["budgets"] = budgets_to_json(st.budgets);
    e["chunk_begin"] = st.chunk_begin;
    e["chunk_end"] = st.chunk_end;
    j["stages"].push_back(std::move(e));
  }
  j["chunks"] = ojson::array();
  for (const auto& c : m.chunks) j["chunks"].push_back(chunk_to_json(c));
  j["total_tokens"] = m.total_tokens;
  j["content_tokens"] = m.content_tokens;
  j["heldout"] = m.heldout ? chunk_to_json(*m.heldout) : ojson(nullptr);
  if (!m.heldout_sources.empty()) j["heldout_sources"] = m.heldout_sources;
  ojson origins;
  origins["file"] = m.origins_file;
  origins["sha256"] = m.origins_sha256;
  j["origins"] = std::move(origins);
  return j;
}

CorpusManifest manifest_from_json(const nlohmann::json& j) {
  CorpusManifest m;
  try {
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != kManifestSchemaVersion)
      throw CorpusError("unsupported manifest schema_version " + std::to_string(m.schema_version));
    m.tokenizer_id = j.at("tokenizer_id").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.n_chunks = j.at("n_chunks").get<std::uint32_t>();
    m.max_seq_len = j.at("max_seq_len").get<std::uint32_t>();
    for (const auto& e : j.at("sources")) {
      SourceEntry s;
      s.spec.name = e.at("name").get<std::string>();
      s.spec.path = e.at("path").get<std::string>();
      s.spec.format = parse_source_format(e.at("format").get<std::string>());
      s.spec.weight_tokens = e.at("weight_tokens").get<std::uint64_t>();
      s.drawn_tokens = e.at("drawn_tokens").get<std::uint64_t>();
      s.documents = e.at("documents").get<std::uint64_t>();
      m.sources.push_back(std::move(s));
    }
    for (const auto& e : j.at("stages")) {
      Stage st;
      st.id = e.at("id").get<std::string>();
      for (const auto& [name, tokens] : e.at("budgets").items()) st.budgets.emplace_back(name, tokens.get<std::uint64_t>());
      st.chunk_begin = e.at("chunk_begin").get<std::uint32_t>();
      st.chunk_end = e.at("chunk_end").get<std::uint32_t>();
      m.stage_plan.stages.push_back(std::move(st));
    }
    for (const auto& e : j.at("chunks")) m.chunks.push_back(chunk_from_json(e));
    m.total_tokens = j.at("total_tokens").get<std::uint64_t>();
    m.content_tokens = j.at("content_tokens").get<std::uint64_t>();
    if (!j.at("heldout").is_null()) m.heldout = chunk_from_json(j.at("heldout"));
    if (j.contains("heldout_sources")) m.heldout_sources = j.at("heldout_sources").get<std::vector<std::string>>();
    m.origins_file = j.at("origins").at("file").get<std::string>();
    m.origins_sha256 = j.at("origins").at("sha256").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw CorpusError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

std::string serialize_manifest(const CorpusManifest& m) { return to_json(m).dump(2) + "\n"; }

void write_manifest(const std::filesystem::path& path, const CorpusManifest& m) {
  write_file_atomic(path, serialize_manifest(m));
}

CorpusManifest read_manifest(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CorpusError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  return manifest_from_json(j);
}

std::vector<std::uint32_t> VerificationReport::failed_chunks() const {
  std::vector<std::uint32_t> out;
  for (const auto& c : chunks)
    if (!c.ok) out.push_back(c.index);
  return out;
}

namespace {

ChunkCheck check_chunk(const ChunkEntry& entry, std::uint32_t max_seq_len, const std::filesystem::path& dir) {
  ChunkCheck check{entry.index, entry.file, false, {}};
  const auto path = dir / entry.file;
  if (!std::filesystem::exists(path)) {
    check.reason = "missing file";
    return check;
  }
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(path);
  } catch (const IoError& e) {
    check.reason = e.what();
    return check;
  }
  const std::uint64_t expected_size = kChunkHeaderBytes + entry.sequences * max_seq_len * 2;
  if (bytes.size() < kChunkHeaderBytes ||
      !std::equal(kChunkMagic, kChunkMagic + 4, reinterpret_cast<const char*>(bytes.data()))) {
    check.reason = bytes.size() < kChunkHeaderBytes ? "length mismatch" : "bad magic";
    return check;
  }
  if (bytes.size() != expected_size) {
    check.reason = "length mismatch";
    return check;
  }
  ByteReader r(bytes);
  r.take(4);
  const std::uint32_t count = r.u32();
  const std::uint32_t len = r.u32();
  if (count != entry.sequences || len != max_seq_len) {
    check.reason = "header mismatch";
    return check;
  }
  if (entry.tokens != std::uint64_t{count} * len) {
    check.reason = "token count mismatch";
    return check;
  }
  if (sha256_hex(bytes) != entry.sha256) {
    check.reason = "checksum mismatch";
    return check;
  }
  check.ok = true;
  return check;
}

}  // namespace

VerificationReport verify_manifest(const CorpusManifest& manifest, const std::filesystem::path& chunk_dir) {
  VerificationReport report;
  std::uint64_t token_sum = 0;
  for (const auto& c : manifest.chunks) {
    report.chunks.push_back(check_chunk(c, manifest.max_seq_len, chunk_dir));
    token_sum += c.tokens;
  }
  if (manifest.heldout) report.extras.push_back(check_chunk(*manifest.heldout, manifest.max_seq_len, chunk_dir));
  if (!manifest.origins_file.empty()) {
    ChunkCheck o{0, manifest.origins_file, false, {}};
    const auto path = chunk_dir / manifest.origins_file;
    if (!std::filesystem::exists(path))
      o.reason = "missing file";
    else if (sha256_file_hex(path) != manifest.origins_sha256)
      o.reason = "checksum mismatch";
    else
      o.ok = true;
    report.extras.push_back(o);
  }
  report.ok = token_sum == manifest.total_tokens && manifest.chunks.size() == manifest.n_chunks;
  for (const auto& c : report.chunks) report.ok = report.ok && c.ok;
  for (const auto& c : report.extras) report.ok = report.ok && c.ok;
  return report;
}

nlohmann::ordered_json to_json(const VerificationReport& r) {
  ojson j;
  j["ok"] = r.ok;
  auto entries = [](const std::vector<ChunkCheck>& v) {
    ojson a = ojson::array();
    for (const auto& c : v) {
      ojson e;
      e["index"] = c.index;
      e["file"] = c.file;
      e["ok"] = c.ok;
      if (!c.ok) e["reason"] = c.reason;
      a.push_back(std::move(e));
    }
    return a;
  };
  j["chunks"] = entries(r.chunks);
  j["extras"] = entries(r.extras);
  return j;
}

}  // namespace provlm::corpus
