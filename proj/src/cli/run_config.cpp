#include "provlm/cli/run_config.hpp"

#include <cmath>

#include "provlm/analysis/report.hpp"
#include "provlm/common/file_io.hpp"
#include "provlm/corpus/stage_plan.hpp"
#include "provlm/corpus/tokenizer.hpp"

namespace provlm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join_issues(const std::vector<ConfigIssue>& issues) {
  std::string s = "invalid run configuration:";
  for (const auto& i : issues) s += "\n  " + (i.key.empty() ? std::string("<document>") : i.key) + ": " + i.message;
  return s;
}

// Pulls the leading "section.key" out of an error message when there is one.
std::string key_from_message(const std::string& msg, const std::string& fallback) {
  const auto end = msg.find_first_of(" :");
  const std::string head = msg.substr(0, end);
  return head.rfind(fallback + ".", 0) == 0 ? head : fallback;
}

corpus::MarkovSourceSpec markov_from_json(const json& g) {
  corpus::MarkovSourceSpec m;
  m.tokens = g.at("tokens").get<std::uint64_t>();
  if (g.contains("branch_probs")) m.branch_probs = g.at("branch_probs").get<std::vector<double>>();
  m.doc_min = g.value("doc_min", m.doc_min);
  m.doc_max = g.value("doc_max", m.doc_max);
  m.copies = g.value("copies", m.copies);
  m.seed = g.value("seed", m.seed);
  return m;
}

corpus::AlphabetSourceSpec alphabet_from_json(const json& g) {
  corpus::AlphabetSourceSpec a;
  a.tokens = g.at("tokens").get<std::uint64_t>();
  if (g.contains("weights")) a.weights = g.at("weights").get<std::vector<double>>();
  a.weight_jitter = g.value("weight_jitter", a.weight_jitter);
  a.shared_alphabet = g.value("shared_alphabet", a.shared_alphabet);
  a.doc_min = g.value("doc_min", a.doc_min);
  a.doc_max = g.value("doc_max", a.doc_max);
  a.copies = g.value("copies", a.copies);
  a.seed = g.value("seed", a.seed);
  return a;
}

nlohmann::ordered_json to_json(const corpus::AlphabetSourceSpec& a) {
  nlohmann::ordered_json j;
  j["kind"] = "alphabet";
  j["tokens"] = a.tokens;
  j["weights"] = a.weights;
  j["weight_jitter"] = a.weight_jitter;
  j["shared_alphabet"] = a.shared_alphabet;
  j["doc_min"] = a.doc_min;
  j["doc_max"] = a.doc_max;
  j["copies"] = a.copies;
  j["seed"] = a.seed;
  return j;
}

nlohmann::ordered_json to_json(const corpus::MarkovSourceSpec& m) {
  nlohmann::ordered_json j;
  j["kind"] = "markov";
  j["tokens"] = m.tokens;
  j["branch_probs"] = m.branch_probs;
  j["doc_min"] = m.doc_min;
  j["doc_max"] = m.doc_max;
  j["copies"] = m.copies;
  j["seed"] = m.seed;
  return j;
}

}  // namespace

std::uint64_t GeneratedSource::tokens() const {
  return std::visit([](const auto& s) { return s.tokens; }, spec);
}

std::vector<std::string> GeneratedSource::generate() const {
  if (const auto* m = std::get_if<corpus::MarkovSourceSpec>(&spec)) return corpus::generate_markov_documents(*m);
  return corpus::generate_alphabet_documents(std::get<corpus::AlphabetSourceSpec>(spec));
}

ConfigValidationError::ConfigValidationError(std::vector<ConfigIssue> issues)
    : ConfigError(join_issues(issues)), issues_(std::move(issues)) {}

fs::path generated_source_path(const fs::path& output_root, const std::string& name) {
  return output_root / "sources" / (name + ".bin");
}

RunConfig validate_config(const json& doc, const fs::path& base_dir) {
  std::vector<ConfigIssue> issues;
  auto issue = [&](std::string key, std::string msg) { issues.push_back({std::move(key), std::move(msg)}); };
  RunConfig c;
  c.base_dir = base_dir;

  if (!doc.is_object()) throw ConfigValidationError(std::vector<ConfigIssue>{{"", "configuration must be a JSON object"}});
  for (const char* section : {"schema_version", "output_root", "seeds", "corpus", "model", "train"})
    if (!doc.contains(section)) issue(section, "required key is missing");
  if (!issues.empty()) throw ConfigValidationError(issues);

  try {
    c.schema_version = doc.at("schema_version").get<int>();
    if (c.schema_version != kRunConfigSchemaVersion)
      issue("schema_version", "unsupported version " + std::to_string(c.schema_version) + " (expected " +
                                  std::to_string(kRunConfigSchemaVersion) + ")");
  } catch (const json::exception& e) {
    issue("schema_version", e.what());
  }
  try {
    const fs::path root = doc.at("output_root").get<std::string>();
    c.output_root = root.is_absolute() ? root : base_dir / root;
  } catch (const json::exception& e) {
    issue("output_root", e.what());
  }
  try {
    const json& s = doc.at("seeds");
    for (const auto& [key, value] : s.items())
      if (key != "corpus" && key != "init" && key != "train" && key != "probes") issue("seeds." + key, "unknown seed");
    c.seeds.corpus = s.at("corpus").get<std::uint64_t>();
    c.seeds.init = s.at("init").get<std::uint64_t>();
    c.seeds.train = s.at("train").get<std::uint64_t>();
    c.seeds.probes = s.at("probes").get<std::uint64_t>();
  } catch (const json::exception& e) {
    issue("seeds", e.what());
  }

  // Model.
  bool model_ok = false;
  try {
    c.train.model = model::model_config_from_json(doc.at("model"));
    c.train.model.validate();
    model_ok = true;
  } catch (const ConfigError& e) {
    issue("model", e.what());
  }
  if (c.train.model.vocab_size != corpus::kVocabSize)
    issue("model.vocab_size", "is " + std::to_string(c.train.model.vocab_size) + " but tokenizer " +
                                  std::string(corpus::kTokenizerId) + " has " + std::to_string(corpus::kVocabSize) +
                                  " ids");

  // Corpus. Generated sources are rewritten to point at their output file.
  bool corpus_ok = false;
  std::vector<std::uint64_t> available;
  {
    json cj = doc.at("corpus");
    if (cj.contains("seed")) issue("corpus.seed", "set the corpus seed under seeds.corpus");
    try {
      auto& sources = cj.at("sources");
      for (std::size_t i = 0; i < sources.size(); ++i) {
        auto& s = sources[i];
        const std::string key = "corpus.sources[" + std::to_string(i) + "]";
        if (!s.contains("generator")) continue;
        if (s.contains("path")) issue(key + ".path", "a generated source takes no path");
        const json& g = s.at("generator");
        const std::string kind = g.value("kind", std::string("markov"));
        GeneratedSource gen;
        gen.name = s.at("name").get<std::string>();
        std::uint32_t doc_min = 0, doc_max = 0;
        if (kind == "markov") {
          const auto m = markov_from_json(g);
          if (m.branch_probs.empty()) issue(key + ".generator.branch_probs", "needs at least one branch");
          doc_min = m.doc_min;
          doc_max = m.doc_max;
          gen.spec = m;
        } else if (kind == "alphabet") {
          const auto a = alphabet_from_json(g);
          if (a.weights.empty() || a.weights.size() > 256) issue(key + ".generator.weights", "needs 1 to 256 weights");
          doc_min = a.doc_min;
          doc_max = a.doc_max;
          gen.spec = a;
        } else {
          issue(key + ".generator.kind", "unknown generator '" + kind + "'");
          continue;
        }
        if (std::visit([](const auto& g) { return g.copies; }, gen.spec) == 0)
          issue(key + ".generator.copies", "must be >= 1");
        if (gen.tokens() == 0) issue(key + ".generator.tokens", "must be > 0");
        if (doc_min == 0 || doc_min > doc_max) issue(key + ".generator.doc_min", "must satisfy 0 < doc_min <= doc_max");
        c.generated.push_back(gen);
        s["path"] = generated_source_path(c.output_root, gen.name).string();
        s["format"] = "binary";
        s.erase("generator");
      }
      cj["seed"] = c.seeds.corpus;
      c.corpus = corpus::corpus_config_from_json(cj, base_dir);
      corpus_ok = true;
    } catch (const CorpusError& e) {
      issue("corpus", e.what());
    } catch (const json::exception& e) {
      issue("corpus", e.what());
    }
  }
  if (corpus_ok) {
    if (c.corpus.n_chunks == 0) issue("corpus.n_chunks", "must be > 0");
    if (c.corpus.max_seq_len < 2) issue("corpus.max_seq_len", "must be at least 2");
    if (model_ok && c.corpus.max_seq_len > c.train.model.max_seq_len)
      issue("corpus.max_seq_len", "exceeds model.max_seq_len (" + std::to_string(c.train.model.max_seq_len) + ")");
    if (c.corpus.heldout_sequences == 0)
      issue("corpus.heldout_sequences", "must be > 0; checkpoints are evaluated on the held-out sequences");
    if (!c.corpus.stages.empty() && c.corpus.stages.size() > c.corpus.n_chunks)
      issue("corpus.n_chunks", std::to_string(c.corpus.n_chunks) + " chunks cannot cover " +
                                   std::to_string(c.corpus.stages.size()) + " stages in corpus.stages");

    for (std::size_t i = 0; i < c.corpus.sources.size(); ++i) {
      const auto& s = c.corpus.sources[i];
      const std::string key = "corpus.sources[" + std::to_string(i) + "]";
      std::uint64_t have = 0;
      auto gen = std::find_if(c.generated.begin(), c.generated.end(), [&](const auto& g) { return g.name == s.name; });
      if (gen != c.generated.end()) {
        have = gen->tokens();
      } else {
        const fs::path p = s.path.is_absolute() ? s.path : base_dir / s.path;
        if (!fs::exists(p)) {
          issue(key + ".path", "source '" + s.name + "': file not found: " + p.string());
          available.push_back(0);
          continue;
        }
        try {
          have = corpus::SourceCursor(s, base_dir).available_tokens();
        } catch (const std::exception& e) {
          issue(key + ".path", e.what());
        }
      }
      available.push_back(have);
      std::uint64_t need = 0;
      if (c.corpus.stages.empty()) {
        need = s.weight_tokens;
      } else {
        for (const auto& st : c.corpus.stages)
          for (const auto& [name, t] : st.budgets)
            if (name == s.name) need += t;
      }
      if (need > have)
        issue(key, "stage budgets draw " + std::to_string(need) + " tokens from source '" + s.name + "' but it holds " +
                       std::to_string(have));
    }
    for (const auto& name : c.corpus.heldout_sources)
      if (std::none_of(c.corpus.sources.begin(), c.corpus.sources.end(), [&](const auto& s) { return s.name == name; }))
        issue("corpus.heldout_sources", "unknown source '" + name + "'");
    try {
      (void)corpus::build_stage_plan(c.corpus.stages, c.corpus.sources, std::max<std::uint32_t>(c.corpus.n_chunks, 1));
    } catch (const CorpusError& e) {
      issue("corpus.stages", e.what());
    }
  }

  // Training plan.
  try {
    json tj = doc.at("train");
    for (const char* k : {"model", "init_seed", "train_seed"})
      if (tj.contains(k)) issue(std::string("train.") + k, "set this under the model or seeds section");
    tj.erase("model");
    tj.erase("init_seed");
    tj.erase("train_seed");
    const model::ModelConfig m = c.train.model;
    c.train = trainer::train_plan_from_json(tj);
    c.train.model = m;
    c.train.init_seed = c.seeds.init;
    c.train.train_seed = c.seeds.train;
    c.train.validate();
  } catch (const ConfigError& e) {
    issue(key_from_message(e.what(), "train"), e.what());
  } catch (const json::exception& e) {
    issue("train", e.what());
  }
  if (corpus_ok && c.train.total_steps == 0 && c.corpus.max_seq_len > 0 && c.corpus.n_chunks > 0 &&
      c.train.batch_size_sequences > 0) {
    // Packing adds separators, so this slightly undercounts the derived step budget.
    std::uint64_t tokens = 0;
    if (c.corpus.stages.empty())
      for (const auto& s : c.corpus.sources) tokens += s.weight_tokens;
    else
      for (const auto& st : c.corpus.stages)
        for (const auto& [name, t] : st.budgets) tokens += t;
    const std::uint64_t seqs = tokens / c.corpus.max_seq_len;
    const std::uint64_t train_seqs = seqs > c.corpus.heldout_sequences ? seqs - c.corpus.heldout_sequences : 0;
    if (train_seqs < c.corpus.n_chunks)
      issue("corpus.n_chunks", "about " + std::to_string(train_seqs) + " training sequences cannot fill " +
                                   std::to_string(c.corpus.n_chunks) + " chunks");
    const std::uint64_t per_chunk = train_seqs / c.corpus.n_chunks;
    const std::uint64_t steps =
        c.corpus.n_chunks * ((per_chunk + c.train.batch_size_sequences - 1) / c.train.batch_size_sequences);
    if (c.train.warmup_steps >= steps)
      issue("train.warmup_steps", "must be smaller than train.total_steps (derived from the corpus: about " +
                                      std::to_string(steps) + ")");
  }

  // Analysis.
  if (doc.contains("analysis")) {
    try {
      const json& a = doc.at("analysis");
      c.analysis.n_probes = a.value("n_probes", c.analysis.n_probes);
      c.analysis.k = a.value("k", c.analysis.k);
      c.analysis.l = a.value("l", c.analysis.l);
      c.analysis.checkpoints = a.value("checkpoints", c.analysis.checkpoints);
      c.analysis.evaluate_all = a.value("evaluate_all", c.analysis.evaluate_all);
    } catch (const json::exception& e) {
      issue("analysis", e.what());
    }
  }
  if (c.analysis.n_probes == 0) issue("analysis.n_probes", "must be > 0");
  if (c.analysis.k == 0) issue("analysis.k", "must be > 0");
  if (c.analysis.l == 0) issue("analysis.l", "must be > 0");
  if (corpus_ok && c.analysis.k + c.analysis.l > c.corpus.max_seq_len)
    issue("analysis.k", "analysis.k + analysis.l = " + std::to_string(c.analysis.k + c.analysis.l) +
                            " exceeds corpus.max_seq_len (" + std::to_string(c.corpus.max_seq_len) + ")");
  if (corpus_ok && c.corpus.n_chunks > 0) {
    try {
      (void)analysis::select_checkpoints(c.analysis.checkpoints, c.corpus.n_chunks);
    } catch (const ConfigError& e) {
      issue("analysis.checkpoints", e.what());
    }
  }

  if (!issues.empty()) throw ConfigValidationError(std::move(issues));
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigValidationError(std::vector<ConfigIssue>{{"", path.string() + ": " + e.what()}});
  }
  return validate_config(doc, fs::absolute(path).parent_path());
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["schema_version"] = c.schema_version;
  j["seeds"] = {{"corpus", c.seeds.corpus}, {"init", c.seeds.init}, {"train", c.seeds.train}, {"probes", c.seeds.probes}};
  nlohmann::ordered_json corpus = corpus::to_json(c.corpus);
  corpus.erase("seed");
  for (std::size_t i = 0; i < c.corpus.sources.size(); ++i) {
    const auto& s = c.corpus.sources[i];
    auto gen = std::find_if(c.generated.begin(), c.generated.end(), [&](const auto& g) { return g.name == s.name; });
    if (gen == c.generated.end()) continue;
    auto& js = corpus["sources"][i];
    js.erase("path");
    js.erase("format");
    js["generator"] = std::visit([](const auto& g) { return to_json(g); }, gen->spec);
  }
  j["corpus"] = corpus;
  j["model"] = model::to_json(c.train.model);
  nlohmann::ordered_json train = trainer::to_json(c.train);
  train.erase("model");
  train.erase("init_seed");
  train.erase("train_seed");
  j["train"] = train;
  j["analysis"] = {{"n_probes", c.analysis.n_probes},
                   {"k", c.analysis.k},
                   {"l", c.analysis.l},
                   {"checkpoints", c.analysis.checkpoints},
                   {"evaluate_all", c.analysis.evaluate_all}};
  return j;
}

}  // namespace provlm::cli
