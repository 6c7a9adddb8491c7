#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "provlm/cli/pipeline.hpp"
#include "provlm/cli/run_config.hpp"
#include "provlm/common/file_io.hpp"
#include "test_util.hpp"

using namespace provlm;
using namespace provlm::cli;
namespace fs = std::filesystem;
using nlohmann::json;
using provlm::testing::TempDir;

namespace {

json tiny_config() {
  return json::parse(R"({
    "schema_version": 1,
    "output_root": "out",
    "seeds": {"corpus": 1, "init": 2, "train": 3, "probes": 4},
    "corpus": {
      "n_chunks": 3, "max_seq_len": 16, "heldout_sequences": 16, "heldout_sources": ["m"],
      "sources": [{"name": "m", "weight_tokens": 6000,
                   "generator": {"kind": "markov", "tokens": 6000, "branch_probs": [0.9, 0.1],
                                 "doc_min": 64, "doc_max": 256, "seed": 7}}]
    },
    "model": {"hidden_size": 16, "n_layers": 1, "n_heads": 2, "intermediate_size": 32,
              "vocab_size": 258, "max_seq_len": 16},
    "train": {"peak_lr": 0.003, "final_lr": 0.0003, "weight_decay": 0.1, "clip_norm": 1.0,
              "warmup_steps": 2, "batch_size_sequences": 8},
    "analysis": {"n_probes": 4, "k": 4, "l": 4, "checkpoints": "all", "evaluate_all": true}
  })");
}

std::vector<ConfigIssue> issues_of(const json& doc) {
  try {
    validate_config(doc, fs::current_path());
  } catch (const ConfigValidationError& e) {
    return e.issues();
  }
  return {};
}

bool has_key(const std::vector<ConfigIssue>& issues, const std::string& key) {
  return std::any_of(issues.begin(), issues.end(), [&](const ConfigIssue& i) { return i.key == key; });
}

std::string text(const fs::path& p) {
  const auto b = read_file(p);
  return {b.begin(), b.end()};
}

struct Exec {
  int code;
  std::string output;
};

Exec run(const std::string& args) {
  const std::string cmd = std::string(PROVLM_BIN) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  std::string out;
  std::array<char, 4096> buf;
  while (auto n = std::fread(buf.data(), 1, buf.size(), p)) out.append(buf.data(), n);
  const int status = pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

}  // namespace

TEST(RunConfig, ShippedToyConfigIsValid) {
  const auto c = load_run_config(fs::path(PROVLM_SOURCE_DIR) / "configs" / "toy.json");
  EXPECT_EQ(c.generated.size(), 2u);
  EXPECT_EQ(c.corpus.n_chunks, 20u);
  EXPECT_EQ(c.output_root.filename(), "toy");
  EXPECT_EQ(c.train.train_seed, c.seeds.train);
  EXPECT_EQ(c.train.init_seed, c.seeds.init);
}

TEST(RunConfig, TinyConfigIsValid) { EXPECT_TRUE(issues_of(tiny_config()).empty()); }

TEST(RunConfig, EveryIssueIsReported) {
  auto doc = tiny_config();
  doc["train"]["warmup_steps"] = 100000;
  doc["analysis"]["k"] = 14;
  doc["model"]["vocab_size"] = 300;
  doc["seeds"]["extra"] = 1;
  const auto issues = issues_of(doc);
  EXPECT_TRUE(has_key(issues, "train.warmup_steps"));
  EXPECT_TRUE(has_key(issues, "analysis.k"));
  EXPECT_TRUE(has_key(issues, "model.vocab_size"));
  EXPECT_TRUE(has_key(issues, "seeds.extra"));
}

TEST(RunConfig, MissingSectionAndOverBudget) {
  auto doc = tiny_config();
  doc.erase("train");
  EXPECT_TRUE(has_key(issues_of(doc), "train"));

  doc = tiny_config();
  doc["corpus"]["sources"][0]["weight_tokens"] = 9000;
  const auto issues = issues_of(doc);
  ASSERT_FALSE(issues.empty());
  EXPECT_TRUE(std::any_of(issues.begin(), issues.end(),
                          [](const ConfigIssue& i) { return i.message.find("source 'm'") != std::string::npos; }));
}

TEST(RunConfig, CanonicalFormIgnoresOutputRoot) {
  auto a = tiny_config();
  auto b = a;
  b["output_root"] = "elsewhere";
  const auto ja = to_json(validate_config(a, "/tmp"));
  EXPECT_EQ(ja, to_json(validate_config(b, "/tmp")));
  EXPECT_FALSE(ja.contains("output_root"));
  EXPECT_EQ(ja["seeds"]["probes"], 4);
}

TEST(Desk, RerunsAreIdenticalAndSeedsMatter) {
  TempDir dir;
  auto doc = tiny_config();
  auto desk = [&](const std::string& out, json d) {
    d["output_root"] = out;
    return reproduce_desk(validate_config(d, dir.path()));
  };
  const auto a = desk("a", doc);
  EXPECT_EQ(a.checkpoints, 4u);  // initial state plus one per chunk
  EXPECT_FALSE(a.resumed);
  const auto b = desk("b", doc);
  const std::string prov_a = text(a.provenance);
  EXPECT_EQ(prov_a, text(b.provenance));

  const auto header = text(dir / "a" / "run" / kEvalFile);
  EXPECT_EQ(header.substr(0, header.find('\n')), kEvalCsvHeader);

  // Completed output root: nothing to redo, same provenance.
  desk("a", doc);
  EXPECT_EQ(text(a.provenance), prov_a);

  doc["seeds"]["corpus"] = 99;
  const auto c = desk("c", doc);
  const auto pa = json::parse(prov_a);
  const auto pc = json::parse(text(c.provenance));
  EXPECT_NE(pa["manifest"]["checksum"], pc["manifest"]["checksum"]);

  try {
    desk("a", doc);
    FAIL() << "changed config accepted";
  } catch (const StageError& e) {
    EXPECT_EQ(e.code(), kExitConfig);
    EXPECT_EQ(e.stage(), "config");
  }
}

TEST(Desk, InterruptedRunResumesToTheSameResult) {
  TempDir dir;
  auto doc = tiny_config();
  doc["output_root"] = "full";
  const std::string full = text(reproduce_desk(validate_config(doc, dir.path())).provenance);

  // A run killed after its second checkpoint: later files never written,
  // metrics already logged for the unfinished chunk.
  fs::copy(dir / "full", dir / "cut", fs::copy_options::recursive);
  for (const char* f : {"ckpt_00002.lckp", "ckpt_00002.lckp.sha256", "ckpt_00003.lckp", "ckpt_00003.lckp.sha256"})
    fs::remove(dir / "cut" / "run" / "checkpoints" / f);
  for (const char* f : {"provenance.json", "run/eval.csv", "run/metrics.csv"}) fs::remove(dir / "cut" / f);
  fs::remove_all(dir / "cut" / "run" / "analysis");

  doc["output_root"] = "cut";
  const auto r = reproduce_desk(validate_config(doc, dir.path()));
  EXPECT_TRUE(r.resumed);
  EXPECT_EQ(text(r.provenance), full);
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  EXPECT_EQ(run("").code, kExitUsage);
  EXPECT_EQ(run("no-such-command").code, kExitUsage);

  auto doc = tiny_config();
  doc["train"]["warmup_steps"] = 100000;
  write_file_atomic(dir / "bad.json", doc.dump());
  const auto bad = run("--json-errors validate-config --config " + (dir / "bad.json").string());
  EXPECT_EQ(bad.code, kExitConfig);
  const auto err = json::parse(bad.output);
  EXPECT_EQ(err["error"]["stage"], "config");
  EXPECT_EQ(err["error"]["code"], kExitConfig);
  EXPECT_FALSE(err["error"]["issues"].empty());

  write_file_atomic(dir / "good.json", tiny_config().dump());
  EXPECT_EQ(run("-q validate-config --config " + (dir / "good.json").string()).code, kExitOk);
  EXPECT_EQ(run("verify-data --manifest " + (dir / "missing.json").string()).code, kExitUsage);
  write_file_atomic(dir / "broken.json", std::string("{}"));
  EXPECT_EQ(run("verify-data --manifest " + (dir / "broken.json").string()).code, kExitVerify);
}
