#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "masktab/cli/cli.hpp"
#include "masktab/errors.hpp"
#include "masktab/eval/experiment.hpp"

using namespace masktab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("masktab_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

json small_config() {
  return json{{"seed", 3},
              {"generator", {{"d_num", 6}, {"d_cat", 2}, {"n_labeled", 600}, {"n_unlabeled", 600}}},
              {"run",
               {{"batch_size", 16}, {"total_steps", 4}, {"warmup_steps", 1}, {"peak_lr", 3e-3}, {"final_lr", 3e-4}}},
              {"student", {{"top_k", 4}}}};
}

fs::path write_config(const fs::path& dir, const json& j) {
  const auto p = dir / "c.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

struct Result {
  int code;
  std::string err;
};

Result run(std::vector<std::string> args) {
  testing::internal::CaptureStderr();
  const int code = cli::dispatch(args);
  return {code, testing::internal::GetCapturedStderr()};
}

std::vector<std::string> csv_first_column(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) out.push_back(line.substr(0, line.find(',')));
  return out;
}

}  // namespace

TEST(CliConfigTest, DefaultsAndSeedOverride) {
  const auto c = cli::CliConfig::from_json(json::object(), 9);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.run.seed, 9u);
  EXPECT_EQ(c.distill.stage, train::Stage::distill);
  EXPECT_EQ(c.finetune.stage, train::Stage::finetune);
  EXPECT_EQ(c.data.boundaries.size(), 2u);
  // Round trip through the resolved form.
  const auto back = cli::CliConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
}

TEST(CliConfigTest, SectionsInheritFromRun) {
  auto j = small_config();
  j["finetune"] = {{"total_steps", 2}};
  const auto c = cli::CliConfig::from_json(j);
  EXPECT_EQ(c.finetune.total_steps, 2u);
  EXPECT_EQ(c.finetune.batch_size, 16u);
  EXPECT_EQ(c.distill.total_steps, 4u);
}

TEST(CliConfigTest, UnknownKeysRejected) {
  EXPECT_THROW(cli::CliConfig::from_json(json{{"sed", 1}}), ProtocolError);
  EXPECT_THROW(cli::CliConfig::from_json(json{{"run", {{"stepz", 1}}}}), ProtocolError);
  EXPECT_THROW(cli::CliConfig::from_json(json{{"generator", {{"kappa", 2.0}}}}), ProtocolError);
  EXPECT_THROW(cli::CliConfig::from_json(json{{"ablate", {{"variants", {"nope"}}}}}), ProtocolError);
  EXPECT_THROW(cli::CliConfig::from_json(json{{"data", {{"boundaries", {"2024-10-01", "2024-07-01"}}}}}),
               ProtocolError);
}

TEST(Cli, SynthTwiceIdentical) {
  const auto dir = scratch("synth");
  const auto cfg = write_config(dir, small_config());
  for (const char* o : {"a", "b"}) {
    const auto r = run({"synth", "--config", cfg.string(), "--seed", "7", "--out", (dir / o).string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  for (const char* f : {"labeled.csv", "unlabeled.csv", "schema.json", "resolved_config.json"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
    EXPECT_FALSE(slurp(dir / "a" / f).empty()) << f;
  }
  // A different seed gives different data.
  ASSERT_EQ(run({"synth", "--config", cfg.string(), "--seed", "8", "--out", (dir / "c").string()}).code, 0);
  EXPECT_NE(slurp(dir / "a" / "labeled.csv"), slurp(dir / "c" / "labeled.csv"));
  fs::remove_all(dir);
}

TEST(Cli, EvalMissingCheckpoint) {
  const auto dir = scratch("missing");
  const auto r = run({"eval", "--checkpoint", (dir / "missing/").string(), "--out", (dir / "o").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find((dir / "missing/").string()), std::string::npos) << r.err;
  fs::remove_all(dir);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  const auto r = run({"synth", "--bogus"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos) << r.err;
  EXPECT_EQ(run({"synth", "--seed", "abc"}).code, 1);
  EXPECT_EQ(run({"synth", "--config", "/nonexistent/c.json"}).code, 1);
  EXPECT_EQ(run({"synth", "--help"}).code, 0);
}

TEST(Cli, BadConfigExitsOne) {
  const auto dir = scratch("badcfg");
  const auto cfg = write_config(dir, json{{"run", {{"batch", 3}}}});
  const auto r = run({"pretrain", "--config", cfg.string(), "--out", (dir / "o").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("batch"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "o"));
  fs::remove_all(dir);
}

TEST(Cli, DryRunTouchesNothing) {
  const auto dir = scratch("dry");
  auto j = small_config();
  j["data"] = {{"schema", (dir / "absent_schema.json").string()}, {"labeled", (dir / "absent.csv").string()}};
  const auto cfg = write_config(dir, j);
  const auto r = run({"pretrain", "--config", cfg.string(), "--out", (dir / "o").string(), "--dry-run"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_FALSE(fs::exists(dir / "o"));
  const auto plan = json::parse(r.err.substr(r.err.find('{')));
  EXPECT_EQ(plan.at("command"), "pretrain");
  EXPECT_EQ(plan.at("steps"), 4);
  EXPECT_EQ(plan.at("config").at("seed"), 3);
  // Executing the same config does need the data.
  EXPECT_EQ(run({"pretrain", "--config", cfg.string(), "--out", (dir / "o").string()}).code, 1);
  fs::remove_all(dir);
}

TEST(Cli, AblateRowsAreLadderRungs) {
  const auto dir = scratch("ablate");
  const auto cfg = write_config(dir, small_config());
  const auto r = run({"ablate", "--config", cfg.string(), "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto text = slurp(dir / "ablation.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "variant,auc,ks,pooled_auc,pooled_ks,rmse,lr");
  std::vector<std::string> want;
  for (const auto& v : eval::standard_ladder()) want.push_back(v.name);
  EXPECT_EQ(csv_first_column(text), want);
  fs::remove_all(dir);
}

TEST(Cli, PipelineFromCsvIsReproducible) {
  const auto dir = scratch("pipeline");
  const auto cfg = write_config(dir, small_config());
  ASSERT_EQ(run({"synth", "--config", cfg.string(), "--out", (dir / "data").string()}).code, 0);

  auto j = small_config();
  j["data"] = {{"schema", (dir / "data" / "schema.json").string()},
               {"labeled", (dir / "data" / "labeled.csv").string()},
               {"unlabeled", (dir / "data" / "unlabeled.csv").string()}};
  const auto csv_cfg = write_config(dir, j).string();

  for (const char* o : {"a", "b"}) {
    const auto out = dir / o;
    auto r = run({"stats", "--config", csv_cfg, "--out", out.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    r = run({"iv-rank", "--config", csv_cfg, "--out", out.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    r = run({"pretrain", "--config", csv_cfg, "--out", (out / "pre").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    r = run({"finetune", "--config", csv_cfg, "--checkpoint", (out / "pre" / "checkpoint").string(), "--out",
             (out / "ft").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    r = run({"eval", "--config", csv_cfg, "--checkpoint", (out / "ft" / "checkpoint").string(), "--out",
             (out / "ev").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    r = run({"distill", "--config", csv_cfg, "--checkpoint", (out / "ft" / "checkpoint").string(), "--out",
             (out / "st").string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  for (const char* f : {"feature_stats.csv", "instance_missing.csv", "iv_rank.csv", "pre/metrics.csv",
                        "pre/checkpoint/params.f32", "pre/report.csv", "ft/checkpoint/params.f32", "ft/metrics.csv",
                        "ev/report.csv", "ev/report_meta.json", "st/alignment.json", "st/checkpoint/params.f32",
                        "st/teacher_cache/embeddings.f32", "st/report.csv"}) {
    EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
  // Evaluating the finetuned checkpoint reproduces the report written by finetune.
  EXPECT_EQ(slurp(dir / "a" / "ft" / "report.csv"), slurp(dir / "a" / "ev" / "report.csv"));
  const auto align = json::parse(slurp(dir / "a" / "st" / "alignment.json"));
  EXPECT_EQ(align.at("student_features").size(), 4u);
  EXPECT_EQ(csv_first_column(slurp(dir / "a" / "iv_rank.csv")).size(), 8u);
  fs::remove_all(dir);
}

TEST(Cli, SweepWritesOneRowPerPoint) {
  const auto dir = scratch("sweep");
  auto j = small_config();
  j["sweep"] = {{"axis", "unlabeled-ratio"}, {"grid", {"0", "1"}}};
  const auto cfg = write_config(dir, j);
  const auto r = run({"sweep", "--config", cfg.string(), "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(csv_first_column(slurp(dir / "sweep.csv")), (std::vector<std::string>{"0", "1"}));
  fs::remove_all(dir);
}

TEST(Cli, ThreadsEnvValidated) {
  const auto dir = scratch("threads");
  setenv("MASKTAB_THREADS", "zero", 1);
  EXPECT_EQ(run({"synth", "--out", dir.string(), "--dry-run"}).code, 1);
  unsetenv("MASKTAB_THREADS");
  fs::remove_all(dir);
}

#ifdef MASKTAB_CLI_PATH
TEST(Cli, BinaryExitCodes) {
  const std::string bin = MASKTAB_CLI_PATH;
  const auto dir = scratch("binary");
  auto status = [](const std::string& cmd) {
    const int s = std::system((cmd + " 2>/dev/null").c_str());
    return WEXITSTATUS(s);
  };
  EXPECT_EQ(status(bin + " eval --checkpoint " + (dir / "missing").string()), 1);
  EXPECT_EQ(status(bin + " nonsense"), 1);
  EXPECT_EQ(status(bin + " synth --dry-run"), 0);
  fs::remove_all(dir);
}
#endif
