#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int status = -1;
  std::string output;
};

CliResult run(const std::string& args) {
  const std::string cmd = std::string(LANISTR_CLI_PATH) + " " + args + " 2>&1";
  CliResult r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) r.output.append(buf, n);
  const int raw = ::pclose(p);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root = fs::temp_directory_path() /
           ("lanistr_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + "_" +
            std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    config = (root / "run.json").string();
    std::ofstream(config) << R"({
      "seed": 3,
      "splits": {"pretrain": 64, "finetune": 24, "val": 16, "test": 32},
      "pretrain": {"batch_size": 16},
      "finetune": {"epochs": 2, "batch_size": 8},
      "ablation": {"seeds": [0]},
      "paths": {"dataset": ")" + (root / "data").string() + R"("}
    })";
  }
  void TearDown() override { fs::remove_all(root); }

  std::string with_config(const std::string& args) const { return args + " -c " + config; }

  fs::path root;
  std::string config;
};

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_F(CliTest, GenerateWritesSplits) {
  const CliResult r = run(with_config("generate"));
  ASSERT_EQ(r.status, 0) << r.output;
  for (const char* split : {"pretrain", "finetune", "val", "test"}) {
    EXPECT_TRUE(fs::exists(root / "data" / split / "manifest.json")) << split;
  }
  EXPECT_NE(r.output.find("pretrain missingness"), std::string::npos) << r.output;
}

TEST_F(CliTest, GenerateIsSeedDeterministic) {
  ASSERT_EQ(run(with_config("generate --dataset " + (root / "a").string())).status, 0);
  ASSERT_EQ(run(with_config("generate --dataset " + (root / "b").string())).status, 0);
  for (const char* f : {"manifest.json", "text.bin", "image.bin", "tabular.bin", "labels.csv"}) {
    EXPECT_EQ(read_file(root / "a" / "pretrain" / f), read_file(root / "b" / "pretrain" / f)) << f;
  }
}

TEST_F(CliTest, GenerateRejectsBadInput) {
  const fs::path bad = root / "bad.json";
  std::ofstream(bad) << R"({"generator": {"missingness": {"text": 1.0}}})";
  const CliResult r = run("generate -c " + bad.string() + " --dataset " + (root / "x").string());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("error:"), std::string::npos) << r.output;

  ASSERT_EQ(run(with_config("generate")).status, 0);
  EXPECT_NE(run(with_config("generate")).status, 0);
  EXPECT_EQ(run(with_config("generate --force")).status, 0);
}

TEST_F(CliTest, PretrainFinetuneEvaluate) {
  ASSERT_EQ(run(with_config("generate")).status, 0);
  const fs::path pre = root / "pre";
  CliResult r = run(with_config("pretrain --output " + pre.string()));
  ASSERT_EQ(r.status, 0) << r.output;
  const std::string csv = read_file(pre / "metrics.csv");
  EXPECT_EQ(count_lines(csv), 1u + 4u);  // header plus 64 / 16 steps
  EXPECT_TRUE(fs::exists(pre / "checkpoint" / "parameters.bin"));
  EXPECT_TRUE(fs::exists(pre / "config.json"));

  const fs::path fin = root / "fin";
  r = run(with_config("finetune --checkpoint " + (pre / "checkpoint").string() + " --output " + fin.string()));
  ASSERT_EQ(r.status, 0) << r.output;
  const auto metrics = nlohmann::json::parse(read_file(fin / "metrics.json"));
  EXPECT_FALSE(metrics.at("from_scratch").get<bool>());
  EXPECT_LT(metrics.at("parameters").at("trainable_fraction").get<double>(), 0.5);
  EXPECT_EQ(metrics.at("steps").get<int>(), 6);

  r = run(with_config("evaluate --checkpoint " + (fin / "checkpoint").string() + " --split val"));
  ASSERT_EQ(r.status, 0) << r.output;
  const auto eval = nlohmann::json::parse(r.output);
  EXPECT_EQ(eval.at("n").get<int>(), 16);
  EXPECT_TRUE(eval.contains("auroc"));

  r = run(with_config("finetune --from-scratch --epochs 1 --output " + (root / "scratch").string()));
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_TRUE(nlohmann::json::parse(read_file(root / "scratch" / "metrics.json")).at("from_scratch").get<bool>());
}

TEST_F(CliTest, PretrainLambdaOverrideAndMissingDataset) {
  ASSERT_EQ(run(with_config("generate")).status, 0);
  const fs::path pre = root / "pre";
  const CliResult r = run(with_config("pretrain --lambda5 0 --output " + pre.string()));
  ASSERT_EQ(r.status, 0) << r.output;
  std::istringstream csv(read_file(pre / "metrics.csv"));
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    // The simmmm column is the second to last.
    const auto last = line.rfind(',');
    EXPECT_EQ(line[last - 1], ',') << line;
  }
  const CliResult missing = run(with_config("pretrain --dataset " + (root / "nothing").string() + " --output " +
                                      (root / "p2").string()));
  EXPECT_NE(missing.status, 0);
  EXPECT_NE(missing.output.find("error:"), std::string::npos);
}

TEST_F(CliTest, Ablate) {
  ASSERT_EQ(run(with_config("generate")).status, 0);
  CliResult r = run(with_config("ablate --switches \"\" --output " + (root / "none").string()));
  EXPECT_NE(r.status, 0);
  r = run(with_config("ablate --switches no-pretrain --epochs 1 --output " + (root / "abl").string()));
  ASSERT_EQ(r.status, 0) << r.output;
  const std::string csv = read_file(root / "abl" / "ablation.csv");
  EXPECT_NE(csv.find("no-pretrain"), std::string::npos) << csv;
  EXPECT_EQ(count_lines(csv), 3u);
}
