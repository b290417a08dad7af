#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "cli.hpp"
#include "lcreg/config.hpp"

using namespace lcreg;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("lcreg_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& rel) const { return (dir_ / rel).string(); }

  std::string tiny_config(double lr = 0.05) const {
    ExperimentConfig cfg;
    cfg.num_latents = 4;
    cfg.feature_dim = 6;
    cfg.encoder_channels = {6};
    cfg.stage1_epochs = 2;
    cfg.stage2_epochs = 1;
    cfg.learning_rate = lr;
    save_config(cfg, dir_ / "config.json");
    return path("config.json");
  }

  void tiny_data() const {
    ASSERT_EQ(run({"generate-data", "--classes", "4", "--nmax", "30", "--if", "10", "--test-per-class", "5",
                   "--seed", "1", "--out", path("data")})
                  .code,
              cli::kExitOk);
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, GradcheckPasses) {
  const Result r = run({"gradcheck", "--seed", "7", "--out", path("gc")});
  EXPECT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_NE(r.out.find("max relative error"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "gc" / "gradcheck.txt"));
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run({}).code, cli::kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"gradcheck", "--bogus"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"generate-data"}).code, cli::kExitUsage);  // --out is required

  const std::string missing = path("nope.json");
  const Result r = run({"train", "--config", missing, "--data", path("data"), "--out", path("run")});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
}

TEST_F(CliTest, UnknownConfigKeyIsUsageError) {
  std::ofstream(dir_ / "bad.json") << R"({"alpha": 0.1, "alhpa": 0.2})";
  tiny_data();
  const Result r = run({"train", "--config", path("bad.json"), "--data", path("data/train"), "--out", path("run")});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("alhpa"), std::string::npos) << r.err;
}

TEST_F(CliTest, DivergenceIsRuntimeFailure) {
  tiny_data();
  const Result r = run({"train", "--config", tiny_config(1e6), "--data", path("data/train"), "--out", path("run")});
  EXPECT_EQ(r.code, cli::kExitRuntime);
  EXPECT_NE(r.err.find("diverged"), std::string::npos) << r.err;
}

TEST_F(CliTest, GenerateTrainEvalHistogram) {
  tiny_data();
  EXPECT_TRUE(fs::exists(dir_ / "data" / "train" / "labels.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "data" / "test" / "spec.json"));

  Result r = run({"train", "--config", tiny_config(), "--seed", "2", "--data", path("data/train"), "--eval-data",
                  path("data/test"), "--out", path("run")});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const std::string metrics = slurp(dir_ / "run" / "metrics.jsonl");
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 3);
  for (const char* key : {"\"train_many_top1\"", "\"train_medium_top1\"", "\"train_few_top1\"", "\"eval_overall_top1\""})
    EXPECT_NE(metrics.find(key), std::string::npos) << key;
  EXPECT_TRUE(fs::exists(dir_ / "run" / "checkpoint" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir_ / "run" / "checkpoint" / "stats_mu.lct"));
  EXPECT_TRUE(fs::exists(dir_ / "run" / "summary.csv"));

  r = run({"eval", "--checkpoint", path("run/checkpoint"), "--data", path("data/test"), "--out", path("ev")});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_NE(r.out.find("overall_top1"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "ev" / "summary.csv"));

  r = run({"histogram", "--checkpoint", path("run/checkpoint"), "--data", path("data/test"), "--index", "0,3",
           "--region", "0,0,2,2", "--out", path("hist")});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const std::string h = slurp(dir_ / "hist" / "histogram_000003.csv");
  EXPECT_FALSE(h.empty());

  r = run({"eval", "--checkpoint", path("missing"), "--data", path("data/test")});
  EXPECT_EQ(r.code, cli::kExitUsage);
}
