#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <json.hpp>

namespace {

namespace fs = std::filesystem;

const fs::path kScratch = fs::temp_directory_path() / "sdetr_cli_test";

int run(const std::string& args, const std::string& stdout_file = "") {
  std::string cmd = std::string(SDETR_CLI) + " " + args;
  cmd += stdout_file.empty() ? " > /dev/null" : " > " + stdout_file;
  cmd += " 2> /dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    fs::remove_all(kScratch);
    fs::create_directories(kScratch);
  }
  void TearDown() override { fs::remove_all(kScratch); }
  std::string path(const std::string& name) const { return (kScratch / name).string(); }
};

TEST_F(Cli, EstimateIsByteStableAndShowsEightfoldScoreMemory) {
  ASSERT_EQ(run("estimate --config \"3-3-3-3+8-8-8-8\" --input 512", path("a.json")), 0);
  ASSERT_EQ(run("estimate --config \"3-3-3-3+8-8-8-8\" --input 512", path("b.json")), 0);
  EXPECT_EQ(slurp(path("a.json")), slurp(path("b.json")));
  ASSERT_EQ(run("estimate --config \"3-3-3-3+8-8-1-8\" --input 512", path("c.json")), 0);
  const auto multi = nlohmann::json::parse(slurp(path("a.json")));
  const auto single = nlohmann::json::parse(slurp(path("c.json")));
  int compared = 0;
  for (std::size_t i = 0; i < multi["layers"].size(); ++i) {
    const auto& a = multi["layers"][i];
    if (a["level"] == 3 && a["kind"] == "enc-self") {
      EXPECT_EQ(a["p_units"].get<std::uint64_t>(), 8 * single["layers"][i]["p_units"].get<std::uint64_t>());
      ++compared;
    }
  }
  EXPECT_EQ(compared, 3);
}

TEST_F(Cli, TraceMatchesTwoMatmulProduct) {
  ASSERT_EQ(run("trace --dims 2,2,2,2", path("t.json")), 0);
  const auto j = nlohmann::json::parse(slurp(path("t.json")));
  EXPECT_TRUE(j["equivalent"].get<bool>());
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c) {
      EXPECT_NEAR(j["A"][r][c].get<double>(), j["A_two_matmul"][r][c].get<double>(), 1e-12);
      double p = 0.0;
      for (std::size_t t = 0; t < 2; ++t) p += j["Q"][r][t].get<double>() * j["K"][c][t].get<double>();
      EXPECT_NEAR(j["P"][r][c].get<double>(), p, 1e-15);
    }
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("estimate --config 3-3-x-3"), 2);
  EXPECT_EQ(run("estimate --config 6-6-0-0 --input 1333"), 2);
  EXPECT_EQ(run("estimate --no-such-flag"), 1);
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("trace --dims 0,1,1,1"), 2);
  EXPECT_EQ(run("eval --checkpoint " + path("missing.sdetr")), 3);
  EXPECT_EQ(run("--help"), 0);
}

TEST_F(Cli, SelfcheckPasses) { EXPECT_EQ(run("selfcheck"), 0); }

const std::string kTinyTrain =
    "train --config \"1-1-1-1\" --size 64 --epochs 5 --seed 0 --d-model 16 --queries 10 "
    "--train-images 24 --val-images 8 --batch 4";

TEST_F(Cli, TrainingIsReproducibleAndEvaluable) {
  ASSERT_EQ(run(kTinyTrain + " --out " + path("run1")), 0);
  ASSERT_EQ(run(kTinyTrain + " --out " + path("run2")), 0);
  const std::string m1 = slurp(path("run1") + "/metrics.jsonl");
  EXPECT_EQ(m1, slurp(path("run2") + "/metrics.jsonl"));
  std::istringstream lines(m1);
  std::string line;
  int epochs = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["epoch"].get<int>(), ++epochs);
    EXPECT_TRUE(j.contains("loss") && j.contains("ap") && j.contains("ap_s") && j.contains("ap_m") &&
                j.contains("ap_l"));
  }
  EXPECT_EQ(epochs, 5);

  ASSERT_EQ(run("eval --checkpoint " + path("run1") + "/checkpoint.sdetr --images 6 --seed 3", path("ap.json")), 0);
  const auto ap = nlohmann::json::parse(slurp(path("ap.json")));
  EXPECT_EQ(ap["images"].get<int>(), 6);
  EXPECT_GE(ap["ap"].get<double>(), 0.0);
  EXPECT_LE(ap["ap"].get<double>(), 1.0);
}

TEST_F(Cli, TrainsFromDatasetOnDisk) {
  ASSERT_EQ(run("gen --out " + path("data") + " --images 12 --seed 4"), 0);
  EXPECT_TRUE(fs::exists(path("data") + "/annotations.jsonl"));
  EXPECT_TRUE(fs::exists(path("data") + "/img_000011.ppm"));
  ASSERT_EQ(run("train --config \"1-1-0-0\" --d-model 16 --queries 10 --epochs 1 --val-images 4 --dataset " +
                path("data") + " --out " + path("disk")),
            0);
  EXPECT_TRUE(fs::exists(path("disk") + "/checkpoint.sdetr"));
  EXPECT_EQ(run("train --config \"1-1-0-0\" --val-images 12 --dataset " + path("data") + " --out " + path("x")), 2);
}

TEST_F(Cli, FailedTrainingLeavesNoArtifacts) {
  // An absurd learning rate blows the parameters up after the first step.
  const int rc = run("train --config \"1-1-0-0\" --d-model 16 --queries 10 --epochs 2 --train-images 16 "
                     "--val-images 2 --batch 4 --grad-clip 0 --lr 1e300 --out " + path("diverged"));
  EXPECT_NE(rc, 0);
  EXPECT_FALSE(fs::exists(path("diverged")));
}

}  // namespace
