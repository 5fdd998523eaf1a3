#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sbd/report_json.hpp"
#include "sbd/sae.hpp"

namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("sbd-cli-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Runs the CLI with stdout/stderr captured into files; returns the exit code.
  int run(const std::string& args) {
    const std::string cmd = std::string(SBD_CLI_PATH) + " " + args + " >" + path("stdout.txt") + " 2>" +
                            path("stderr.txt");
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string slurp(const std::string& name) const {
    std::ifstream in(path(name));
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  sbd::Json json(const std::string& name) const { return sbd::Json::parse(slurp(name)); }

  fs::path dir_;
};

TEST_F(Cli, SynthPipelineDetectsPlantedSignal) {
  ASSERT_EQ(run("synth --pairs 100 --dim 16 --planted 3 --out " + path("d.sab")), 0);
  ASSERT_EQ(run("pipeline --data " + path("d.sab") + " --sae identity --topk 10 --report " + path("r.json") +
                " --model-out " + path("m.sfm") + " --selection-out " + path("s.json") + " --seed 3"),
            0)
      << slurp("stderr.txt");
  const auto doc = json("r.json");
  EXPECT_GE(doc["report"]["f1"].get<double>(), 0.95);
  EXPECT_EQ(doc["kind"], "pipeline");
  EXPECT_EQ(doc["manifest"]["seeds"]["split"], 3);

  EXPECT_EQ(run("eval --report " + path("r.json") + " --recheck"), 0);
  auto tampered = doc;
  tampered["report"]["fn"] = 17;
  std::ofstream(path("bad.json")) << tampered.dump();
  EXPECT_NE(run("eval --report " + path("bad.json") + " --recheck"), 0);

  EXPECT_EQ(run("importance --model " + path("m.sfm") + " --report " + path("imp.json")), 0);
  const auto curve = json("imp.json")["importance"]["cumulative"].get<std::vector<double>>();
  EXPECT_NEAR(curve.back(), 1.0, 1e-9);
}

TEST_F(Cli, StepwiseCommandsMatchPipeline) {
  ASSERT_EQ(run("synth --pairs 40 --dim 8 --planted 2 --out " + path("d.sab")), 0);
  ASSERT_EQ(run("pipeline --data " + path("d.sab") + " --topk 4 --report " + path("p.json")), 0);
  ASSERT_EQ(run("select --data " + path("d.sab") + " --topk 4 --out " + path("s.json")), 0) << slurp("stderr.txt");
  ASSERT_EQ(run("fit --data " + path("d.sab") + " --selection " + path("s.json") + " --out " + path("m.sfm")), 0)
      << slurp("stderr.txt");
  ASSERT_EQ(run("eval --data " + path("d.sab") + " --selection " + path("s.json") + " --model " + path("m.sfm") +
                " --report " + path("e.json")),
            0)
      << slurp("stderr.txt");
  const auto pipeline = json("p.json"), stepwise = json("e.json");
  EXPECT_EQ(pipeline["report"]["f1"], stepwise["report"]["f1"]);
  EXPECT_EQ(pipeline["report"]["tp"], stepwise["report"]["tp"]);
  EXPECT_EQ(pipeline["selection"]["indices"], json("s.json")["indices"]);
}

TEST_F(Cli, TrainSaeWritesLoadableWeights) {
  ASSERT_EQ(run("synth --pairs 20 --dim 6 --planted 1 --out " + path("d.sab")), 0);
  ASSERT_EQ(run("train-sae --data " + path("d.sab") + " --hidden 12 --epochs 5 --out " + path("w.swb")), 0)
      << slurp("stderr.txt");
  const auto sae = sbd::load_sae(path("w.swb"));
  EXPECT_EQ(sae.d_in(), 6u);
  EXPECT_EQ(sae.d_hid(), 12u);
  ASSERT_EQ(run("inspect " + path("w.swb")), 0);
  EXPECT_EQ(json("stdout.txt")["d_hid"], 12);
  ASSERT_EQ(run("inspect " + path("d.sab")), 0);
  EXPECT_EQ(json("stdout.txt")["records"], 40);
}

TEST_F(Cli, SweepAndTransferProduceGrids) {
  ASSERT_EQ(run("synth --pairs 30 --dim 8 --planted 2 --layer 1 --out " + path("a.sab")), 0);
  ASSERT_EQ(run("synth --pairs 30 --dim 8 --planted 2 --layer 2 --seed 4 --out " + path("b.sab")), 0);
  ASSERT_EQ(run("sweep --data " + path("a.sab") + "," + path("b.sab") + " --topk 2,4 --report " + path("g.json")),
            0)
      << slurp("stderr.txt");
  const auto grid = json("g.json");
  EXPECT_EQ(grid["grid"]["cols"].size(), 2u);
  EXPECT_EQ(run("eval --report " + path("g.json") + " --recheck"), 0);
  ASSERT_EQ(run("transfer --data " + path("a.sab") + "," + path("b.sab") + " --topk 4 --report " + path("t.json")),
            0)
      << slurp("stderr.txt");
  EXPECT_EQ(json("t.json")["transfer"].size(), 4u);
  EXPECT_EQ(run("eval --report " + path("t.json") + " --recheck"), 0);
}

TEST_F(Cli, TokensAndActivity) {
  ASSERT_EQ(run("synth --pairs 4 --dim 5 --tokens 3 --planted 1 --out " + path("d.sab")), 0);
  ASSERT_EQ(run("tokens --data " + path("d.sab") + " --snippet pair-00000/buggy --feature 0 --report " +
                path("t.json")),
            0)
      << slurp("stderr.txt");
  EXPECT_EQ(json("t.json")["tokens"]["activations"].size(), 3u);
  ASSERT_EQ(run("activity --data " + path("d.sab") + " --report " + path("a.json")), 0) << slurp("stderr.txt");
  EXPECT_EQ(json("a.json")["activity"]["width"], 5);
  EXPECT_EQ(run("tokens --data " + path("d.sab") + " --snippet nope --feature 0"), 2);
}

TEST_F(Cli, ErrorsMapToExitCodes) {
  EXPECT_EQ(run("pipeline --data " + path("missing.sab")), 2);
  EXPECT_NE(slurp("stderr.txt").find("missing.sab"), std::string::npos);

  ASSERT_EQ(run("synth --pairs 5 --dim 4 --planted 1 --out " + path("d.sab")), 0);
  EXPECT_EQ(run("pipeline --data " + path("d.sab") + " --topkk 5"), 1);
  EXPECT_NE(slurp("stderr.txt").find("--topk"), std::string::npos);
  EXPECT_EQ(run("frobnicate"), 1);

  std::ofstream(path("junk.bin")) << "JUNKJUNKJUNK";
  EXPECT_EQ(run("inspect " + path("junk.bin")), 2);
  EXPECT_EQ(run("pipeline --data " + path("junk.bin")), 2);

  std::ofstream(path("one.json")) << "{}";
  EXPECT_NE(run("eval --report " + path("one.json") + " --recheck"), 0);
}

TEST_F(Cli, SameSeedSameBytes) {
  ASSERT_EQ(run("synth --pairs 30 --dim 8 --planted 2 --out " + path("d.sab")), 0);
  ASSERT_EQ(run("--seed 9 pipeline --data " + path("d.sab") + " --report " + path("a.json")), 0);
  ASSERT_EQ(run("pipeline --data " + path("d.sab") + " --report " + path("b.json") + " --seed 9 --jobs 4"), 0);
  auto a = json("a.json"), b = json("b.json");
  a["manifest"].erase("config");
  b["manifest"].erase("config");
  a["manifest"].erase("inputs");
  b["manifest"].erase("inputs");
  EXPECT_EQ(a, b);
}

}  // namespace
