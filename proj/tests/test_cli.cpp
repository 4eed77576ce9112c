#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "bifurnode/io.hpp"

namespace fs = std::filesystem;
using bifurnode::io::read_text;

namespace {

const fs::path kDir = fs::temp_directory_path() / "bifurnode_cli";

int run(const std::string &args) {
  const std::string cmd = std::string(BIFUR_NODE_EXE) + " " + args + " >" + (kDir / "stdout.txt").string() + " 2>" +
                          (kDir / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string out_text() { return read_text(kDir / "stdout.txt"); }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kDir);
    fs::create_directories(kDir);
  }
};

}  // namespace

TEST_F(Cli, HelpExitsZero) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_NE(out_text().find("generate-data"), std::string::npos);
}

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run("train"), 1);
  EXPECT_EQ(run("no-such-command"), 1);
  EXPECT_EQ(run("generate-data -e nope -o " + (kDir / "x").string()), 1);
  EXPECT_EQ(run("bifdiag -o " + (kDir / "x").string()), 1);
  EXPECT_EQ(run("tune -o " + (kDir / "x").string()), 1);
}

TEST_F(Cli, MalformedInputsExitOne) {
  const auto bad = kDir / "bad.csv";
  std::ofstream(bad) << "not,a,dataset\n";
  EXPECT_EQ(run("train -d " + bad.string() + " -o " + (kDir / "x").string()), 1);
  const auto cfg = kDir / "bad.cfg";
  std::ofstream(cfg) << "unknown_key = 1\n";
  EXPECT_EQ(run("generate-data -o " + kDir.string()), 0);
  EXPECT_EQ(run("train -d " + (kDir / "primary.csv").string() + " -c " + cfg.string() + " -o " + (kDir / "x").string()),
            1);
  const auto ckpt = kDir / "bad.json";
  std::ofstream(ckpt) << "{}";
  EXPECT_EQ(run("bifdiag --checkpoint " + ckpt.string() + " -o " + (kDir / "x").string()), 1);
}

TEST_F(Cli, GenerateIsByteIdentical) {
  ASSERT_EQ(run("generate-data -e exp3-highnoise -o " + (kDir / "g1").string()), 0);
  ASSERT_EQ(run("generate-data -e exp3-highnoise -o " + (kDir / "g2").string()), 0);
  const auto a = read_text(kDir / "g1" / "exp3-highnoise.csv");
  EXPECT_EQ(a, read_text(kDir / "g2" / "exp3-highnoise.csv"));
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 1011);
  EXPECT_TRUE(fs::exists(kDir / "g1" / "manifest.txt"));
}

TEST_F(Cli, TrainTwiceGivesIdenticalArtifacts) {
  ASSERT_EQ(run("generate-data -e exp2-3alphas -o " + kDir.string()), 0);
  const auto cfg = kDir / "tiny.cfg";
  std::ofstream(cfg) << "hidden = 6\nbatch_size = 2\nlearning_rate = 1e-3\n";
  const std::string base = "train -q -d " + (kDir / "exp2-3alphas.csv").string() + " -c " + cfg.string() +
                           " --epochs 3 -s 4 -o ";
  ASSERT_EQ(run(base + (kDir / "t1").string()), 0);
  ASSERT_EQ(run(base + (kDir / "t2").string()), 0);
  EXPECT_EQ(read_text(kDir / "t1" / "checkpoint.json"), read_text(kDir / "t2" / "checkpoint.json"));
  EXPECT_EQ(read_text(kDir / "t1" / "loss.csv"), read_text(kDir / "t2" / "loss.csv"));
  EXPECT_TRUE(fs::exists(kDir / "t1" / "loss.svg"));

  ASSERT_EQ(run("bifdiag --checkpoint " + (kDir / "t1" / "checkpoint.json").string() +
                " --alphas 4 --t-end 200 --tail 50 -o " + (kDir / "b1").string()),
            0);
  ASSERT_EQ(run("bifdiag --checkpoint " + (kDir / "t2" / "checkpoint.json").string() +
                " --alphas 4 --t-end 200 --tail 50 -o " + (kDir / "b2").string()),
            0);
  EXPECT_EQ(read_text(kDir / "b1" / "diagram.csv"), read_text(kDir / "b2" / "diagram.csv"));

  ASSERT_EQ(run("plot -k vector-field --checkpoint " + (kDir / "t1" / "checkpoint.json").string() + " -o " +
                (kDir / "vf.svg").string()),
            0);
  EXPECT_TRUE(fs::exists(kDir / "vf.csv"));
  ASSERT_EQ(run("plot -k loss-curve -i " + (kDir / "t1" / "loss.csv").string() + " -o " + (kDir / "lc.svg").string()),
            0);
}

TEST_F(Cli, TrueSystemDiagram) {
  ASSERT_EQ(run("bifdiag --true-system --alphas 50 -o " + (kDir / "truth").string()), 0);
  const auto out = out_text();
  EXPECT_NE(out.find("oscillation_onset 0.67"), std::string::npos) << out;
  EXPECT_NE(out.find("collapse_boundary 0.70"), std::string::npos) << out;
  const std::string svg = read_text(kDir / "truth" / "diagram.svg");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  ASSERT_EQ(run("plot -k bifurcation-diagram -i " + (kDir / "truth" / "diagram.csv").string() + " -o " +
                (kDir / "bd.svg").string()),
            0);
}

TEST_F(Cli, TuneDryRunListsGrid) {
  ASSERT_EQ(run("tune --dry-run"), 0);
  EXPECT_NE(out_text().find("36 cells, 108 runs"), std::string::npos);
}
