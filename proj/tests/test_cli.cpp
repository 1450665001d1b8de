#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const std::string kCli = MMSC_CLI_PATH;

struct RunResult {
  int code = -1;
  std::string out;
};

RunResult run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " 2>/dev/null";
  std::array<char, 4096> buf;
  RunResult result;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return result;
  while (fgets(buf.data(), buf.size(), pipe)) result.out += buf.data();
  const int status = pclose(pipe);
  result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::path(::testing::TempDir()) / ("cli_" + std::to_string(counter_++));
    fs::create_directories(dir_);
  }

  std::string make_data(const std::string& name, const std::string& extra = "") {
    const std::string out = (dir_ / name).string();
    RunResult r = run("synth --out " + out +
                      " --clusters 6 --items 6 --intra-prob 0.7 --pairing 1 --embed-dim 12 "
                      "--seed 11 " + extra);
    EXPECT_EQ(r.code, 0);
    return out;
  }

  std::string write_config(const std::string& data_dir, const std::string& out_name,
                           const std::string& extra = "") {
    const std::string path = (dir_ / (out_name + ".cfg")).string();
    std::ofstream cfg(path);
    cfg << "edges = " << data_dir << "/edges.tsv\n"
        << "embeddings = " << data_dir << "/embeddings.mmeb\n"
        << "ground_truth = " << data_dir << "/truth.tsv\n"
        << "out_dir = " << (dir_ / out_name).string() << "\n"
        << "dim = 12\n"
        << "max_epochs = 2\n"
        << "patience = 2\n"
        << "judge = oracle\n"
        << "judge_budget = 80\n"
        << "eval_negatives = 60\n"
        << "batch_size = 16\n"
        << "seed = 5\n"
        << extra;
    return path;
  }

  fs::path dir_;
  static int counter_;
};

int CliTest::counter_ = 0;

}  // namespace

TEST_F(CliTest, SynthIsByteDeterministic) {
  const std::string a = make_data("data_a");
  const std::string b = make_data("data_b");
  EXPECT_EQ(slurp(a + "/edges.tsv"), slurp(b + "/edges.tsv"));
  EXPECT_EQ(slurp(a + "/truth.tsv"), slurp(b + "/truth.tsv"));
  EXPECT_EQ(slurp(a + "/embeddings.mmeb"), slurp(b + "/embeddings.mmeb"));
  EXPECT_FALSE(slurp(a + "/edges.tsv").empty());
}

TEST_F(CliTest, SynthRejectsBadConfig) {
  RunResult r = run("synth --out " + (dir_ / "bad").string() + " --intra-prob 1.5");
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, TrainEvalRoundTripIsDeterministic) {
  const std::string data = make_data("data");
  const std::string cfg1 = write_config(data, "run1");
  const std::string cfg2 = write_config(data, "run2");
  EXPECT_EQ(run("train --config " + cfg1).code, 0);
  EXPECT_EQ(run("train --config " + cfg2).code, 0);
  EXPECT_EQ(slurp(dir_ / "run1/checkpoint.ckpt"), slurp(dir_ / "run2/checkpoint.ckpt"));

  RunResult e1 = run("eval --config " + cfg1 + " --checkpoint " + (dir_ / "run1/checkpoint.ckpt").string() +
                     " --test " + (dir_ / "run1/test_set.tsv").string());
  RunResult e2 = run("eval --config " + cfg2 + " --checkpoint " + (dir_ / "run2/checkpoint.ckpt").string() +
                     " --test " + (dir_ / "run2/test_set.tsv").string());
  EXPECT_EQ(e1.code, 0);
  EXPECT_EQ(e2.code, 0);
  EXPECT_EQ(e1.out, e2.out);
  EXPECT_NE(e1.out.find("h10_s="), std::string::npos);

  // Metric CSVs are byte-identical apart from the differing out_dir comment.
  auto strip_comments = [](const std::string& s) {
    std::string out;
    std::istringstream ss(s);
    std::string line;
    while (std::getline(ss, line)) {
      if (!line.empty() && line[0] != '#') out += line + "\n";
    }
    return out;
  };
  EXPECT_EQ(strip_comments(slurp(dir_ / "run1/report.csv")),
            strip_comments(slurp(dir_ / "run2/report.csv")));
  EXPECT_EQ(strip_comments(slurp(dir_ / "run1/training_log.csv")),
            strip_comments(slurp(dir_ / "run2/training_log.csv")));
}

TEST_F(CliTest, InvalidLambdaExitsTwoNamingField) {
  const std::string data = make_data("data");
  const std::string cfg = write_config(data, "run");
  RunResult r = run("train --config " + cfg + " --set lambda=-0.5");
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, UnknownConfigKeyRejected) {
  const std::string data = make_data("data");
  const std::string cfg = write_config(data, "run", "not_a_real_key = 3\n");
  RunResult r = run("train --config " + cfg);
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, MissingDataFileExitsThree) {
  const std::string data = make_data("data");
  const std::string cfg = write_config(data, "run");
  fs::remove(data + "/edges.tsv");
  RunResult r = run("train --config " + cfg);
  EXPECT_EQ(r.code, 3);
}

TEST_F(CliTest, CorruptCheckpointExitsThree) {
  const std::string data = make_data("data");
  const std::string cfg = write_config(data, "run");
  EXPECT_EQ(run("train --config " + cfg).code, 0);
  std::ofstream(dir_ / "run/checkpoint.ckpt") << "garbage";
  RunResult r = run("eval --config " + cfg + " --checkpoint " + (dir_ / "run/checkpoint.ckpt").string() +
                    " --test " + (dir_ / "run/test_set.tsv").string());
  EXPECT_EQ(r.code, 3);
}

TEST_F(CliTest, MismatchedModelConfigExitsTwo) {
  const std::string data = make_data("data");
  const std::string cfg = write_config(data, "run");
  EXPECT_EQ(run("train --config " + cfg).code, 0);
  // Same checkpoint evaluated under a different meta-path set: hash mismatch.
  const std::string cfg2 = write_config(data, "run_alt", "metapaths_s = s\n");
  RunResult r = run("eval --config " + cfg2 + " --checkpoint " + (dir_ / "run/checkpoint.ckpt").string() +
                    " --test " + (dir_ / "run/test_set.tsv").string());
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, ColdstartProducesReportAndKeepsParams) {
  const std::string data = make_data("data");
  const std::string cfg = write_config(data, "cold");
  RunResult r = run("coldstart --config " + cfg + " --holdout 0.15 --k 3");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("params_unchanged=1"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "cold/coldstart.csv"));
}

TEST_F(CliTest, SweepWritesRows) {
  const std::string data = make_data("data");
  const std::string cfg = write_config(data, "sweep", "max_epochs = 1\n");
  RunResult r = run("sweep --config " + cfg + " --axis lambda --values 0,0.005 --seeds 1");
  EXPECT_EQ(r.code, 0);
  const std::string csv = slurp(dir_ / "sweep/sweep.csv");
  EXPECT_NE(csv.find("axis,value,variant,seed"), std::string::npos);
  EXPECT_NE(csv.find("lambda,0,"), std::string::npos);
  EXPECT_NE(csv.find("lambda,0.005,"), std::string::npos);
}

TEST_F(CliTest, AblationFlagAccepted) {
  const std::string data = make_data("data");
  const std::string cfg = write_config(data, "ablate", "max_epochs = 1\n");
  RunResult r = run("train --config " + cfg + " --ablate no-ssl");
  EXPECT_EQ(r.code, 0);
  RunResult bad = run("train --config " + cfg + " --ablate not-an-ablation");
  EXPECT_EQ(bad.code, 2);
}
