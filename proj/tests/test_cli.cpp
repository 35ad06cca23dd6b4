// Drives the installed command-line binary end to end: subcommand outputs,
// exit-code contract, config/flag precedence, determinism.
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "aglab/io.hpp"

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int code = -1;
  std::string out;
};

class CliTest : public ::testing::Test {
 protected:
  fs::path dir;

  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("aglab_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }

  void TearDown() override { fs::remove_all(dir); }

  CmdResult run(const std::string& args) const {
    fs::path log = dir / "cmd_output.log";
    std::string cmd = std::string(AGLAB_CLI_PATH) + " " + args + " > \"" + log.string() + "\" 2>&1";
    int rc = std::system(cmd.c_str());
    CmdResult res;
    res.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    std::ifstream in(log);
    std::stringstream buf;
    buf << in.rdbuf();
    res.out = buf.str();
    return res;
  }

  std::string out_dir() const { return (dir / "out").string(); }
};

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::vector<std::string> split_csv(const std::string& row) {
  std::vector<std::string> fields;
  std::stringstream ss(row);
  std::string f;
  while (std::getline(ss, f, ',')) fields.push_back(f);
  return fields;
}

TEST_F(CliTest, SampleWritesTrajectoriesAndCountsEvaluations) {
  auto res = run("sample --policy cfg --seeds 0..9 --out-dir " + out_dir());
  ASSERT_EQ(res.code, 0) << res.out;
  EXPECT_NE(res.out.find("total NFE 400"), std::string::npos) << res.out;

  fs::path traj = fs::path(out_dir()) / "trajectories";
  std::size_t count = 0;
  for (auto& e : fs::directory_iterator(traj)) (void)e, ++count;
  EXPECT_EQ(count, 10u);

  auto rec = aglab::trajectory_from_jsonl(aglab::read_text_file((traj / "cfg-full_seed3.jsonl").string()));
  EXPECT_EQ(rec.steps.size(), 20u);
  EXPECT_EQ(rec.total_nfe, 40);
  EXPECT_EQ(rec.seed, 3u);
}

TEST_F(CliTest, DryRunPrintsResolvedConfigAndWritesNothing) {
  aglab::Json cfg = {{"v", 1}, {"strength", 3.0}};
  aglab::write_text_file((dir / "cfg.json").string(), cfg.dump());

  auto file_only = run("sample --config " + (dir / "cfg.json").string() + " --dry-run --out-dir " + out_dir());
  ASSERT_EQ(file_only.code, 0) << file_only.out;
  EXPECT_NE(file_only.out.find("\"strength\": 3.0"), std::string::npos);

  auto flag_wins = run("sample --config " + (dir / "cfg.json").string() +
                       " --strength 9 --dry-run --out-dir " + out_dir());
  ASSERT_EQ(flag_wins.code, 0) << flag_wins.out;
  EXPECT_NE(flag_wins.out.find("\"strength\": 9.0"), std::string::npos);

  EXPECT_NE(flag_wins.out.find("dry-run: no outputs written"), std::string::npos);
  EXPECT_FALSE(fs::exists(out_dir()));
}

TEST_F(CliTest, UsageAndConfigErrorsExitTwo) {
  auto bad_policy = run("sample --policy bogus --out-dir " + out_dir());
  EXPECT_EQ(bad_policy.code, 2);
  EXPECT_NE(bad_policy.out.find("--policy"), std::string::npos);

  aglab::write_text_file((dir / "typo.json").string(), R"({"v":1,"strenght":2.0})");
  auto typo = run("sample --config " + (dir / "typo.json").string() + " --out-dir " + out_dir());
  EXPECT_EQ(typo.code, 2);
  EXPECT_NE(typo.out.find("strenght"), std::string::npos) << typo.out;

  aglab::write_text_file((dir / "illtyped.json").string(), R"({"v":1,"T":"twenty"})");
  auto illtyped = run("sample --config " + (dir / "illtyped.json").string());
  EXPECT_EQ(illtyped.code, 2);
  EXPECT_NE(illtyped.out.find("\"T\""), std::string::npos) << illtyped.out;

  auto unknown_flag = run("sample --no-such-flag");
  EXPECT_EQ(unknown_flag.code, 2);
}

TEST_F(CliTest, MissingArtifactExitsThree) {
  auto res = run("sample --backend mlp --checkpoint " + (dir / "absent.json").string() +
                 " --out-dir " + out_dir());
  EXPECT_EQ(res.code, 3);
  EXPECT_NE(res.out.find("absent.json"), std::string::npos) << res.out;

  auto coeffs = run("sample --policy linear --coeffs " + (dir / "nocoeffs.json").string() +
                    " --out-dir " + out_dir());
  EXPECT_EQ(coeffs.code, 3);
}

TEST_F(CliTest, TrainingDivergenceExitsFour) {
  auto res = run("train --train-steps 30 --train-lr 1e100 --out-dir " + out_dir());
  EXPECT_EQ(res.code, 4);
  EXPECT_NE(res.out.find("diverged"), std::string::npos) << res.out;
  EXPECT_FALSE(fs::exists(fs::path(out_dir()) / "checkpoint.json"));
}

TEST_F(CliTest, SearchThenEvalFromAlphas) {
  auto search = run("search --pairs 8 --epochs 1 --out-dir " + out_dir());
  ASSERT_EQ(search.code, 0) << search.out;
  EXPECT_TRUE(fs::exists(fs::path(out_dir()) / "alphas.json"));
  EXPECT_TRUE(fs::exists(fs::path(out_dir()) / "policy.json"));
  EXPECT_TRUE(fs::exists(fs::path(out_dir()) / "scores.csv"));
  EXPECT_TRUE(fs::exists(fs::path(out_dir()) / "search_history.csv"));

  auto scores = lines_of(fs::path(out_dir()) / "scores.csv");
  ASSERT_EQ(scores.size(), 21u);  // header + one row per step
  EXPECT_EQ(scores[0], "step,mean_uncond,mean_cond,mean_cfg:3.75,mean_cfg:7.5,mean_cfg:15");
  EXPECT_EQ(split_csv(scores[1])[0], "20");

  auto eval = run("eval --policy from-alphas --alphas " + (fs::path(out_dir()) / "alphas.json").string() +
                  " --seeds 0..9 --experiment searched --out-dir " + out_dir());
  ASSERT_EQ(eval.code, 0) << eval.out;
  auto frontier = lines_of(fs::path(out_dir()) / "searched" / "frontier.csv");
  ASSERT_EQ(frontier.size(), 2u);
  EXPECT_EQ(frontier[0], aglab::frontier_csv_header());
  EXPECT_EQ(split_csv(frontier[1])[1], "from-alphas");
  EXPECT_TRUE(fs::exists(fs::path(out_dir()) / "searched" / "from-alphas.json"));
}

TEST_F(CliTest, EvalBaselinePolicyReplicatesExactly) {
  auto res = run("eval --policy cfg --seeds 0..9 --experiment base --out-dir " + out_dir());
  ASSERT_EQ(res.code, 0) << res.out;
  auto rows = lines_of(fs::path(out_dir()) / "base" / "frontier.csv");
  ASSERT_EQ(rows.size(), 2u);
  auto fields = split_csv(rows[1]);
  ASSERT_EQ(fields.size(), 9u);
  EXPECT_EQ(fields[1], "cfg-full");
  EXPECT_EQ(fields[2], "10");
  EXPECT_EQ(fields[3], "40");  // nfe mean
  EXPECT_EQ(fields[5], "0");   // endpoint mse vs itself

  auto rep = aglab::parse_json(
      aglab::read_text_file((fs::path(out_dir()) / "base" / "cfg-full.json").string()), "report");
  EXPECT_DOUBLE_EQ(rep["endpoint_mse"]["mean"].get<double>(), 0.0);
  // full guidance records both branches, so the alignment table must exist
  EXPECT_TRUE(fs::exists(fs::path(out_dir()) / "base" / "cfg-full_gamma.csv"));

  // a threshold above any reachable cosine never switches, so the adaptive
  // policy is the baseline itself
  auto sentinel = run("eval --policy ag --gamma-bar 1.1 --seeds 0..9 --experiment sentinel --out-dir " +
                      out_dir());
  ASSERT_EQ(sentinel.code, 0) << sentinel.out;
  auto srow = split_csv(lines_of(fs::path(out_dir()) / "sentinel" / "frontier.csv").at(1));
  EXPECT_EQ(srow[1], "ag-1.1");
  EXPECT_EQ(srow[3], "40");
  EXPECT_EQ(srow[5], "0");
}

TEST_F(CliTest, FitLinearThenSampleIsDeterministic) {
  auto fit = run("fit-linear --n-paths 24 --out-dir " + out_dir());
  ASSERT_EQ(fit.code, 0) << fit.out;
  EXPECT_TRUE(fs::exists(fs::path(out_dir()) / "coeffs.json"));
  EXPECT_TRUE(fs::exists(fs::path(out_dir()) / "paths.jsonl"));

  std::string coeffs = (fs::path(out_dir()) / "coeffs.json").string();
  auto s1 = run("sample --policy linear --coeffs " + coeffs + " --seeds 3 --out-dir " + (dir / "a").string());
  auto s2 = run("sample --policy linear --coeffs " + coeffs + " --seeds 3 --out-dir " + (dir / "b").string());
  ASSERT_EQ(s1.code, 0) << s1.out;
  ASSERT_EQ(s2.code, 0) << s2.out;
  EXPECT_NE(s1.out.find("total NFE 25"), std::string::npos) << s1.out;

  auto a = aglab::read_text_file((dir / "a" / "trajectories" / "linear_seed3.jsonl").string());
  auto b = aglab::read_text_file((dir / "b" / "trajectories" / "linear_seed3.jsonl").string());
  EXPECT_EQ(a, b);
}

TEST_F(CliTest, GammaBarSweepWritesOneRowPerThreshold) {
  auto res = run("eval --gamma-bar-sweep 0.9,0.99,1.0 --seeds 0..9 --experiment sweep --out-dir " +
                 out_dir());
  ASSERT_EQ(res.code, 0) << res.out;
  auto rows = lines_of(fs::path(out_dir()) / "sweep" / "frontier.csv");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(split_csv(rows[1])[1], "ag-0.9");
  EXPECT_EQ(split_csv(rows[3])[1], "ag-1");

  auto bad = run("eval --gamma-bar-sweep 0.9,, --seeds 0..9 --out-dir " + out_dir());
  EXPECT_EQ(bad.code, 2);
}

TEST_F(CliTest, FrontierAccumulatesOneRowPerPolicy) {
  std::string common = " --seeds 0..4 --experiment acc --out-dir " + out_dir();
  ASSERT_EQ(run("eval --policy cfg" + common).code, 0);
  ASSERT_EQ(run("eval --policy cond" + common).code, 0);
  ASSERT_EQ(run("eval --policy interleave" + common).code, 0);

  fs::path frontier = fs::path(out_dir()) / "acc" / "frontier.csv";
  auto rows = lines_of(frontier);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(split_csv(rows[1])[1], "cfg-full");
  EXPECT_EQ(split_csv(rows[2])[1], "cond");
  EXPECT_EQ(split_csv(rows[3])[1], "interleave");

  // re-evaluating a policy replaces its row instead of appending a duplicate
  auto before = aglab::read_text_file(frontier.string());
  ASSERT_EQ(run("eval --policy cond" + common).code, 0);
  EXPECT_EQ(aglab::read_text_file(frontier.string()), before);
}

TEST_F(CliTest, TrainedCheckpointDrivesTheMlpBackend) {
  auto train = run("train --train-steps 400 --out-dir " + out_dir());
  ASSERT_EQ(train.code, 0) << train.out;
  ASSERT_TRUE(fs::exists(fs::path(out_dir()) / "checkpoint.json"));
  auto losses = lines_of(fs::path(out_dir()) / "loss_history.csv");
  ASSERT_EQ(losses.size(), 401u);
  EXPECT_EQ(losses[0], "step,loss");

  auto sample = run("sample --backend mlp --checkpoint " +
                    (fs::path(out_dir()) / "checkpoint.json").string() + " --policy cfg --seeds 0..2 --out-dir " +
                    (dir / "mlp").string());
  ASSERT_EQ(sample.code, 0) << sample.out;
  EXPECT_NE(sample.out.find("total NFE 120"), std::string::npos) << sample.out;
}

TEST_F(CliTest, ParallelSeedEvaluationMatchesSerial) {
  auto serial = run("eval --policy ag --gamma-bar 0.999 --seeds 0..29 --experiment serial --jobs 1 --out-dir " +
                    out_dir());
  auto parallel = run("eval --policy ag --gamma-bar 0.999 --seeds 0..29 --experiment parallel --jobs 4 --out-dir " +
                      out_dir());
  ASSERT_EQ(serial.code, 0) << serial.out;
  ASSERT_EQ(parallel.code, 0) << parallel.out;
  auto a = split_csv(lines_of(fs::path(out_dir()) / "serial" / "frontier.csv").at(1));
  auto b = split_csv(lines_of(fs::path(out_dir()) / "parallel" / "frontier.csv").at(1));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 2; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]) << "field " << i;
}

TEST_F(CliTest, ExportFiguresBundle) {
  auto res = run("export-figures --seeds 0..9 --out-dir " + out_dir());
  ASSERT_EQ(res.code, 0) << res.out;
  fs::path figs = fs::path(out_dir()) / "figures";
  EXPECT_TRUE(fs::exists(figs / "gamma_curve.csv"));
  auto gamma = lines_of(figs / "gamma_curve.csv");
  ASSERT_EQ(gamma.size(), 21u);
  EXPECT_EQ(gamma[0], "step,gamma_mean,ci_lo,ci_hi,n");

  auto naive = lines_of(figs / "naive_frontier.csv");
  EXPECT_EQ(naive.size(), 9u);  // header + full run + 7 truncation points
  auto ag = lines_of(figs / "ag_frontier.csv");
  EXPECT_EQ(ag.size(), 7u);  // header + 6 thresholds
}

}  // namespace
