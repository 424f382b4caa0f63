#include <gtest/gtest.h>

#include <sstream>

#include "bissm/checkpoint.hpp"
#include "cli.hpp"
#include "helpers.hpp"

using namespace bissm;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code;
  std::string out, err;
};

RunResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "bissm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::size_t count_lines(const fs::path& p) {
  const std::string s = io::read_file(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

// One small simulate + train shared by the tests below.
class CliRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = testing_util::fresh_dir("cli_run");
    ASSERT_EQ(run_cli({"simulate", "--out", (dir_ / "sim").string(), "--seed", "3", "--length", "1200",
                       "--test-length", "1200", "--anomaly-period", "400", "--anomaly-tail", "40"})
                  .code,
              0);
    const auto r = run_cli({"train", "--train", (dir_ / "sim/train.csv").string(), "--schema",
                            (dir_ / "sim/synthetic.schema").string(), "--out", (dir_ / "model").string(), "--seed",
                            "4", "--epochs", "3", "--lr", "0.005"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static fs::path dir_;
};
fs::path CliRun::dir_;

}  // namespace

TEST_F(CliRun, SimulateWritesLabelledSeries) {
  EXPECT_EQ(count_lines(dir_ / "sim/train.csv"), 1201u);
  EXPECT_EQ(count_lines(dir_ / "sim/test.csv"), 1201u);
  EXPECT_EQ(count_lines(dir_ / "sim/ground_truth.csv"), 1201u);
  Schema s = Schema::load(dir_ / "sim/synthetic.schema");
  const auto test = load_csv(dir_ / "sim/test.csv", s);
  ASSERT_TRUE(test.labels.has_value());
  std::size_t positives = 0;
  for (std::size_t t = 0; t < test.length(); ++t) {
    const int want = (t % 400) >= 360 ? 1 : 0;
    EXPECT_EQ((*test.labels)[t], want) << t;
    positives += static_cast<std::size_t>((*test.labels)[t]);
  }
  EXPECT_EQ(positives, 120u);
  const auto train = load_csv(dir_ / "sim/train.csv", s);
  for (int l : *train.labels) EXPECT_EQ(l, 0);
}

TEST_F(CliRun, SimulateDefaultsAndDeterminism) {
  const auto a = testing_util::fresh_dir("cli_sim_a");
  const auto b = testing_util::fresh_dir("cli_sim_b");
  ASSERT_EQ(run_cli({"simulate", "--out", a.string(), "--seed", "9"}).code, 0);
  ASSERT_EQ(run_cli({"simulate", "--out", b.string(), "--seed", "9"}).code, 0);
  EXPECT_EQ(count_lines(a / "train.csv"), 10001u);
  EXPECT_EQ(count_lines(a / "test.csv"), 10001u);
  for (const char* f : {"train.csv", "test.csv", "ground_truth.csv"}) {
    EXPECT_EQ(io::read_file(a / f), io::read_file(b / f)) << f;
  }
  EXPECT_NE(io::read_file(a / "train.csv"), io::read_file(a / "test.csv"));
}

TEST_F(CliRun, TrainWritesArtifactsAndLog) {
  for (const char* f : {cli::kSchemaFile, cli::kNormalizationFile, cli::kCheckpointFile, cli::kErrorModelFile,
                        cli::kNoiseFile, cli::kTrainLogFile, cli::kRunConfigFile}) {
    EXPECT_TRUE(fs::exists(dir_ / "model" / f)) << f;
  }
  EXPECT_EQ(count_lines(dir_ / "model" / cli::kTrainLogFile), 1u + 3u);
  EXPECT_TRUE(io::read_file(dir_ / "model" / cli::kTrainLogFile).starts_with("epoch,train_loss,val_loss\n"));
}

TEST_F(CliRun, ReloadedCheckpointReproducesValidationLoss) {
  cli::TrainOptions o;
  o.train_csv = dir_ / "sim/train.csv";
  o.schema = dir_ / "sim/synthetic.schema";
  o.out = testing_util::fresh_dir("cli_retrain");
  o.seed = 4;
  o.epochs = 3;
  o.learning_rate = 0.005;
  const auto summary = cli::cmd_train(o);

  Schema schema = Schema::load(o.schema);
  schema.drop.push_back(schema.label_column);
  schema.label_column.clear();
  const auto norm = load_normalization(o.out / cli::kNormalizationFile);
  const auto params = load_checkpoint(o.out / cli::kCheckpointFile);
  const auto windows = make_windows(apply_normalization(load_csv(o.train_csv, schema), norm), 8, 16);
  const auto val = split_train_val(windows, 0.75).second;
  EXPECT_EQ(val.size(), summary.val_windows);
  EXPECT_EQ(evaluate_loss(params, val), summary.val_loss);
  // Same seed, same bytes.
  EXPECT_EQ(io::read_file(o.out / cli::kCheckpointFile), io::read_file(dir_ / "model" / cli::kCheckpointFile));
}

TEST_F(CliRun, ScoreHasOneRowPerPredictableWindow) {
  const auto out = testing_util::fresh_dir("cli_score");
  const auto r = run_cli({"score", "--test", (dir_ / "sim/test.csv").string(), "--model",
                          (dir_ / "model").string(), "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  // 1200 rows, xl 8, ul 16: 1185 windows, the first has no predecessor.
  EXPECT_EQ(count_lines(out / "scores.csv"), 1u + 1184u);
  const auto ev = run_cli({"eval", "--scores", (out / "scores.csv").string(), "--out", out.string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_TRUE(fs::exists(out / "report.txt"));
  EXPECT_TRUE(fs::exists(out / "roc.csv"));
}

TEST_F(CliRun, FilterWritesReconstruction) {
  const auto out = testing_util::fresh_dir("cli_filter");
  const auto r = run_cli({"filter", "--test", (dir_ / "sim/test.csv").string(), "--ground-truth",
                          (dir_ / "sim/ground_truth.csv").string(), "--model", (dir_ / "model").string(), "--out",
                          out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(out / "smoothing.csv"), 1u + 1185u);
  const std::string csv = io::read_file(out / "smoothing.csv");
  EXPECT_TRUE(csv.starts_with("time_index,ground_truth,observation,forward_recon,backward_recon\n"));
  EXPECT_NE(csv.rfind(",nan\n"), std::string::npos);
  EXPECT_NE(io::read_file(out / "filter_report.txt").find("forward_median_sq_error"), std::string::npos);
}

TEST_F(CliRun, ConfigFileReproducesRun) {
  const auto out = testing_util::fresh_dir("cli_config");
  ASSERT_EQ(run_cli({"simulate", "--out", (out / "a").string(), "--seed", "5", "--length", "300", "--test-length",
                     "300", "--sigma-v", "0.25", "--no-anomalies"})
                .code,
            0);
  const auto r = run_cli({"--config", (out / "a" / cli::kRunConfigFile).string(), "simulate", "--out",
                          (out / "b").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(io::read_file(out / "a/test.csv"), io::read_file(out / "b/test.csv"));
  EXPECT_EQ(io::read_file(out / "a/train.csv"), io::read_file(out / "b/train.csv"));
}

TEST_F(CliRun, WeightsOverrideRoundTripsThroughConfig) {
  const auto out = testing_util::fresh_dir("cli_weights");
  const auto r = run_cli({"train", "--train", (dir_ / "sim/train.csv").string(), "--schema",
                          (dir_ / "sim/synthetic.schema").string(), "--out", out.string(), "--seed", "4",
                          "--epochs", "1", "--weights", "1,1,2,0.1,0.1,0.5"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto p = load_checkpoint(out / cli::kCheckpointFile);
  EXPECT_EQ(p.config.weights.recon_next, 2.0);
  EXPECT_EQ(p.config.weights.state_next, 0.5);
  const std::string cfg = io::read_file(out / cli::kRunConfigFile);
  EXPECT_TRUE(cfg.starts_with("[train]\n"));
  EXPECT_NE(cfg.find("weights"), std::string::npos);
}

TEST_F(CliRun, EvalReproducesBestF1Example) {
  const auto out = testing_util::fresh_dir("cli_eval");
  io::write_file(out / "s.csv", "time_index,score,label\n1,1,0\n2,2,1\n3,3,0\n4,4,1\n");
  const auto r = run_cli({"eval", "--scores", (out / "s.csv").string(), "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rep = read_report(out / "report.txt", out / "roc.csv");
  EXPECT_DOUBLE_EQ(rep.best_f1, 0.8);
  EXPECT_EQ(rep.threshold, 2.0);
}

TEST(CliExitCodes, Categories) {
  const auto out = testing_util::fresh_dir("cli_codes");
  EXPECT_EQ(run_cli({"--help"}).code, 0);
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"simulate", "--out", out.string()}).code, 2);           // missing --seed
  EXPECT_EQ(run_cli({"simulate", "--out", out.string(), "--seed", "x"}).code, 2);
  EXPECT_EQ(run_cli({"eval", "--scores", (out / "none.csv").string(), "--out", out.string()}).code, 2);
  EXPECT_EQ(run_cli({"score", "--test", (out / "none.csv").string(), "--model", out.string(), "--out",
                     out.string()})
                .code,
            2);
  io::write_file(out / "t.csv", "time_index,x,u\n1,0,0\n");
  const auto missing_model =
      run_cli({"score", "--test", (out / "t.csv").string(), "--model", out.string(), "--out", out.string()});
  EXPECT_EQ(missing_model.code, 2);
  EXPECT_NE(missing_model.err.find("bissm train"), std::string::npos);

  io::write_file(out / "one_class.csv", "time_index,score,label\n1,1,0\n2,2,0\n");
  EXPECT_EQ(run_cli({"eval", "--scores", (out / "one_class.csv").string(), "--out", out.string()}).code, 3);
  io::write_file(out / "bad.csv", "time_index,score\n1,1\n");
  EXPECT_EQ(run_cli({"eval", "--scores", (out / "bad.csv").string(), "--out", out.string()}).code, 3);
}
