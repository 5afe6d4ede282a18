#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "swwae/experiments.hpp"

using namespace swwae;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::string first_line(const fs::path& path) {
  const std::string text = slurp(path);
  return text.substr(0, text.find('\n'));
}

std::size_t line_count(const fs::path& path) {
  const std::string text = slurp(path);
  return std::size_t(std::count(text.begin(), text.end(), '\n'));
}

RunConfig tiny(const std::string& command, const std::string& dir) {
  RunConfig cfg;
  cfg.command = command;
  cfg.out = (fs::temp_directory_path() / ("swwae_exp_" + dir)).string();
  fs::remove_all(cfg.out);
  cfg.epochs = 1;
  cfg.train_limit = 60;
  cfg.test_limit = 30;
  cfg.labels = {20};
  cfg.rounds = 2;
  cfg.batch_size = 16;
  cfg.arch = "(4)5c-2p-(4)3c-2p-10fc";
  return cfg;
}

}  // namespace

TEST(Correlation, KnownValues) {
  EXPECT_NEAR(correlation({1, 2, 3}, {2, 4, 6}), 1.0, 1e-15);
  EXPECT_NEAR(correlation({1, 2, 3}, {3, 2, 1}), -1.0, 1e-15);
  EXPECT_EQ(correlation({1, 1, 1}, {1, 2, 3}), 0.0);
  EXPECT_NEAR(correlation({1, 2, 3, 4}, {1, 3, 2, 4}), 0.8, 1e-12);
}

TEST(Experiments, TrainWritesArtifactsDeterministically) {
  RunConfig cfg = tiny("train", "train");
  cfg.lambda_rec = 0.4;
  cfg.lambda_mid = 0.4;
  const TrainResult a = cmd_train(cfg);
  const fs::path out(cfg.out);
  EXPECT_EQ(first_line(out / "history.csv"), "epoch,l_nll,l_l2rec,l_l2m,l_total,val_error");
  EXPECT_EQ(line_count(out / "history.csv"), 2u);
  EXPECT_TRUE(fs::exists(out / "model.ckpt"));
  const std::string config = slurp(out / "config.txt");
  EXPECT_NE(config.find("lr=0.003"), std::string::npos);
  EXPECT_NE(config.find("lrec=0.4"), std::string::npos);
  EXPECT_GE(a.test_error, 0.0);
  EXPECT_LE(a.test_error, 1.0);
  const std::string first = slurp(out / "history.csv");
  const std::string weights = slurp(out / "model.ckpt");
  cmd_train(cfg);
  EXPECT_EQ(slurp(out / "history.csv"), first);
  EXPECT_EQ(slurp(out / "model.ckpt"), weights);
}

TEST(Experiments, LambdaSweepSchema) {
  RunConfig cfg = tiny("lambda-sweep", "sweep");
  cfg.lambda_grid = {0.0, 0.4};
  const auto rows = cmd_lambda_sweep(cfg);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].lambda, 0.4);
  EXPECT_EQ(rows[1].rounds, 2u);
  EXPECT_GE(rows[0].sd_err, 0.0);
  const fs::path csv = fs::path(cfg.out) / "sweep.csv";
  EXPECT_EQ(first_line(csv), "n_labels,lambda,mean_err,sd_err,rounds");
  EXPECT_EQ(line_count(csv), 3u);
  const std::string before = slurp(csv);
  cmd_lambda_sweep(cfg);
  EXPECT_EQ(slurp(csv), before);
}

TEST(Experiments, RegularizerCompareSchema) {
  RunConfig cfg = tiny("regularizer-compare", "compare");
  cfg.rounds = 1;
  const auto rows = cmd_regularizer_compare(cfg);
  ASSERT_EQ(rows.size(), 6u);
  std::vector<std::string> modes;
  for (const auto& r : rows) modes.push_back(r.mode);
  EXPECT_EQ(modes, (std::vector<std::string>{"swwae", "dropout-conv", "l1", "unsup-sfx",
                                             "unsup-pretr", "noL2M"}));
  const fs::path out(cfg.out);
  EXPECT_EQ(first_line(out / "compare.csv"), "mode,n_labels,mean_err,sd_err");
  EXPECT_TRUE(fs::exists(out / "histories" / "unsup-sfx_n20_r0.csv"));
  // The unsupervised phase has no classifier to validate.
  EXPECT_NE(slurp(out / "histories" / "unsup-sfx_n20_r0.csv").find(",NA\n"), std::string::npos);
}

TEST(Experiments, UnpoolVsUpsampleSchema) {
  RunConfig cfg = tiny("unpool-vs-upsample", "unpool");
  cfg.train_limit = 20;
  cfg.test_limit = 10;
  const auto rows = cmd_unpool_vs_upsample(cfg);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows.back().pool_size, 16u);
  for (const auto& r : rows) {
    EXPECT_GT(r.mse_unpool, 0.0);
    EXPECT_GT(r.mse_upsample, 0.0);
  }
  const fs::path out(cfg.out);
  EXPECT_EQ(first_line(out / "mse.csv"), "pool_size,mse_unpool,mse_upsample");
  // 10 columns of 28x28 digits: originals plus one row per pool size.
  EXPECT_EQ(first_line(out / "recon_unpool.pgm"), "P5");
  EXPECT_NE(slurp(out / "recon_unpool.pgm").find("290 145"), std::string::npos);
}

TEST(Experiments, CapsuleSchema) {
  RunConfig cfg = tiny("capsule", "capsule");
  cfg.train_limit = 20;
  cfg.test_limit = 10;
  const CapsuleStats s = cmd_capsule(cfg);
  EXPECT_GT(s.rows, 0u);
  EXPECT_LE(s.active_rows, s.rows);
  const fs::path out(cfg.out);
  EXPECT_EQ(first_line(out / "scatter.csv"),
            "digit,plane,what_orig,what_trans,where_x_orig,where_x_trans,where_y_orig,"
            "where_y_trans,direction,sign");
  EXPECT_EQ(line_count(out / "scatter.csv"), s.rows + 1);
  EXPECT_TRUE(fs::exists(out / "recon_grid.pgm"));
  EXPECT_TRUE(fs::exists(out / "capsule_summary.csv"));
}

TEST(Experiments, GradcheckAllPass) {
  RunConfig cfg;
  cfg.command = "gradcheck";
  std::ostringstream os;
  const auto reports = cmd_gradcheck(cfg, os);
  EXPECT_EQ(reports.size(), 17u);
  for (const auto& r : reports) EXPECT_TRUE(r.passed) << r.name << ' ' << r.max_rel_error;
  cfg.fault = "conv";
  std::ostringstream faulty;
  cmd_gradcheck(cfg, faulty);
  EXPECT_NE(faulty.str().find("FAIL conv"), std::string::npos);
}
