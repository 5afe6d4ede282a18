#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "swwae/model.hpp"
#include "swwae/train.hpp"

namespace swwae {

/// Settings shared by every command. Unset optionals take the command's
/// desk-scale default.
struct RunConfig {
  std::string command;
  std::optional<std::string> arch;
  Modality modality = Modality::semi;
  PoolMode pool = PoolMode::hard;
  std::optional<double> beta;
  std::optional<double> lambda_nll, lambda_rec, lambda_mid;
  std::vector<std::size_t> labels;  // label budgets; first one for `train`
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  double momentum = 0.9;
  double dropout = 0.0;
  double l1 = 0.0;
  bool batchnorm = false;
  std::uint64_t seed = 1;
  std::optional<std::size_t> rounds;
  std::string out = "out";
  std::string train_images, train_labels, test_images, test_labels;
  std::optional<std::size_t> train_limit, test_limit;
  std::size_t batch_size = 32;
  std::vector<double> lambda_grid;
  std::vector<std::string> modes;
  std::string regime = "joint";
  bool no_decoder = false;
  bool paper_scale = false;
  std::string fault;         // "conv" plants a gradient fault in gradcheck
  std::string command_line;  // echoed into config.txt
};

/// Learning rate used when --lr is not given.
double default_lr(const std::string& command);

/// Writes config.txt (command line plus every resolved setting).
void write_config(const RunConfig& cfg, const std::string& resolved);

struct DataSplit {
  Dataset train, test;
  std::size_t height = 0, width = 0;  // before padding
};
/// Loads the configured (or bundled) IDX files, truncates to the limits and
/// zero-pads H and W to a multiple of `factor`.
DataSplit load_data(const RunConfig& cfg, std::size_t train_default, std::size_t test_default,
                    std::size_t factor);

struct TrainResult {
  History history;
  double test_error = 0.0;  // NaN without a classifier
};
TrainResult cmd_train(const RunConfig& cfg);

struct UnpoolRow {
  std::size_t pool_size;
  double mse_unpool, mse_upsample;
};
std::vector<UnpoolRow> cmd_unpool_vs_upsample(const RunConfig& cfg);

struct CapsuleStats {
  /// Correlation of the where shift with the translation sign.
  double corr_x_horizontal, corr_y_horizontal, corr_y_vertical, corr_x_vertical;
  double what_relative_change;
  std::size_t rows, active_rows;
};
CapsuleStats cmd_capsule(const RunConfig& cfg);

struct SweepRow {
  std::size_t n_labels;
  double lambda, mean_err, sd_err;
  std::size_t rounds;
};
std::vector<SweepRow> cmd_lambda_sweep(const RunConfig& cfg);

struct CompareRow {
  std::string mode;
  std::size_t n_labels;
  double mean_err, sd_err;
};
std::vector<CompareRow> cmd_regularizer_compare(const RunConfig& cfg);

/// Runs every gradient check, printing one line each to `os`.
std::vector<GradCheckReport> cmd_gradcheck(const RunConfig& cfg, std::ostream& os);

/// Pearson correlation; 0 when either side is constant.
double correlation(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace swwae
