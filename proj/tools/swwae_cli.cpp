// Command-line front end: one subcommand per experiment.

#include <malloc.h>

#include <cstdlib>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "swwae/archdsl.hpp"
#include "swwae/experiments.hpp"

namespace {

using swwae::RunConfig;

void add_common(CLI::App& app, RunConfig& cfg, std::string& mode, std::string& pool) {
  app.add_option("--arch", cfg.arch, "architecture string, e.g. (16)5c-2p-10fc");
  app.add_option("--mode", mode, "supervised | unsupervised | semi")
      ->check(CLI::IsMember({"supervised", "unsupervised", "semi"}));
  app.add_option("--pool", pool, "hard | soft")->check(CLI::IsMember({"hard", "soft"}));
  app.add_option("--beta", cfg.beta, "soft pooling temperature")->check(CLI::NonNegativeNumber);
  app.add_option("--lnll", cfg.lambda_nll, "weight of the classification loss")->check(CLI::NonNegativeNumber);
  app.add_option("--lrec", cfg.lambda_rec, "weight of the input reconstruction loss")->check(CLI::NonNegativeNumber);
  app.add_option("--lm", cfg.lambda_mid, "weight of the intermediate reconstruction losses")->check(CLI::NonNegativeNumber);
  app.add_option("--labels", cfg.labels, "labeled sample count(s), comma separated")->delimiter(',');
  app.add_option("--epochs", cfg.epochs)->check(CLI::PositiveNumber);
  app.add_option("--lr", cfg.lr, "SGD learning rate")->check(CLI::PositiveNumber);
  app.add_option("--momentum", cfg.momentum)->check(CLI::Range(0.0, 0.999999));
  app.add_option("--dropout", cfg.dropout, "dropout rate")->check(CLI::Range(0.0, 0.99));
  app.add_option("--l1", cfg.l1, "L1 penalty on stage outputs")->check(CLI::NonNegativeNumber);
  app.add_flag("--batchnorm", cfg.batchnorm, "spatial batch normalization in the encoder");
  app.add_option("--batch-size", cfg.batch_size)->check(CLI::PositiveNumber);
  app.add_option("--seed", cfg.seed);
  app.add_option("--rounds", cfg.rounds, "repetitions with refreshed subsets")->check(CLI::PositiveNumber);
  app.add_option("--out", cfg.out, "output directory");
  app.add_option("--train-images", cfg.train_images);
  app.add_option("--train-labels", cfg.train_labels);
  app.add_option("--test-images", cfg.test_images);
  app.add_option("--test-labels", cfg.test_labels);
  app.add_option("--train-limit", cfg.train_limit, "use the first N training samples (0: all)");
  app.add_option("--test-limit", cfg.test_limit, "use the first N test samples (0: all)");
  app.add_flag("--paper-scale", cfg.paper_scale, "lift desk-scale limits");
}

int run(const std::string& command, RunConfig& cfg) {
  if (command == "train") {
    const auto r = swwae::cmd_train(cfg);
    std::cout << "final test error: " << r.test_error << '\n';
  } else if (command == "unpool-vs-upsample") {
    for (const auto& row : swwae::cmd_unpool_vs_upsample(cfg)) {
      std::cout << "pool " << row.pool_size << ": mse_unpool=" << row.mse_unpool
                << " mse_upsample=" << row.mse_upsample << '\n';
    }
  } else if (command == "capsule") {
    const auto s = swwae::cmd_capsule(cfg);
    std::cout << "horizontal: corr(dx)=" << s.corr_x_horizontal << " corr(dy)=" << s.corr_y_horizontal
              << "\nvertical:   corr(dy)=" << s.corr_y_vertical << " corr(dx)=" << s.corr_x_vertical
              << "\nrelative what change: " << s.what_relative_change << '\n';
  } else if (command == "lambda-sweep") {
    for (const auto& row : swwae::cmd_lambda_sweep(cfg)) {
      std::cout << "labels " << row.n_labels << " lambda " << row.lambda << ": " << row.mean_err
                << " +- " << row.sd_err << '\n';
    }
  } else if (command == "regularizer-compare") {
    for (const auto& row : swwae::cmd_regularizer_compare(cfg)) {
      std::cout << row.mode << " labels " << row.n_labels << ": " << row.mean_err << " +- "
                << row.sd_err << '\n';
    }
  } else if (command == "gradcheck") {
    if (const char* fault = std::getenv("SWWAE_FAULT")) cfg.fault = fault;
    const auto reports = swwae::cmd_gradcheck(cfg, std::cout);
    std::size_t failed = 0;
    for (const auto& r : reports) failed += r.passed ? 0 : 1;
    std::cout << reports.size() << " checks, " << failed << " failed\n";
    return failed ? 1 : 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // Keep large tensor buffers on the heap between steps.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"Stacked what-where auto-encoder experiments"};
  app.require_subcommand(1);
  RunConfig cfg;
  std::string mode = "semi", pool = "hard";
  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {
      {"train", "train one model; writes history.csv, model.ckpt, config.txt"},
      {"unpool-vs-upsample", "reconstruction with and without where, pool sizes 2..16"},
      {"capsule", "what/where response to +-3 pixel translations"},
      {"lambda-sweep", "validation error against the reconstruction weight"},
      {"regularizer-compare", "swwae against other regularizers and disjoint training"},
      {"gradcheck", "finite-difference check of every layer and the full model"},
  };
  std::string regime = "joint";
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    add_common(*sub, cfg, mode, pool);
    if (std::string(s.name) == "train") {
      sub->add_option("--regime", regime)->check(CLI::IsMember({"joint", "unsup-sfx", "unsup-pretr"}));
      sub->add_flag("--no-decoder", cfg.no_decoder, "build the encoder and head only");
    }
    if (std::string(s.name) == "lambda-sweep") {
      sub->add_option("--lambda-grid", cfg.lambda_grid, "comma separated lambda values")->delimiter(',');
    }
    if (std::string(s.name) == "regularizer-compare") {
      sub->add_option("--modes", cfg.modes, "subset of swwae,dropout-conv,l1,unsup-sfx,unsup-pretr,noL2M")
          ->delimiter(',')
          ->check(CLI::IsMember({"swwae", "dropout-conv", "l1", "unsup-sfx", "unsup-pretr", "noL2M"}));
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  std::ostringstream line;
  for (int i = 0; i < argc; ++i) line << (i ? " " : "") << '\'' << argv[i] << '\'';
  cfg.command_line = line.str();
  cfg.command = app.get_subcommands().front()->get_name();
  cfg.modality = swwae::parse_modality(mode);
  cfg.pool = pool == "soft" ? swwae::PoolMode::soft : swwae::PoolMode::hard;
  cfg.regime = regime;

  try {
    return run(cfg.command, cfg);
  } catch (const swwae::ArchParseError& e) {
    std::cerr << "error: bad --arch: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
