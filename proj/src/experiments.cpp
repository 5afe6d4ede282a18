#include "swwae/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "swwae/checkpoint.hpp"
#include "swwae/data.hpp"
#include "swwae/pooling.hpp"

namespace swwae {

namespace {

constexpr const char* kMnistArch = "(16)5c-2p-(16)3c-2p-(16)3c-2p-10fc";
constexpr const char* kCapsuleArch = "(32)5c-(32)3c-2p-(32)3c-16p";
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  if (std::isnan(v)) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
std::string join(const std::vector<T>& items) {
  std::ostringstream os;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) os << ',';
    if constexpr (std::is_floating_point_v<T>) {
      os << fmt(items[i]);
    } else {
      os << items[i];
    }
  }
  return os.str();
}

std::ofstream open_out(const RunConfig& cfg, const std::string& name) {
  std::ofstream os(std::filesystem::path(cfg.out) / name);
  if (!os) throw std::runtime_error("cannot write " + (std::filesystem::path(cfg.out) / name).string());
  return os;
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
  return (std::filesystem::path(cfg.out) / name).string();
}

std::string data_file(const std::string& given, const char* bundled) {
  return given.empty() ? std::string(SWWAE_DATA_DIR) + "/" + bundled : given;
}

std::pair<double, double> mean_sd(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

std::string common_settings(const RunConfig& cfg) {
  std::ostringstream os;
  os << "lr=" << fmt(cfg.lr.value_or(default_lr(cfg.command))) << '\n'
     << "momentum=" << fmt(cfg.momentum) << '\n'
     << "batch_size=" << cfg.batch_size << '\n'
     << "seed=" << cfg.seed << '\n'
     << "train_images=" << data_file(cfg.train_images, "mnist5k-train-images-idx3-ubyte.gz") << '\n'
     << "train_labels=" << data_file(cfg.train_labels, "mnist5k-train-labels-idx1-ubyte.gz") << '\n'
     << "test_images=" << data_file(cfg.test_images, "mnist5k-t10k-images-idx3-ubyte.gz") << '\n'
     << "test_labels=" << data_file(cfg.test_labels, "mnist5k-t10k-labels-idx1-ubyte.gz") << '\n'
     << "paper_scale=" << cfg.paper_scale << '\n';
  return os.str();
}

SwwaeModel build_model(const std::string& arch, const DataSplit& split, const SwwaeConfig& mc,
                       std::uint64_t seed) {
  const Tensor& x = split.train.images;
  return SwwaeModel(parse_architecture(arch, x.dim(1)), {x.dim(1), x.dim(2), x.dim(3)}, mc, seed);
}

TrainOptions train_options(const RunConfig& cfg, std::size_t epochs, std::uint64_t seed) {
  TrainOptions o;
  o.epochs = epochs;
  o.pretrain_epochs = epochs;
  o.batch_size = cfg.batch_size;
  o.lr = cfg.lr.value_or(default_lr(cfg.command));
  o.momentum = cfg.momentum;
  o.seed = seed;
  return o;
}

/// Every row of `images` through `fn`, `batch` rows at a time.
template <typename Fn>
Tensor batched(const Tensor& images, std::size_t batch, Fn fn) {
  Tensor out;
  std::size_t row = 0;
  for (std::size_t start = 0; start < images.dim(0); start += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(images.dim(0), start + batch); ++i) idx.push_back(i);
    const Tensor part = fn(gather(images, idx));
    if (out.empty()) {
      Shape shape = part.shape();
      shape[0] = images.dim(0);
      out = Tensor(shape);
      row = part.size() / part.dim(0);
    }
    std::copy_n(part.data(), part.size(), out.data() + start * row);
  }
  return out;
}

/// Central h x w window of each image.
Tensor crop_center(const Tensor& x, std::size_t h, std::size_t w) {
  const std::size_t top = (x.dim(2) - h) / 2, left = (x.dim(3) - w) / 2;
  Tensor out({x.dim(0), x.dim(1), h, w});
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    for (std::size_t c = 0; c < x.dim(1); ++c) {
      for (std::size_t y = 0; y < h; ++y) {
        std::copy_n(x.data() + x.offset(n, c, y + top, left), w, out.data() + out.offset(n, c, y, 0));
      }
    }
  }
  return out;
}

double mse(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

/// Stacks equally shaped N x C x H x W tensors along N.
Tensor stack(const std::vector<Tensor>& parts) {
  Shape shape = parts.front().shape();
  shape[0] = 0;
  for (const auto& p : parts) shape[0] += p.dim(0);
  Tensor out(shape);
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy_n(p.data(), p.size(), out.data() + at);
    at += p.size();
  }
  return out;
}

Tensor first_rows(const Tensor& x, std::size_t n) {
  std::vector<std::size_t> idx(std::min(n, x.dim(0)));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return gather(x, idx);
}

std::vector<std::size_t> labeled_indices(const Dataset& train, std::size_t n, std::uint64_t seed) {
  if (n == 0) return {};
  return sample_labeled_subset(train, n, seed).indices;
}

double final_error(const History& h) {
  return h.epochs.empty() ? kNaN : h.epochs.back().val_error;
}

}  // namespace

double default_lr(const std::string& command) {
  if (command == "unpool-vs-upsample" || command == "capsule") return 0.01;
  return 0.003;
}

void write_config(const RunConfig& cfg, const std::string& resolved) {
  std::filesystem::create_directories(cfg.out);
  auto os = open_out(cfg, "config.txt");
  os << "# " << (cfg.command_line.empty() ? cfg.command : cfg.command_line) << '\n'
     << "command=" << cfg.command << '\n'
     << resolved << common_settings(cfg);
}

DataSplit load_data(const RunConfig& cfg, std::size_t train_default, std::size_t test_default,
                    std::size_t factor) {
  DataSplit split;
  split.train = load_idx(data_file(cfg.train_images, "mnist5k-train-images-idx3-ubyte.gz"),
                         data_file(cfg.train_labels, "mnist5k-train-labels-idx1-ubyte.gz"));
  split.test = load_idx(data_file(cfg.test_images, "mnist5k-t10k-images-idx3-ubyte.gz"),
                        data_file(cfg.test_labels, "mnist5k-t10k-labels-idx1-ubyte.gz"));
  if (!cfg.paper_scale) {
    split.train = head(split.train, cfg.train_limit.value_or(train_default));
    split.test = head(split.test, cfg.test_limit.value_or(test_default));
  }
  split.height = split.train.images.dim(2);
  split.width = split.train.images.dim(3);
  split.train = pad_to_multiple(split.train, factor);
  split.test = pad_to_multiple(split.test, factor);
  return split;
}

TrainResult cmd_train(const RunConfig& cfg) {
  const std::string arch = cfg.arch.value_or(kMnistArch);
  const ArchSpec spec = parse_architecture(arch);
  const std::size_t n_labels = cfg.labels.empty() ? 100 : cfg.labels.front();
  const std::size_t epochs = cfg.epochs.value_or(5);

  SwwaeConfig mc;
  mc.lambda_nll = cfg.lambda_nll.value_or(1.0);
  mc.lambda_rec = cfg.lambda_rec.value_or(0.0);
  mc.lambda_mid = cfg.lambda_mid.value_or(0.0);
  mc.modality = cfg.modality;
  mc.pool_mode = cfg.pool;
  mc.beta = cfg.beta.value_or(1.0);
  mc.dropout_fc = cfg.dropout;
  mc.l1_weight = cfg.l1;
  mc.batchnorm = cfg.batchnorm;
  mc.build_decoder = !cfg.no_decoder;
  mc.validate();

  std::ostringstream resolved;
  resolved << "arch=" << arch << '\n'
           << "mode=" << to_string(cfg.modality) << '\n'
           << "regime=" << cfg.regime << '\n'
           << "pool=" << (cfg.pool == PoolMode::hard ? "hard" : "soft") << '\n'
           << "beta=" << fmt(mc.beta) << '\n'
           << "lnll=" << fmt(mc.lambda_nll) << '\n'
           << "lrec=" << fmt(mc.lambda_rec) << '\n'
           << "lm=" << fmt(mc.lambda_mid) << '\n'
           << "labels=" << n_labels << '\n'
           << "epochs=" << epochs << '\n'
           << "dropout=" << fmt(cfg.dropout) << '\n'
           << "l1=" << fmt(cfg.l1) << '\n'
           << "batchnorm=" << cfg.batchnorm << '\n'
           << "no_decoder=" << cfg.no_decoder << '\n'
           << "train_limit=" << cfg.train_limit.value_or(0) << '\n'
           << "test_limit=" << cfg.test_limit.value_or(0) << '\n';
  write_config(cfg, resolved.str());

  const DataSplit split = load_data(cfg, 0, 0, pooling_factor(spec));
  SwwaeModel model = build_model(arch, split, mc, cfg.seed);
  TrainOptions opts = train_options(cfg, epochs, cfg.seed);
  opts.regime = parse_regime(cfg.regime);

  TrainResult result;
  result.history = train_run(model, split.train, labeled_indices(split.train, n_labels, cfg.seed),
                             &split.test, opts);
  result.history.write_csv(out_path(cfg, "history.csv"));
  save_checkpoint(model, out_path(cfg, "model.ckpt"));
  result.test_error = final_error(result.history);
  return result;
}

std::vector<UnpoolRow> cmd_unpool_vs_upsample(const RunConfig& cfg) {
  const std::size_t epochs = cfg.epochs.value_or(5);
  const double lambda_rec = cfg.lambda_rec.value_or(1.0);
  const std::vector<std::size_t> pools{2, 4, 8, 16};
  std::ostringstream resolved;
  resolved << "arch=(16)5c-(32)3c-Xp for X in " << join(pools) << '\n'
           << "pool=hard\n"
           << "lrec=" << fmt(lambda_rec) << '\n'
           << "epochs=" << epochs << '\n'
           << "train_limit=" << cfg.train_limit.value_or(2000) << '\n'
           << "test_limit=" << cfg.test_limit.value_or(500) << '\n';
  write_config(cfg, resolved.str());

  std::vector<UnpoolRow> rows;
  std::vector<Tensor> grid_unpool, grid_upsample;
  for (std::size_t s : pools) {
    const std::string arch = "(16)5c-(32)3c-" + std::to_string(s) + "p";
    const DataSplit split = load_data(cfg, 2000, 500, s);
    const Tensor truth = crop_center(split.test.images, split.height, split.width);
    if (grid_unpool.empty()) {
      grid_unpool.push_back(first_rows(truth, 10));
      grid_upsample.push_back(first_rows(truth, 10));
    }
    SwwaeConfig mc;
    mc.lambda_nll = 0.0;
    mc.lambda_rec = lambda_rec;
    mc.modality = Modality::unsupervised;
    mc.pool_mode = PoolMode::hard;
    SwwaeModel model = build_model(arch, split, mc, cfg.seed);
    train_run(model, split.train, {}, nullptr, train_options(cfg, epochs, cfg.seed));

    // The same trained model decodes twice: with its switches, then without.
    UnpoolRow row{s, 0.0, 0.0};
    for (UnpoolMode mode : {UnpoolMode::where, UnpoolMode::upsample}) {
      model.config().unpool_mode = mode;
      const Tensor recon = crop_center(
          batched(split.test.images, 100, [&](const Tensor& x) { return model.reconstruct(x); }),
          split.height, split.width);
      const double err = mse(recon, truth);
      (mode == UnpoolMode::where ? row.mse_unpool : row.mse_upsample) = err;
      (mode == UnpoolMode::where ? grid_unpool : grid_upsample).push_back(first_rows(recon, 10));
    }
    rows.push_back(row);
  }

  auto os = open_out(cfg, "mse.csv");
  os << "pool_size,mse_unpool,mse_upsample\n";
  for (const auto& r : rows) os << r.pool_size << ',' << fmt(r.mse_unpool) << ',' << fmt(r.mse_upsample) << '\n';
  to_pgm(stack(grid_unpool), out_path(cfg, "recon_unpool.pgm"), 10);
  to_pgm(stack(grid_upsample), out_path(cfg, "recon_upsample.pgm"), 10);
  return rows;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) return 0.0;
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

CapsuleStats cmd_capsule(const RunConfig& cfg) {
  const std::string arch = cfg.arch.value_or(kCapsuleArch);
  const ArchSpec spec = parse_architecture(arch);
  const std::size_t epochs = cfg.epochs.value_or(10);
  constexpr int kShift = 3;

  SwwaeConfig mc;
  mc.lambda_nll = 0.0;
  mc.lambda_rec = cfg.lambda_rec.value_or(1.0);
  mc.lambda_mid = cfg.lambda_mid.value_or(1.0);
  mc.modality = Modality::unsupervised;
  mc.pool_mode = PoolMode::soft;
  mc.beta = cfg.beta.value_or(100.0);

  std::ostringstream resolved;
  resolved << "arch=" << arch << '\n'
           << "pool=soft\n"
           << "beta=" << fmt(mc.beta) << '\n'
           << "lrec=" << fmt(mc.lambda_rec) << '\n'
           << "lm=" << fmt(mc.lambda_mid) << '\n'
           << "epochs=" << epochs << '\n'
           << "train_translation=" << kShift << '\n'
           << "train_limit=" << cfg.train_limit.value_or(2000) << '\n'
           << "test_limit=" << cfg.test_limit.value_or(500) << '\n';
  write_config(cfg, resolved.str());

  const DataSplit split = load_data(cfg, 2000, 500, pooling_factor(spec));
  SwwaeModel model = build_model(arch, split, mc, cfg.seed);
  TrainOptions opts = train_options(cfg, epochs, cfg.seed);
  opts.translate = kShift;
  train_run(model, split.train, {}, nullptr, opts);

  // Top-stage what/where without running the decoder.
  auto encode = [&](const Tensor& x) {
    model.config().modality = Modality::supervised;
    ForwardTrace t = model.forward(x, {}, std::vector<bool>(x.dim(0), false), Mode::eval);
    model.config().modality = Modality::unsupervised;
    if (t.wheres.empty()) throw std::invalid_argument("capsule: architecture has no pooling");
    return t.wheres.back();
  };

  const Tensor& test = split.test.images;
  auto os = open_out(cfg, "scatter.csv");
  os << "digit,plane,what_orig,what_trans,where_x_orig,where_x_trans,where_y_orig,where_y_trans,"
        "direction,sign\n";
  std::vector<double> dx_h, dy_h, sign_h, dx_v, dy_v, sign_v;
  double what_change = 0.0, what_total = 0.0;
  CapsuleStats stats{};
  for (std::size_t start = 0; start < test.dim(0); start += 100) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(test.dim(0), start + 100); ++i) idx.push_back(i);
    const Tensor x = gather(test, idx);
    const PoolOutput orig = encode(x);
    const std::size_t planes = orig.what.dim(1);
    const std::size_t cells = orig.what.dim(2) * orig.what.dim(3);
    for (char direction : {'h', 'v'}) {
      for (int sign : {1, -1}) {
        const PoolOutput moved = encode(direction == 'h' ? translate(x, sign * kShift, 0)
                                                         : translate(x, 0, sign * kShift));
        for (std::size_t n = 0; n < idx.size(); ++n) {
          for (std::size_t c = 0; c < planes; ++c) {
            for (std::size_t q = 0; q < cells; ++q) {
              const std::size_t wi = (n * planes + c) * cells + q;
              const std::size_t xi = (n * 2 * planes + 2 * c) * cells + q;
              const std::size_t yi = xi + cells;
              const double w0 = orig.what[wi], w1 = moved.what[wi];
              const double x0 = orig.where[xi], x1 = moved.where[xi];
              const double y0 = orig.where[yi], y1 = moved.where[yi];
              os << idx[n] << ',' << c * cells + q << ',' << fmt(w0) << ',' << fmt(w1) << ','
                 << fmt(x0) << ',' << fmt(x1) << ',' << fmt(y0) << ',' << fmt(y1) << ','
                 << direction << ',' << sign << '\n';
              ++stats.rows;
              what_change += std::abs(w1 - w0);
              what_total += std::abs(w0);
              if (w0 <= 1e-6 || w1 <= 1e-6) continue;
              ++stats.active_rows;
              if (direction == 'h') {
                dx_h.push_back(x1 - x0);
                dy_h.push_back(y1 - y0);
                sign_h.push_back(sign);
              } else {
                dx_v.push_back(x1 - x0);
                dy_v.push_back(y1 - y0);
                sign_v.push_back(sign);
              }
            }
          }
        }
      }
    }
  }
  stats.corr_x_horizontal = correlation(dx_h, sign_h);
  stats.corr_y_horizontal = correlation(dy_h, sign_h);
  stats.corr_y_vertical = correlation(dy_v, sign_v);
  stats.corr_x_vertical = correlation(dx_v, sign_v);
  stats.what_relative_change = what_total > 0.0 ? what_change / what_total : 0.0;

  const Tensor sample = first_rows(test, 10);
  auto recon = [&](const Tensor& x) {
    return crop_center(model.reconstruct(x), split.height, split.width);
  };
  to_pgm(stack({crop_center(sample, split.height, split.width), recon(sample),
                recon(translate(sample, kShift, 0)), recon(translate(sample, -kShift, 0))}),
         out_path(cfg, "recon_grid.pgm"), 10);

  auto summary = open_out(cfg, "capsule_summary.csv");
  summary << "corr_x_horizontal,corr_y_horizontal,corr_y_vertical,corr_x_vertical,"
             "what_relative_change,rows,active_rows\n"
          << fmt(stats.corr_x_horizontal) << ',' << fmt(stats.corr_y_horizontal) << ','
          << fmt(stats.corr_y_vertical) << ',' << fmt(stats.corr_x_vertical) << ','
          << fmt(stats.what_relative_change) << ',' << stats.rows << ',' << stats.active_rows << '\n';
  return stats;
}

namespace {

struct Cell {
  SwwaeConfig config;
  Regime regime = Regime::joint;
};

History run_cell(const RunConfig& cfg, const std::string& arch, const DataSplit& split,
                 const Cell& cell, std::size_t n_labels, std::size_t epochs, std::uint64_t seed) {
  SwwaeModel model = build_model(arch, split, cell.config, seed);
  TrainOptions opts = train_options(cfg, epochs, seed);
  opts.regime = cell.regime;
  return train_run(model, split.train, labeled_indices(split.train, n_labels, seed), &split.test,
                   opts);
}

SwwaeConfig base_config(const RunConfig& cfg) {
  SwwaeConfig mc;
  mc.lambda_nll = cfg.lambda_nll.value_or(1.0);
  mc.modality = Modality::semi;
  mc.pool_mode = cfg.pool;
  mc.beta = cfg.beta.value_or(1.0);
  mc.dropout_fc = cfg.dropout;
  mc.batchnorm = cfg.batchnorm;
  return mc;
}

std::vector<std::size_t> label_budgets(const RunConfig& cfg) {
  if (!cfg.labels.empty()) return cfg.labels;
  if (cfg.paper_scale) return {100, 600, 1000, 3000};
  return {100};
}

std::string sweep_settings(const RunConfig& cfg, const std::string& arch, std::size_t epochs,
                           std::size_t rounds, const std::vector<std::size_t>& budgets) {
  std::ostringstream os;
  os << "arch=" << arch << '\n'
     << "pool=" << (cfg.pool == PoolMode::hard ? "hard" : "soft") << '\n'
     << "beta=" << fmt(cfg.beta.value_or(1.0)) << '\n'
     << "lnll=" << fmt(cfg.lambda_nll.value_or(1.0)) << '\n'
     << "labels=" << join(budgets) << '\n'
     << "epochs=" << epochs << '\n'
     << "rounds=" << rounds << '\n'
     << "dropout=" << fmt(cfg.dropout) << '\n'
     << "batchnorm=" << cfg.batchnorm << '\n'
     << "train_limit=" << cfg.train_limit.value_or(0) << '\n'
     << "test_limit=" << cfg.test_limit.value_or(0) << '\n';
  return os.str();
}

}  // namespace

std::vector<SweepRow> cmd_lambda_sweep(const RunConfig& cfg) {
  const std::string arch = cfg.arch.value_or(kMnistArch);
  const std::size_t epochs = cfg.epochs.value_or(15);
  const std::size_t rounds = cfg.rounds.value_or(3);
  const auto budgets = label_budgets(cfg);
  const std::vector<double> grid =
      cfg.lambda_grid.empty() ? std::vector<double>{0.0, 0.2, 0.4, 0.8, 1.6, 3.2} : cfg.lambda_grid;
  if (rounds == 0) throw std::invalid_argument("rounds must be positive");
  write_config(cfg, sweep_settings(cfg, arch, epochs, rounds, budgets) +
                        "lambda_grid=" + join(grid) + '\n');

  const DataSplit split = load_data(cfg, 0, 0, pooling_factor(parse_architecture(arch)));
  std::vector<SweepRow> rows;
  auto os = open_out(cfg, "sweep.csv");
  os << "n_labels,lambda,mean_err,sd_err,rounds\n";
  for (std::size_t n : budgets) {
    for (double lambda : grid) {
      Cell cell{base_config(cfg)};
      cell.config.lambda_rec = lambda;
      cell.config.lambda_mid = lambda;
      std::vector<double> errors;
      for (std::size_t r = 0; r < rounds; ++r) {
        errors.push_back(final_error(run_cell(cfg, arch, split, cell, n, epochs, cfg.seed + r)));
      }
      const auto [mean, sd] = mean_sd(errors);
      rows.push_back({n, lambda, mean, sd, rounds});
      os << n << ',' << fmt(lambda) << ',' << fmt(mean) << ',' << fmt(sd) << ',' << rounds << '\n';
      os.flush();
    }
  }
  return rows;
}

std::vector<CompareRow> cmd_regularizer_compare(const RunConfig& cfg) {
  const std::string arch = cfg.arch.value_or(kMnistArch);
  const std::size_t epochs = cfg.epochs.value_or(15);
  const std::size_t rounds = cfg.rounds.value_or(3);
  const auto budgets = label_budgets(cfg);
  const std::vector<std::string> modes =
      cfg.modes.empty() ? std::vector<std::string>{"swwae", "dropout-conv", "l1", "unsup-sfx",
                                                   "unsup-pretr", "noL2M"}
                        : cfg.modes;
  const double lambda_rec = cfg.lambda_rec.value_or(0.4);
  const double lambda_mid = cfg.lambda_mid.value_or(lambda_rec);
  const double conv_dropout = cfg.dropout > 0.0 ? cfg.dropout : 0.25;
  const double l1 = cfg.l1 > 0.0 ? cfg.l1 : 1e-5;
  if (rounds == 0) throw std::invalid_argument("rounds must be positive");
  write_config(cfg, sweep_settings(cfg, arch, epochs, rounds, budgets) + "modes=" + join(modes) +
                        "\nlrec=" + fmt(lambda_rec) + "\nlm=" + fmt(lambda_mid) +
                        "\nconv_dropout=" + fmt(conv_dropout) + "\nl1=" + fmt(l1) + '\n');

  const DataSplit split = load_data(cfg, 0, 0, pooling_factor(parse_architecture(arch)));
  std::filesystem::create_directories(std::filesystem::path(cfg.out) / "histories");
  std::vector<CompareRow> rows;
  auto os = open_out(cfg, "compare.csv");
  os << "mode,n_labels,mean_err,sd_err\n";
  for (const auto& mode : modes) {
    Cell cell{base_config(cfg)};
    if (mode == "swwae" || mode == "unsup-sfx" || mode == "unsup-pretr") {
      cell.config.lambda_rec = lambda_rec;
      cell.config.lambda_mid = lambda_mid;
      if (mode == "unsup-sfx") cell.regime = Regime::unsup_sfx;
      if (mode == "unsup-pretr") cell.regime = Regime::unsup_pretr;
    } else if (mode == "dropout-conv") {
      cell.config.dropout_conv = conv_dropout;
    } else if (mode == "l1") {
      cell.config.l1_weight = l1;
    } else if (mode == "noL2M") {
      cell.config.lambda_rec = lambda_rec;
      cell.config.lambda_mid = 0.0;
    } else {
      throw std::invalid_argument("unknown mode '" + mode + "'");
    }
    for (std::size_t n : budgets) {
      std::vector<double> errors;
      for (std::size_t r = 0; r < rounds; ++r) {
        const History h = run_cell(cfg, arch, split, cell, n, epochs, cfg.seed + r);
        h.write_csv(out_path(cfg, "histories/" + mode + "_n" + std::to_string(n) + "_r" +
                                      std::to_string(r) + ".csv"));
        errors.push_back(final_error(h));
      }
      const auto [mean, sd] = mean_sd(errors);
      rows.push_back({mode, n, mean, sd});
      os << mode << ',' << n << ',' << fmt(mean) << ',' << fmt(sd) << '\n';
      os.flush();
    }
  }
  return rows;
}

namespace {

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct Checker {
  Rng rng;
  GradCheckOptions options;
  std::ostream& os;
  std::vector<GradCheckReport> reports;

  Tensor random(Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = uniform(rng, lo, hi);
    return t;
  }
  /// Values bounded away from zero, for inputs of kinked functions.
  Tensor off_kink(Shape shape) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = (uniform01(rng) < 0.5 ? -1.0 : 1.0) * uniform(rng, 0.1, 1.0);
    return t;
  }

  void run(const std::string& name, const std::function<double()>& loss,
           const std::vector<GradTarget>& targets) {
    GradCheckReport r = gradient_check(name, loss, targets, options);
    char line[256];
    if (r.passed) {
      std::snprintf(line, sizeof line, "PASS %-18s max_rel_err=%.3e checked=%zu", name.c_str(),
                    r.max_rel_error, r.checked);
    } else {
      std::snprintf(line, sizeof line,
                    "FAIL %-18s max_rel_err=%.3e at %s[%zu] analytic=%.10g numeric=%.10g",
                    name.c_str(), r.max_rel_error, r.worst_target.c_str(), r.worst_index,
                    r.worst_analytic, r.worst_numeric);
    }
    os << line << '\n';
    reports.push_back(std::move(r));
  }

  void model_check(const std::string& name, PoolMode pool, bool batchnorm, UnpoolMode unpool) {
    SwwaeConfig mc;
    mc.lambda_nll = 1.0;
    mc.lambda_rec = 0.5;
    mc.lambda_mid = 0.5;
    mc.pool_mode = pool;
    mc.beta = 3.0;
    mc.batchnorm = batchnorm;
    mc.unpool_mode = unpool;
    SwwaeModel model(parse_architecture("(4)3c-2p-(4)3c-2p-4fc"), {1, 8, 8}, mc, 7);
    const Tensor x = random({3, 1, 8, 8}, 0.0, 1.0);
    const std::vector<int> labels{1, -1, 3};
    const std::vector<bool> mask{true, false, true};
    ForwardTrace trace = model.forward(x, labels, mask, Mode::train);
    model.backward(trace);
    std::vector<Tensor> grads;
    auto params = model.trainable_parameters();
    for (const auto& p : params) grads.push_back(*p.grad);
    std::vector<GradTarget> targets;
    for (std::size_t i = 0; i < params.size(); ++i) {
      targets.push_back({params[i].name, params[i].value, &grads[i]});
    }
    run(name, [&] { return model.forward(x, labels, mask, Mode::train).losses.total; }, targets);
  }
};

}  // namespace

std::vector<GradCheckReport> cmd_gradcheck(const RunConfig& cfg, std::ostream& os) {
  Checker ck{make_rng(cfg.seed, 77), {}, os, {}};
  ck.options.seed = cfg.seed;

  {
    Conv2d conv(2, 3, 3, 1);
    conv.init(ck.rng);
    Tensor x = ck.random({2, 2, 5, 5});
    const Tensor r = ck.random({2, 3, 5, 5});
    conv.zero_grad();
    const Tensor gx = conv.backward(x, r, true);
    Tensor gw = conv.grad_weights;
    if (cfg.fault == "conv") gw = scaled(gw, 1.01);
    ck.run("conv", [&] { return dot(conv.forward(x), r); },
           {{"weights", &conv.weights, &gw}, {"bias", &conv.bias, &conv.grad_bias}, {"x", &x, &gx}});
  }
  {
    FullyConnected fc(6, 4);
    fc.init(ck.rng);
    Tensor x = ck.random({3, 6});
    const Tensor r = ck.random({3, 4});
    fc.zero_grad();
    const Tensor gx = fc.backward(x, r, true);
    ck.run("fc", [&] { return dot(fc.forward(x), r); },
           {{"weights", &fc.weights, &fc.grad_weights}, {"bias", &fc.bias, &fc.grad_bias}, {"x", &x, &gx}});
  }
  {
    Tensor x = ck.off_kink({2, 3, 4, 4});
    const Tensor r = ck.random(x.shape());
    const Tensor gx = relu_backward(x, r);
    ck.run("relu", [&] { return dot(relu(x), r); }, {{"x", &x, &gx}});
  }
  {
    BatchNorm2d bn(3);
    bn.scale = ck.random({3}, 0.5, 1.5);
    bn.shift = ck.random({3});
    Tensor x = ck.random({4, 3, 3, 3});
    const Tensor r = ck.random(x.shape());
    bn.zero_grad();
    bn.forward(x, Mode::train);
    const Tensor gx = bn.backward(r);
    ck.run("batchnorm", [&] { return dot(bn.forward(x, Mode::train), r); },
           {{"x", &x, &gx}, {"scale", &bn.scale, &bn.grad_scale}, {"shift", &bn.shift, &bn.grad_shift}});
  }
  {
    Dropout drop(0.5);
    Tensor x = ck.random({3, 8});
    const Tensor r = ck.random(x.shape());
    drop.forward(x, Mode::train, ck.rng);
    const Tensor gx = drop.backward(r);
    ck.run("dropout", [&] { return dot(drop.apply_mask(x), r); }, {{"x", &x, &gx}});
  }
  {
    Tensor a = ck.random({2, 3, 4}), b = ck.random({2, 3, 4});
    const Tensor ga = l2_loss(a, b).grad;
    const Tensor gb = scaled(ga, -1.0);
    ck.run("l2", [&] { return l2_loss(a, b).loss; }, {{"a", &a, &ga}, {"b", &b, &gb}});
  }
  {
    Tensor logits = ck.random({5, 4}, -2.0, 2.0);
    const std::vector<int> labels{0, 3, -1, 2, 1};
    const std::vector<bool> mask{true, true, false, true, true};
    const Tensor g = softmax_nll(logits, labels, mask).grad;
    ck.run("nll", [&] { return softmax_nll(logits, labels, mask).loss; }, {{"logits", &logits, &g}});
  }
  {
    Tensor x = ck.off_kink({2, 3, 3});
    const Tensor g = l1_penalty(x, 0.3).grad;
    ck.run("l1", [&] { return l1_penalty(x, 0.3).loss; }, {{"x", &x, &g}});
  }
  {
    Tensor x = ck.random({2, 2, 4, 4});
    const PoolOutput p = soft_pool(x, 2, 3.0);
    const Tensor rw = ck.random(p.what.shape()), rp = ck.random(p.where.shape());
    const Tensor gx = soft_pool_backward(x, p, rw, rp);
    ck.run("soft_pool", [&] {
      const PoolOutput q = soft_pool(x, 2, 3.0);
      return dot(q.what, rw) + dot(q.where, rp);
    }, {{"x", &x, &gx}});
  }
  {
    PoolOutput p = soft_pool(ck.random({2, 2, 4, 4}), 2, 3.0);
    p.what = ck.random(p.what.shape());
    p.where = ck.random(p.where.shape(), -0.9, 0.9);
    const Tensor r = ck.random({2, 2, 4, 4});
    const UnpoolGrads g = soft_unpool_backward(p, r);
    ck.run("soft_unpool", [&] { return dot(soft_unpool(p), r); },
           {{"what", &p.what, &g.grad_what}, {"where", &p.where, &g.grad_where}});
  }
  {
    Tensor x = ck.random({2, 2, 4, 4});
    const PoolOutput p = hard_pool(x, 2);
    const Tensor r = ck.random(p.what.shape());
    const Tensor gx = hard_pool_backward(p, r);
    ck.run("hard_pool", [&] { return dot(hard_pool(x, 2).what, r); }, {{"x", &x, &gx}});
  }
  {
    PoolOutput p = hard_pool(ck.random({2, 2, 4, 4}), 2);
    p.what = ck.random(p.what.shape());
    const Tensor r = ck.random({2, 2, 4, 4});
    const Tensor g = hard_unpool_backward(p, r);
    ck.run("hard_unpool", [&] { return dot(hard_unpool(p), r); }, {{"what", &p.what, &g}});
  }
  {
    Tensor w = ck.random({2, 2, 2, 2});
    const Tensor r = ck.random({2, 2, 4, 4});
    const Tensor g = upsample_backward(r, 2);
    ck.run("upsample", [&] { return dot(upsample(w, 2), r); }, {{"what", &w, &g}});
  }
  ck.model_check("swwae_hard", PoolMode::hard, false, UnpoolMode::where);
  ck.model_check("swwae_soft", PoolMode::soft, false, UnpoolMode::where);
  ck.model_check("swwae_hard_bn", PoolMode::hard, true, UnpoolMode::where);
  ck.model_check("swwae_upsample", PoolMode::hard, false, UnpoolMode::upsample);
  return ck.reports;
}

}  // namespace swwae
