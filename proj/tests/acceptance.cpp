// Runs the acceptance criteria and prints one PASS/FAIL line per criterion.
//
//   acceptance [--out DIR] [--only 1,2,7]

#include <malloc.h>

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "arch_strings.hpp"
#include "swwae/data.hpp"
#include "swwae/experiments.hpp"

using namespace swwae;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

RunConfig config_for(const std::string& command, const fs::path& out) {
  RunConfig cfg;
  cfg.command = command;
  cfg.out = out.string();
  return cfg;
}

Outcome gradient_fidelity(const fs::path& out) {
  const auto t0 = std::chrono::steady_clock::now();
  std::ostringstream log;
  const auto reports = cmd_gradcheck(config_for("gradcheck", out), log);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string failed;
  for (const auto& r : reports) {
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed) failed += " " + r.name;
  }
  const bool pass = failed.empty() && reports.size() == 17 && secs < 120.0;
  return {pass, fmt("%zu checks, worst rel err %.2e, %.1fs%s", reports.size(), worst, secs,
                    failed.empty() ? "" : (" failed:" + failed).c_str())};
}

Outcome soft_pool_limits() {
  Rng rng = make_rng(2024);
  double sharp_err = 0.0, flat_what = 0.0, flat_where = 0.0;
  for (int t = 0; t < 100; ++t) {
    Tensor x({1, 1, 4, 4});
    for (double& v : x.values()) v = uniform(rng, -1.0, 1.0);
    x[uniform_index(rng, 16)] = 1.5;  // unique maximum
    const PoolOutput hard = hard_pool(x, 4);
    const auto k = static_cast<std::size_t>(hard.where[0]);
    const PoolOutput sharp = soft_pool(x, 4, 1e4);
    sharp_err = std::max({sharp_err, std::abs(sharp.what[0] - hard.what[0]),
                          std::abs(sharp.where[0] - cell_coordinate(k % 4, 4)),
                          std::abs(sharp.where[1] - cell_coordinate(k / 4, 4))});
    const PoolOutput flat = soft_pool(x, 4, 0.0);
    flat_what = std::max(flat_what, std::abs(flat.what[0] - sum(x) / 16.0));
    flat_where = std::max({flat_where, std::abs(flat.where[0]), std::abs(flat.where[1])});
  }
  const bool pass = sharp_err <= 1e-3 && flat_what <= 1e-12 && flat_where <= 1e-12;
  return {pass, fmt("beta=1e4 max dev %.2e; beta=0 what dev %.2e, where dev %.2e", sharp_err,
                    flat_what, flat_where)};
}

Outcome idempotence() {
  Rng rng = make_rng(77);
  std::size_t trials = 0, mismatches = 0;
  for (std::size_t s : {2, 4, 8, 16}) {
    for (int t = 0; t < 250; ++t, ++trials) {
      PoolOutput p;
      p.size = s;
      p.what = Tensor({2, 3, 2, 2});
      p.where = Tensor({2, 3, 2, 2});
      for (std::size_t i = 0; i < p.what.size(); ++i) {
        p.what[i] = uniform(rng, 0.0, 2.0);
        p.where[i] = static_cast<double>(uniform_index(rng, s * s));
      }
      const PoolOutput again = hard_pool(hard_unpool(p), s);
      if (!(again.what == p.what) || !(again.where == p.where)) ++mismatches;
    }
  }
  return {mismatches == 0, fmt("%zu/%zu round trips bitwise equal", trials - mismatches, trials)};
}

Outcome modality_collapse() {
  RunConfig cfg = config_for("train", "");
  cfg.train_limit = 1000;
  cfg.test_limit = 200;
  const DataSplit split = load_data(cfg, 0, 0, 8);
  const auto labeled = sample_labeled_subset(split.train, 100, 3).indices;
  TrainOptions o;
  o.epochs = 3;
  o.lr = default_lr("train");
  o.seed = 3;
  History h[2];
  for (int k = 0; k < 2; ++k) {
    SwwaeConfig mc;
    mc.lambda_rec = 0.0;
    mc.lambda_mid = 0.0;
    mc.build_decoder = k == 0;
    SwwaeModel model(parse_architecture("(16)5c-2p-(16)3c-2p-(16)3c-2p-10fc"), {1, 32, 32}, mc, 3);
    h[k] = train_run(model, split.train, labeled, &split.test, o);
  }
  return {h[0] == h[1], fmt("%zu epochs, final val error %.4f vs %.4f", h[0].epochs.size(),
                            h[0].epochs.back().val_error, h[1].epochs.back().val_error)};
}

Outcome unpool_vs_upsample(const fs::path& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = cmd_unpool_vs_upsample(config_for("unpool-vs-upsample", out));
  const double secs = seconds_since(t0);
  bool pass = rows.size() == 4 && secs < 900.0;
  std::string detail;
  for (const auto& r : rows) {
    pass = pass && r.mse_unpool < 0.9 * r.mse_upsample;
    detail += fmt("s=%zu ratio %.3f; ", r.pool_size, r.mse_unpool / r.mse_upsample);
  }
  return {pass, detail + fmt("%.0fs", secs)};
}

Outcome capsule(const fs::path& out) {
  const CapsuleStats s = cmd_capsule(config_for("capsule", out));
  const bool pass = s.corr_x_horizontal > 0.8 && s.corr_y_vertical > 0.8 &&
                    std::abs(s.corr_y_horizontal) < 0.3 && std::abs(s.corr_x_vertical) < 0.3 &&
                    s.what_relative_change < 0.2;
  return {pass, fmt("corr x|h %.3f, y|v %.3f, y|h %.3f, x|v %.3f, what change %.3f "
                    "(%zu of %zu rows active)",
                    s.corr_x_horizontal, s.corr_y_vertical, s.corr_y_horizontal,
                    s.corr_x_vertical, s.what_relative_change, s.active_rows, s.rows)};
}

Outcome semi_supervised_gain(const fs::path& out) {
  RunConfig cfg = config_for("lambda-sweep", out);
  cfg.labels = {100};
  cfg.epochs = 15;
  cfg.rounds = 3;
  cfg.lambda_grid = {0.0, 0.2, 0.4, 0.8};
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = cmd_lambda_sweep(cfg);
  const double secs = seconds_since(t0);
  double baseline = NAN, best = INFINITY, best_lambda = NAN;
  std::string detail;
  for (const auto& r : rows) {
    detail += fmt("l=%.1f %.2f%%; ", r.lambda, 100.0 * r.mean_err);
    if (r.lambda == 0.0) baseline = r.mean_err;
    else if (r.mean_err < best) best = r.mean_err, best_lambda = r.lambda;
  }
  const double gain = 100.0 * (baseline - best);
  return {gain >= 1.0 && secs < 1800.0,
          detail + fmt("gain %.2fpp at l=%.1f, %.0fs", gain, best_lambda, secs)};
}

Outcome regularizer_ordering(const fs::path& out) {
  RunConfig cfg = config_for("regularizer-compare", out);
  cfg.labels = {100};
  cfg.epochs = 15;
  cfg.rounds = 3;
  cfg.modes = {"swwae", "unsup-sfx"};
  const auto rows = cmd_regularizer_compare(cfg);
  double swwae = NAN, sfx = NAN;
  for (const auto& r : rows) (r.mode == "swwae" ? swwae : sfx) = r.mean_err;
  return {swwae <= sfx, fmt("swwae %.2f%% vs unsup-sfx %.2f%%", 100.0 * swwae, 100.0 * sfx)};
}

Outcome parser() {
  std::size_t ok = 0;
  std::string failed;
  for (const ArchCase& c : kArchCases) {
    const ArchSpec spec = parse_architecture(c.text, c.channels);
    const ShapeTrace trace = propagate_shapes(spec, c.size, c.size);
    if (format_architecture(spec) == c.text &&
        trace.reconstruction == SpatialShape{c.channels, c.size, c.size}) {
      ++ok;
    } else {
      failed += std::string(" ") + c.text;
    }
  }
  const std::size_t total = std::size(kArchCases);
  return {ok == total, fmt("%zu/%zu round trip with matching decoder shape%s", ok, total,
                           failed.c_str())};
}

Outcome chance_level() {
  RunConfig cfg = config_for("train", "");
  const DataSplit split = load_data(cfg, 0, 0, 8);  // 100 per class
  SwwaeConfig mc;
  SwwaeModel model(parse_architecture("(16)5c-2p-(16)3c-2p-(16)3c-2p-10fc"), {1, 32, 32}, mc, 1);
  const double error = evaluate(model, split.test);
  const std::size_t n = 7;
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i);
  const double nll = softmax_nll(Tensor({n, 10}, 0.25), labels, std::vector<bool>(n, true)).loss;
  const double nll_dev = std::abs(nll - std::log(10.0));
  return {std::abs(error - 0.9) <= 0.05 && nll_dev <= 1e-9,
          fmt("untrained error %.3f, uniform NLL dev %.1e", error, nll_dev)};
}

/// Every file under `dir` (relative path -> contents) with a .csv extension.
std::map<std::string, std::string> csv_files(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.path().extension() != ".csv") continue;
    std::ifstream is(e.path(), std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    files[fs::relative(e.path(), dir).string()] = os.str();
  }
  return files;
}

Outcome determinism(const fs::path& out) {
  auto tiny = [](const std::string& command, const fs::path& dir) {
    RunConfig cfg = config_for(command, dir);
    cfg.epochs = 1;
    cfg.train_limit = 100;
    cfg.test_limit = 50;
    cfg.labels = {20};
    cfg.rounds = 2;
    cfg.lambda_grid = {0.0, 0.4};
    return cfg;
  };
  const std::vector<std::pair<std::string, std::function<void(const RunConfig&)>>> commands = {
      {"train", [](const RunConfig& c) { cmd_train(c); }},
      {"unpool-vs-upsample", [](const RunConfig& c) { cmd_unpool_vs_upsample(c); }},
      {"capsule", [](const RunConfig& c) { cmd_capsule(c); }},
      {"lambda-sweep", [](const RunConfig& c) { cmd_lambda_sweep(c); }},
      {"regularizer-compare", [](const RunConfig& c) { cmd_regularizer_compare(c); }},
  };
  std::size_t files = 0;
  std::string differing;
  for (const auto& [name, run] : commands) {
    const fs::path a = out / (name + "_a"), b = out / (name + "_b");
    fs::remove_all(a);
    fs::remove_all(b);
    run(tiny(name, a));
    run(tiny(name, b));
    const auto fa = csv_files(a), fb = csv_files(b);
    files += fa.size();
    if (fa != fb || fa.empty()) differing += " " + name;
  }
  return {differing.empty(),
          fmt("%zu CSV files across %zu commands%s", files, commands.size(),
              differing.empty() ? " byte-identical" : (" differ:" + differing).c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"acceptance checks"};
  std::string out = "acceptance_out";
  std::vector<int> only;
  app.add_option("--out", out, "Directory for experiment outputs");
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const fs::path root(out);
  fs::create_directories(root);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient fidelity", [&] { return gradient_fidelity(root / "c1_gradcheck"); }},
      {"soft-pool limits", soft_pool_limits},
      {"unpool idempotence", idempotence},
      {"modality collapse", modality_collapse},
      {"unpool vs upsample", [&] { return unpool_vs_upsample(root / "c5_unpool"); }},
      {"capsule equivariance", [&] { return capsule(root / "c6_capsule"); }},
      {"semi-supervised gain", [&] { return semi_supervised_gain(root / "c7_sweep"); }},
      {"regularizer ordering", [&] { return regularizer_ordering(root / "c8_compare"); }},
      {"parser round trip", parser},
      {"chance level", chance_level},
      {"determinism", [&] { return determinism(root / "c11_determinism"); }},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = {false, std::string("error: ") + e.what()};
    }
    failures += !r.pass;
    std::cout << "criterion " << id << " (" << criteria[i].first << "): "
              << (r.pass ? "PASS" : "FAIL") << " - " << r.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
