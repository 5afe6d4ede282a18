#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "swwae/data.hpp"
#include "swwae/model.hpp"

namespace swwae {

struct OptimizerState {
  double lr = 0.01;
  double momentum = 0.9;
  std::vector<Tensor> velocity;  // created lazily, one per parameter
};

/// v <- mu v - lr g;  p <- p + v.
void sgd_step(OptimizerState& opt, const std::vector<Tensor*>& params,
              const std::vector<const Tensor*>& grads);
void sgd_step(OptimizerState& opt, const std::vector<ParamRef>& params);

struct BatchSchedule {
  std::size_t batch_size = 32;
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
  std::uint64_t seed = 0;
};

struct Batch {
  std::vector<std::size_t> indices;
  std::vector<bool> mask;  // true for labeled members
};

/// One pass over labeled and unlabeled samples, shuffled together.
std::vector<Batch> make_batches(const BatchSchedule& schedule, std::size_t epoch);

/// Schedule over samples [0, n) where `labeled` marks the supervised ones.
BatchSchedule make_schedule(std::size_t n, const std::vector<std::size_t>& labeled,
                            std::size_t batch_size, std::uint64_t seed);

enum class Regime { joint, unsup_sfx, unsup_pretr };
std::string to_string(Regime regime);
Regime parse_regime(const std::string& text);

struct EpochRecord {
  std::size_t epoch = 0;
  double nll = 0.0, rec = 0.0, mid = 0.0, total = 0.0;
  double val_error = 0.0;  // NaN without a validation set
};

struct TrainOptions {
  std::size_t epochs = 5;
  /// Epochs of the unsupervised phase of unsup-sfx / unsup-pretr.
  std::size_t pretrain_epochs = 5;
  std::size_t batch_size = 32;
  double lr = 0.01;
  double momentum = 0.9;
  Regime regime = Regime::joint;
  std::uint64_t seed = 0;
  /// Each batch is randomly shifted by up to this many pixels (0: off).
  int translate = 0;
  /// Called after every epoch (validation included).
  std::function<void(const EpochRecord&, SwwaeModel&)> on_epoch;
};


struct History {
  std::vector<EpochRecord> epochs;
  void write_csv(std::ostream& os) const;
  void write_csv(const std::string& path) const;
  friend bool operator==(const History& a, const History& b);
};

/// Trains `model` on `train`, where only `labeled` rows carry labels.
/// `validation` may be null or unlabeled; val_error is then NaN.
History train_run(SwwaeModel& model, const Dataset& train, const std::vector<std::size_t>& labeled,
                  const Dataset* validation, const TrainOptions& options);

/// Classification error in eval mode; ties go to the smallest class index.
double evaluate(SwwaeModel& model, const Dataset& ds, std::size_t batch_size = 250);
std::size_t argmax_row(const Tensor& logits, std::size_t row);

struct GradTarget {
  std::string name;
  Tensor* value;          // perturbed in place
  const Tensor* analytic;
};

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0.0;
  std::string worst_target;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0, worst_numeric = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  std::size_t min_coordinates = 200;
  std::uint64_t seed = 0;
};

/// Central differences of `loss` against the analytic gradients.
/// Checks every coordinate when there are at most min_coordinates,
/// otherwise a seeded sample of at least that many spread over targets.
GradCheckReport gradient_check(const std::string& name, const std::function<double()>& loss,
                               const std::vector<GradTarget>& targets,
                               const GradCheckOptions& options = {});

}  // namespace swwae
