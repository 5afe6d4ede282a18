#include "swwae/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace swwae {

void sgd_step(OptimizerState& opt, const std::vector<Tensor*>& params,
              const std::vector<const Tensor*>& grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("sgd_step: params/grads count differ");
  if (!(opt.momentum >= 0.0 && opt.momentum < 1.0)) {
    throw std::invalid_argument("sgd_step: momentum must be in [0, 1)");
  }
  if (opt.velocity.empty()) {
    for (const Tensor* p : params) opt.velocity.emplace_back(p->shape());
  }
  if (opt.velocity.size() != params.size()) {
    throw std::invalid_argument("sgd_step: velocity holds " + std::to_string(opt.velocity.size()) +
                                " buffers for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    Tensor& v = opt.velocity[i];
    if (g.shape() != p.shape() || v.shape() != p.shape()) {
      throw std::invalid_argument("sgd_step: shape mismatch at parameter " + std::to_string(i) +
                                  ": " + to_string(p.shape()) + " vs grad " + to_string(g.shape()));
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = opt.momentum * v[j] - opt.lr * g[j];
      p[j] += v[j];
    }
  }
}

void sgd_step(OptimizerState& opt, const std::vector<ParamRef>& params) {
  std::vector<Tensor*> values;
  std::vector<const Tensor*> grads;
  for (const auto& p : params) {
    if (!p.grad) continue;
    values.push_back(p.value);
    grads.push_back(p.grad);
  }
  sgd_step(opt, values, grads);
}

BatchSchedule make_schedule(std::size_t n, const std::vector<std::size_t>& labeled,
                            std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw std::invalid_argument("make_schedule: batch size must be positive");
  BatchSchedule s;
  s.batch_size = batch_size;
  s.seed = seed;
  s.labeled = labeled;
  std::sort(s.labeled.begin(), s.labeled.end());
  if (std::adjacent_find(s.labeled.begin(), s.labeled.end()) != s.labeled.end()) {
    throw std::invalid_argument("make_schedule: duplicate labeled index");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::binary_search(s.labeled.begin(), s.labeled.end(), i)) s.unlabeled.push_back(i);
  }
  if (!s.labeled.empty() && s.labeled.back() >= n) {
    throw std::invalid_argument("make_schedule: labeled index out of range");
  }
  return s;
}

std::vector<Batch> make_batches(const BatchSchedule& schedule, std::size_t epoch) {
  if (schedule.batch_size == 0) throw std::invalid_argument("make_batches: batch size must be positive");
  std::vector<std::size_t> order = schedule.labeled;
  order.insert(order.end(), schedule.unlabeled.begin(), schedule.unlabeled.end());
  if (order.empty()) throw std::invalid_argument("make_batches: empty dataset");
  std::sort(order.begin(), order.end());
  std::vector<std::size_t> labeled = schedule.labeled;
  std::sort(labeled.begin(), labeled.end());

  Rng rng = make_rng(schedule.seed, 1000 + epoch);
  shuffle(order, rng);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += schedule.batch_size) {
    Batch b;
    const std::size_t end = std::min(order.size(), start + schedule.batch_size);
    b.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
    for (std::size_t i : b.indices) b.mask.push_back(std::binary_search(labeled.begin(), labeled.end(), i));
    batches.push_back(std::move(b));
  }
  return batches;
}

std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::unsup_sfx:
      return "unsup-sfx";
    case Regime::unsup_pretr:
      return "unsup-pretr";
    case Regime::joint:
      break;
  }
  return "joint";
}

Regime parse_regime(const std::string& text) {
  if (text == "joint") return Regime::joint;
  if (text == "unsup-sfx") return Regime::unsup_sfx;
  if (text == "unsup-pretr") return Regime::unsup_pretr;
  throw std::invalid_argument("unknown regime '" + text + "'");
}

namespace {

std::string csv_number(double v) {
  if (std::isnan(v)) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool same_bits(double a, double b) {
  return std::memcmp(&a, &b, sizeof a) == 0;
}

}  // namespace

void History::write_csv(std::ostream& os) const {
  os << "epoch,l_nll,l_l2rec,l_l2m,l_total,val_error\n";
  for (const auto& e : epochs) {
    os << e.epoch << ',' << csv_number(e.nll) << ',' << csv_number(e.rec) << ','
       << csv_number(e.mid) << ',' << csv_number(e.total) << ',' << csv_number(e.val_error) << '\n';
  }
}

void History::write_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_csv(os);
}

bool operator==(const History& a, const History& b) {
  if (a.epochs.size() != b.epochs.size()) return false;
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    const auto& x = a.epochs[i];
    const auto& y = b.epochs[i];
    if (x.epoch != y.epoch || !same_bits(x.nll, y.nll) || !same_bits(x.rec, y.rec) ||
        !same_bits(x.mid, y.mid) || !same_bits(x.total, y.total) ||
        !same_bits(x.val_error, y.val_error)) {
      return false;
    }
  }
  return true;
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t k = logits.dim(1);
  const double* r = logits.data() + row * k;
  return static_cast<std::size_t>(std::max_element(r, r + k) - r);
}

double evaluate(SwwaeModel& model, const Dataset& ds, std::size_t batch_size) {
  if (!ds.has_labels()) throw std::invalid_argument("evaluate: dataset has no labels");
  if (batch_size == 0) throw std::invalid_argument("evaluate: batch size must be positive");
  std::size_t wrong = 0;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(ds.size(), start + batch_size); ++i) idx.push_back(i);
    const Tensor logits = model.predict(gather(ds.images, idx));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (static_cast<int>(argmax_row(logits, r)) != ds.labels[idx[r]]) ++wrong;
    }
  }
  return static_cast<double>(wrong) / static_cast<double>(ds.size());
}

namespace {

struct Trainer {
  SwwaeModel& model;
  const Dataset& train;
  const Dataset* validation;
  const TrainOptions& options;
  OptimizerState opt;
  Rng shift_rng;
  History history;

  /// `index_map` translates schedule indices into dataset rows.
  void run(const BatchSchedule& schedule, const std::vector<std::size_t>* index_map,
           std::size_t epochs) {
    // Validation error is only meaningful while a classifier is trained.
    const bool classifying = model.has_head() && !schedule.labeled.empty() &&
                             effective_weights(model.config()).nll > 0.0;
    for (std::size_t e = 0; e < epochs; ++e) {
      const std::size_t epoch = history.epochs.size() + 1;
      EpochRecord rec;
      rec.epoch = epoch;
      const auto batches = make_batches(schedule, epoch);
      for (const Batch& b : batches) {
        std::vector<std::size_t> rows = b.indices;
        if (index_map) {
          for (auto& r : rows) r = (*index_map)[r];
        }
        Tensor images = gather(train.images, rows);
        if (options.translate > 0) images = random_translate(images, options.translate, shift_rng);
        std::vector<int> labels(rows.size(), -1);
        if (train.has_labels()) {
          for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = train.labels[rows[i]];
        }
        ForwardTrace trace = model.forward(images, labels, b.mask, Mode::train);
        if (!std::isfinite(trace.losses.total)) {
          throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                                   " (non-finite loss)");
        }
        model.backward(trace);
        sgd_step(opt, model.trainable_parameters());
        rec.nll += trace.losses.nll;
        rec.rec += trace.losses.rec;
        rec.mid += trace.losses.mid;
        rec.total += trace.losses.total;
      }
      const auto count = static_cast<double>(batches.size());
      rec.nll /= count;
      rec.rec /= count;
      rec.mid /= count;
      rec.total /= count;
      rec.val_error = classifying && validation && validation->has_labels()
                          ? evaluate(model, *validation)
                          : std::numeric_limits<double>::quiet_NaN();
      history.epochs.push_back(rec);
      if (options.on_epoch) options.on_epoch(rec, model);
    }
  }
};

}  // namespace

History train_run(SwwaeModel& model, const Dataset& train, const std::vector<std::size_t>& labeled,
                  const Dataset* validation, const TrainOptions& options) {
  if (train.size() == 0) throw std::invalid_argument("train_run: empty training set");
  if (!labeled.empty() && !train.has_labels()) {
    throw std::invalid_argument("train_run: labeled indices given for an unlabeled dataset");
  }
  Trainer t{model, train, validation, options, {options.lr, options.momentum, {}},
            make_rng(options.seed, 50), {}};

  if (options.regime == Regime::joint) {
    t.run(make_schedule(train.size(), labeled, options.batch_size, options.seed), nullptr,
          options.epochs);
    return t.history;
  }

  if (labeled.empty()) {
    throw std::invalid_argument("train_run: regime " + to_string(options.regime) +
                                " needs a nonempty labeled set");
  }
  const Modality original = model.config().modality;
  model.config().modality = Modality::unsupervised;
  t.run(make_schedule(train.size(), {}, options.batch_size, options.seed), nullptr,
        options.pretrain_epochs);

  // Supervised phase on the labeled rows only, with fresh momentum.
  model.config().modality = Modality::supervised;
  model.freeze_encoder(options.regime == Regime::unsup_sfx);
  t.opt.velocity.clear();
  std::vector<std::size_t> all(labeled.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  std::vector<std::size_t> rows = labeled;
  std::sort(rows.begin(), rows.end());
  t.run(make_schedule(rows.size(), all, options.batch_size, options.seed + 1), &rows,
        options.epochs);
  model.freeze_encoder(false);
  model.config().modality = original;
  return t.history;
}

GradCheckReport gradient_check(const std::string& name, const std::function<double()>& loss,
                               const std::vector<GradTarget>& targets,
                               const GradCheckOptions& options) {
  GradCheckReport report;
  report.name = name;
  std::size_t total = 0;
  for (const auto& t : targets) {
    if (t.value->shape() != t.analytic->shape()) {
      throw std::invalid_argument("gradient_check: " + t.name + " gradient shape mismatch");
    }
    total += t.value->size();
  }
  Rng rng = make_rng(options.seed, 31);
  for (const auto& t : targets) {
    const std::size_t size = t.value->size();
    std::size_t take = size;
    if (total > options.min_coordinates) {
      const std::size_t share = (options.min_coordinates * size + total - 1) / total;
      take = std::min(size, std::max<std::size_t>(share, 4));
    }
    std::vector<std::size_t> idx(size);
    for (std::size_t i = 0; i < size; ++i) idx[i] = i;
    for (std::size_t i = 0; i < take; ++i) std::swap(idx[i], idx[i + uniform_index(rng, size - i)]);
    idx.resize(take);
    std::sort(idx.begin(), idx.end());

    for (std::size_t i : idx) {
      double& v = (*t.value)[i];
      const double saved = v;
      v = saved + options.epsilon;
      const double plus = loss();
      v = saved - options.epsilon;
      const double minus = loss();
      v = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw std::runtime_error("gradient_check " + name + ": non-finite loss at " + t.name +
                                 "[" + std::to_string(i) + "]");
      }
      const double numeric = (plus - minus) / (2.0 * options.epsilon);
      const double analytic = (*t.analytic)[i];
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      ++report.checked;
      if (rel > report.max_rel_error || report.checked == 1) {
        report.max_rel_error = rel;
        report.worst_target = t.name;
        report.worst_index = i;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace swwae
