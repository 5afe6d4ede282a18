#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "swwae/data.hpp"
#include "swwae/train.hpp"

using namespace swwae;

namespace {

SwwaeModel tiny_model(double rec, double mid, bool decoder = true, std::uint64_t seed = 3) {
  SwwaeConfig c;
  c.lambda_rec = rec;
  c.lambda_mid = mid;
  c.build_decoder = decoder;
  return SwwaeModel(parse_architecture("(4)3c-2p-(4)3c-2p-10fc"), {1, 8, 8}, c, seed);
}

}  // namespace

TEST(Sgd, MomentumRecurrence) {
  Tensor p({1}, {1.0}), g({1}, {0.5});
  OptimizerState opt{0.1, 0.9, {}};
  sgd_step(opt, {&p}, {&g});
  EXPECT_NEAR(p[0], 0.95, 1e-15);
  sgd_step(opt, {&p}, {&g});
  EXPECT_NEAR(p[0], 0.855, 1e-15);
  EXPECT_NEAR(opt.velocity[0][0], -0.095, 1e-15);

  Tensor q({2}, {1.0, -1.0}), h({2}, {1.0, 2.0});
  OptimizerState plain{0.5, 0.0, {}};
  sgd_step(plain, {&q}, {&h});
  EXPECT_EQ(q, Tensor({2}, {0.5, -2.0}));
}

TEST(Batches, EveryIndexOnceWithMask) {
  std::vector<std::size_t> labeled;
  for (std::size_t i = 0; i < 1000; i += 10) labeled.push_back(i);
  const BatchSchedule s = make_schedule(1000, labeled, 50, 4);
  const auto batches = make_batches(s, 0);
  ASSERT_EQ(batches.size(), 20u);
  std::set<std::size_t> seen;
  std::size_t masked = 0;
  for (const Batch& b : batches) {
    EXPECT_EQ(b.indices.size(), 50u);
    for (std::size_t k = 0; k < b.indices.size(); ++k) {
      EXPECT_TRUE(seen.insert(b.indices[k]).second);
      EXPECT_EQ(b.mask[k], b.indices[k] % 10 == 0);
      masked += b.mask[k];
    }
  }
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(masked, 100u);
  EXPECT_EQ(make_batches(s, 0)[0].indices, batches[0].indices);
  EXPECT_NE(make_batches(s, 1)[0].indices, batches[0].indices);
  EXPECT_EQ(make_batches(make_schedule(10, {}, 4, 0), 0).back().indices.size(), 2u);
}

TEST(Batches, ScheduleValidation) {
  EXPECT_THROW(make_schedule(10, {1, 1}, 4, 0), std::invalid_argument);
  EXPECT_THROW(make_schedule(10, {10}, 4, 0), std::invalid_argument);
  EXPECT_THROW(make_schedule(10, {}, 0, 0), std::invalid_argument);
}

TEST(Evaluate, MatchesManualArgmax) {
  const Dataset ds = synthetic_digits(40, 8, 10, 9);
  SwwaeModel m = tiny_model(0, 0);
  const Tensor logits = m.predict(ds.images);
  std::size_t wrong = 0;
  for (std::size_t n = 0; n < ds.size(); ++n) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 10; ++k)
      if (logits[n * 10 + k] > logits[n * 10 + best]) best = k;
    wrong += int(best) != ds.labels[n];
  }
  EXPECT_DOUBLE_EQ(evaluate(m, ds, 7), double(wrong) / 40.0);
  EXPECT_EQ(argmax_row(Tensor({1, 3}, {2.0, 2.0, 1.0}), 0), 0u);
}

TEST(GradientCheck, LinearPassesAndPlantedFaultFails) {
  Tensor x({300});
  Tensor a({300});
  for (std::size_t i = 0; i < 300; ++i) {
    x[i] = 0.01 * double(i);
    a[i] = 1.0 + 0.1 * double(i % 7);
  }
  auto loss = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < 300; ++i) s += a[i] * x[i] + 0.5 * x[i] * x[i];
    return s;
  };
  Tensor grad({300});
  for (std::size_t i = 0; i < 300; ++i) grad[i] = a[i] + x[i];
  const auto ok = gradient_check("linear", loss, {{"x", &x, &grad}});
  EXPECT_TRUE(ok.passed);
  EXPECT_LT(ok.max_rel_error, 1e-7);
  EXPECT_GE(ok.checked, 200u);

  Tensor bad = grad;
  for (double& v : bad.values()) v *= 1.01;
  const auto fault = gradient_check("linear", loss, {{"x", &x, &bad}});
  EXPECT_FALSE(fault.passed);
  EXPECT_NEAR(fault.max_rel_error, 0.01 / 1.01, 1e-6);
  EXPECT_EQ(fault.worst_target, "x");
}

TEST(TrainRun, DeterministicAndCsv) {
  const Dataset ds = synthetic_digits(60, 8, 10, 1);
  const auto labeled = sample_labeled_subset(ds, 20, 2).indices;
  TrainOptions o;
  o.epochs = 2;
  o.batch_size = 16;
  o.seed = 5;
  SwwaeModel a = tiny_model(0.5, 0.5), b = tiny_model(0.5, 0.5);
  const History ha = train_run(a, ds, labeled, &ds, o);
  const History hb = train_run(b, ds, labeled, &ds, o);
  ASSERT_EQ(ha.epochs.size(), 2u);
  EXPECT_TRUE(ha == hb);
  std::ostringstream sa, sb;
  ha.write_csv(sa);
  hb.write_csv(sb);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_EQ(sa.str().substr(0, sa.str().find('\n')), "epoch,l_nll,l_l2rec,l_l2m,l_total,val_error");
}

TEST(TrainRun, ZeroLambdaHistoryEqualsDecoderFree) {
  const Dataset ds = synthetic_digits(60, 8, 10, 1);
  const auto labeled = sample_labeled_subset(ds, 30, 2).indices;
  TrainOptions o;
  o.epochs = 3;
  o.batch_size = 16;
  o.seed = 8;
  SwwaeModel with = tiny_model(0, 0, true), without = tiny_model(0, 0, false);
  EXPECT_TRUE(train_run(with, ds, labeled, &ds, o) == train_run(without, ds, labeled, &ds, o));
}

TEST(TrainRun, SfxFreezesEncoderAfterPretraining) {
  const Dataset ds = synthetic_digits(40, 8, 10, 1);
  const auto labeled = sample_labeled_subset(ds, 20, 2).indices;
  TrainOptions o;
  o.epochs = 2;
  o.pretrain_epochs = 1;
  o.batch_size = 8;
  o.regime = Regime::unsup_sfx;
  std::vector<Tensor> after_pretrain;
  o.on_epoch = [&](const EpochRecord& r, SwwaeModel& m) {
    if (r.epoch != 1) return;
    for (const auto& p : m.parameters())
      if (p.name.rfind("enc", 0) == 0) after_pretrain.push_back(*p.value);
  };
  SwwaeModel m = tiny_model(1, 1);
  std::vector<Tensor> initial;
  for (const auto& p : m.parameters())
    if (p.name.rfind("enc", 0) == 0) initial.push_back(*p.value);
  const History h = train_run(m, ds, labeled, &ds, o);
  ASSERT_EQ(h.epochs.size(), 3u);
  EXPECT_EQ(h.epochs[0].nll, 0.0);
  EXPECT_GT(h.epochs[0].rec, 0.0);
  std::size_t k = 0;
  for (const auto& p : m.parameters()) {
    if (p.name.rfind("enc", 0) != 0) continue;
    EXPECT_EQ(*p.value, after_pretrain[k]) << p.name;
    if (p.grad) {
      EXPECT_NE(*p.value, initial[k]) << p.name;
    }
    ++k;
  }
  EXPECT_FALSE(m.encoder_frozen());
  EXPECT_EQ(parse_regime("unsup-sfx"), Regime::unsup_sfx);
}

TEST(TrainRun, ValidationNaWithoutClassifier) {
  const Dataset ds = synthetic_digits(20, 8, 10, 1);
  TrainOptions o;
  o.epochs = 1;
  o.batch_size = 10;
  SwwaeModel m = tiny_model(1, 0);
  m.config().modality = Modality::unsupervised;
  const History h = train_run(m, ds, {}, &ds, o);
  EXPECT_TRUE(std::isnan(h.epochs[0].val_error));
  std::ostringstream os;
  h.write_csv(os);
  EXPECT_NE(os.str().find(",NA\n"), std::string::npos);
}
