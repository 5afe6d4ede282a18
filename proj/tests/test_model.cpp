#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "swwae/checkpoint.hpp"
#include "swwae/data.hpp"
#include "swwae/model.hpp"

using namespace swwae;

namespace {

const char* kArch = "(4)3c-2p-(4)3c-2p-10fc";

SwwaeConfig semi(double nll, double rec, double mid) {
  SwwaeConfig c;
  c.lambda_nll = nll;
  c.lambda_rec = rec;
  c.lambda_mid = mid;
  return c;
}

struct Fixture {
  Dataset data = synthetic_digits(6, 8, 10, 3);
  std::vector<bool> mask{true, false, true, true, false, true};
};

SwwaeModel make(const SwwaeConfig& c, std::uint64_t seed = 5) {
  return SwwaeModel(parse_architecture(kArch), {1, 8, 8}, c, seed);
}

double norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

}  // namespace

TEST(Modality, EffectiveWeights) {
  SwwaeConfig c = semi(1.0, 0.4, 0.2);
  auto w = effective_weights(c);
  EXPECT_EQ((std::tuple{w.nll, w.rec, w.mid}), (std::tuple{1.0, 0.4, 0.2}));
  w = effective_weights(set_modality(c, Modality::supervised));
  EXPECT_EQ((std::tuple{w.nll, w.rec, w.mid}), (std::tuple{1.0, 0.0, 0.0}));
  w = effective_weights(set_modality(c, Modality::unsupervised));
  EXPECT_EQ((std::tuple{w.nll, w.rec, w.mid}), (std::tuple{0.0, 0.4, 0.2}));
  EXPECT_EQ(set_modality(c, Modality::unsupervised).lambda_nll, 1.0);
  EXPECT_EQ(parse_modality(to_string(Modality::semi)), Modality::semi);
  EXPECT_THROW(parse_modality("both"), std::invalid_argument);
  SwwaeConfig bad = c;
  bad.lambda_rec = -1.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Model, TotalIsWeightedSum) {
  Fixture f;
  SwwaeConfig c = semi(0.7, 0.4, 0.3);
  c.l1_weight = 1e-3;
  SwwaeModel m = make(c);
  const ForwardTrace t = m.forward(f.data.images, f.data.labels, f.mask, Mode::train);
  const auto& l = t.losses;
  EXPECT_GT(l.rec, 0.0);
  EXPECT_GT(l.mid, 0.0);
  EXPECT_GT(l.l1, 0.0);
  EXPECT_NEAR(l.total, 0.7 * l.nll + 0.4 * l.rec + 0.3 * l.mid + l.l1, 1e-12);
  EXPECT_EQ(t.reconstruction.shape(), f.data.images.shape());
}

TEST(Model, UntrainedNllNearChance) {
  Fixture f;
  SwwaeModel m = make(semi(1, 0, 0));
  const ForwardTrace t = m.forward(f.data.images, f.data.labels, f.mask, Mode::eval);
  EXPECT_NEAR(t.losses.nll, std::log(10.0), 0.2);
  EXPECT_FALSE(t.decoder_ran);
}

TEST(Model, ZeroLambdasMatchDecoderFreeNet) {
  Fixture f;
  SwwaeModel with = make(semi(1, 0, 0));
  SwwaeConfig plain = semi(1, 0, 0);
  plain.build_decoder = false;
  SwwaeModel without = make(plain);
  ASSERT_FALSE(without.has_decoder());
  ForwardTrace a = with.forward(f.data.images, f.data.labels, f.mask, Mode::train);
  ForwardTrace b = without.forward(f.data.images, f.data.labels, f.mask, Mode::train);
  EXPECT_EQ(a.losses.total, b.losses.total);
  with.backward(a);
  without.backward(b);
  const auto pa = with.parameters(), pb = without.parameters();
  ASSERT_LT(pb.size(), pa.size());
  for (std::size_t i = 0; i < pb.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_EQ(*pa[i].value, *pb[i].value);
    if (pa[i].grad) {
      EXPECT_EQ(*pa[i].grad, *pb[i].grad) << pa[i].name;
    }
  }
}

TEST(Model, GradientsScaleWithLambdas) {
  Fixture f;
  SwwaeModel one = make(semi(0, 0.5, 0.25)), two = make(semi(0, 1.0, 0.5));
  ForwardTrace a = one.forward(f.data.images, f.data.labels, f.mask, Mode::eval);
  ForwardTrace b = two.forward(f.data.images, f.data.labels, f.mask, Mode::eval);
  one.backward(a);
  two.backward(b);
  EXPECT_NEAR(b.losses.total, 2.0 * a.losses.total, 1e-14);
  const auto pa = one.parameters(), pb = two.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!pa[i].grad) continue;
    for (std::size_t j = 0; j < pa[i].grad->size(); ++j)
      EXPECT_NEAR((*pb[i].grad)[j], 2.0 * (*pa[i].grad)[j], 1e-12) << pa[i].name;
  }
}

TEST(Model, IntermediateLossReachesTopDecoder) {
  Rng rng = make_rng(1);
  Tensor x({4, 1, 8, 8});
  for (double& v : x.values()) v = uniform01(rng);
  SwwaeModel m = make(semi(0, 0, 1.0));
  ForwardTrace t = m.forward(x, {}, {}, Mode::train);
  m.backward(t);
  double top = 0.0;
  for (const auto& p : m.parameters())
    if (p.name.rfind("dec1.", 0) == 0 && p.grad) top += norm(*p.grad);
  EXPECT_GT(top, 0.0);
}

TEST(Model, SupervisedSkipsDecoderAndUnsupervisedNeedsNoLabels) {
  Fixture f;
  SwwaeModel m = make(set_modality(semi(1, 1, 1), Modality::supervised));
  EXPECT_FALSE(m.forward(f.data.images, f.data.labels, f.mask, Mode::train).decoder_ran);
  SwwaeModel u = make(set_modality(semi(1, 1, 1), Modality::unsupervised));
  const ForwardTrace t = u.forward(f.data.images, {}, {}, Mode::train);
  EXPECT_TRUE(t.decoder_ran);
  EXPECT_EQ(t.losses.nll, 0.0);
}

TEST(Model, ReconstructIsDeterministic) {
  Fixture f;
  SwwaeModel m = make(semi(1, 1, 1));
  EXPECT_EQ(m.reconstruct(f.data.images), m.reconstruct(f.data.images));
  SwwaeModel n = make(semi(1, 1, 1));
  EXPECT_EQ(m.reconstruct(f.data.images), n.reconstruct(f.data.images));
}

TEST(Model, UpsampleDecoderIgnoresWhere) {
  Fixture f;
  SwwaeConfig c = semi(0, 1, 0);
  c.unpool_mode = UnpoolMode::upsample;
  SwwaeModel m = make(c);
  const ForwardTrace t = m.forward(f.data.images, {}, {}, Mode::eval);
  ASSERT_FALSE(t.unpooled.empty());
  for (const Tensor& u : t.unpooled) {
    for (std::size_t n = 0; n < u.dim(0); ++n)
      for (std::size_t ch = 0; ch < u.dim(1); ++ch)
        for (std::size_t y = 0; y < u.dim(2); ++y)
          for (std::size_t x = 0; x < u.dim(3); ++x)
            EXPECT_EQ(u.at(n, ch, y, x), u.at(n, ch, y & ~std::size_t(1), x & ~std::size_t(1)));
  }
}

TEST(Model, RejectsBadInput) {
  SwwaeModel m = make(semi(1, 0, 0));
  EXPECT_THROW(m.predict(Tensor({2, 1, 6, 6})), std::invalid_argument);
  EXPECT_THROW(m.forward(Tensor({2, 1, 8, 8}), {}, {true, true}, Mode::eval),
               std::invalid_argument);
  EXPECT_THROW(SwwaeModel(parse_architecture(kArch), {1, 6, 6}, semi(1, 0, 0), 1),
               std::invalid_argument);
}

TEST(Model, FrozenEncoderGetsNoGradient) {
  Fixture f;
  SwwaeModel m = make(semi(1, 1, 1));
  m.freeze_encoder(true);
  for (const auto& p : m.trainable_parameters()) EXPECT_NE(p.name.rfind("enc", 0), 0u);
  ForwardTrace t = m.forward(f.data.images, f.data.labels, f.mask, Mode::train);
  m.backward(t);
  for (const auto& p : m.parameters())
    if (p.name.rfind("enc", 0) == 0 && p.grad) {
      EXPECT_EQ(norm(*p.grad), 0.0);
    }
}

TEST(Checkpoint, RoundTrip) {
  Fixture f;
  SwwaeConfig c = semi(1, 0.4, 0.4);
  c.pool_mode = PoolMode::soft;
  c.beta = 3.0;
  c.batchnorm = true;
  SwwaeModel m = make(c, 11);
  m.forward(f.data.images, f.data.labels, f.mask, Mode::train);  // moves running stats
  const auto path = (std::filesystem::temp_directory_path() / "swwae_ckpt_test.bin").string();
  save_checkpoint(m, path);
  SwwaeModel back = load_checkpoint(path);
  EXPECT_EQ(format_architecture(back.arch()), kArch);
  EXPECT_EQ(config_text(back), config_text(m));
  EXPECT_EQ(back.predict(f.data.images), m.predict(f.data.images));
  EXPECT_EQ(back.reconstruct(f.data.images), m.reconstruct(f.data.images));
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
}
