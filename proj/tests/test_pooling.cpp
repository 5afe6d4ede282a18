#include <gtest/gtest.h>

#include <cmath>

#include "swwae/pooling.hpp"
#include "swwae/rng.hpp"

using namespace swwae;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng = make_rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = uniform(rng, lo, hi);
  return t;
}

}  // namespace

TEST(HardPool, MatchesBruteForceScan) {
  const Tensor x = random_tensor({2, 3, 8, 12}, 1);
  for (std::size_t s : {1, 2, 4}) {
    const PoolOutput p = hard_pool(x, s);
    ASSERT_EQ(p.what.shape(), (Shape{2, 3, 8 / s, 12 / s}));
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t r = 0; r < 8 / s; ++r)
          for (std::size_t q = 0; q < 12 / s; ++q) {
            double best = -INFINITY;
            std::size_t arg = 0;
            for (std::size_t k = 0; k < s * s; ++k) {
              const double v = x.at(n, c, r * s + k / s, q * s + k % s);
              if (v > best) best = v, arg = k;
            }
            EXPECT_EQ(p.what.at(n, c, r, q), best);
            EXPECT_EQ(p.where.at(n, c, r, q), double(arg));
          }
  }
  EXPECT_THROW(hard_pool(x, 3), std::invalid_argument);
}

TEST(HardPool, TiesGoToFirstIndex) {
  const PoolOutput p = hard_pool(Tensor({1, 1, 2, 2}, {0.0, 5.0, 5.0, 5.0}), 2);
  EXPECT_EQ(p.where[0], 1.0);
}

TEST(HardPool, BackwardRoutesToSwitch) {
  const Tensor x({1, 1, 2, 4}, {1, 2, 9, 0, 3, 4, 5, 6});
  const PoolOutput p = hard_pool(x, 2);
  const Tensor g = hard_pool_backward(p, Tensor({1, 1, 1, 2}, {10.0, 20.0}));
  EXPECT_EQ(g, Tensor({1, 1, 2, 4}, {0, 0, 20, 0, 0, 10, 0, 0}));
  EXPECT_EQ(hard_unpool(p), Tensor({1, 1, 2, 4}, {0, 0, 9, 0, 0, 4, 0, 0}));
}

TEST(HardPool, PoolOfUnpoolIsIdentity) {
  Rng rng = make_rng(2);
  std::size_t trials = 0;
  for (std::size_t s : {2, 4, 8, 16}) {
    for (int t = 0; t < 250; ++t, ++trials) {
      PoolOutput p;
      p.size = s;
      p.what = Tensor({1, 2, 2, 2});
      p.where = Tensor({1, 2, 2, 2});
      for (std::size_t i = 0; i < 8; ++i) {
        p.what[i] = uniform(rng, 0.0, 3.0);
        p.where[i] = double(uniform_index(rng, s * s));
      }
      const PoolOutput again = hard_pool(hard_unpool(p), s);
      ASSERT_EQ(again.what, p.what);
      ASSERT_EQ(again.where, p.where);
    }
  }
  EXPECT_EQ(trials, 1000u);
}

TEST(SoftPool, DirectFormula) {
  const std::size_t s = 3;
  const double beta = 1.7;
  const Tensor x = random_tensor({1, 1, 3, 3}, 3);
  const PoolOutput p = soft_pool(x, s, beta);
  double z = 0.0, m = 0.0, px = 0.0, py = 0.0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      const double e = std::exp(beta * x.at(0, 0, i, j));
      z += e;
      m += e * x.at(0, 0, i, j);
      px += e * (-1.0 + double(j));
      py += e * (-1.0 + double(i));
    }
  EXPECT_NEAR(p.what[0], m / z, 1e-14);
  EXPECT_NEAR(p.where.at(0, 0, 0, 0), px / z, 1e-14);
  EXPECT_NEAR(p.where.at(0, 1, 0, 0), py / z, 1e-14);
}

TEST(SoftPool, BetaLimits) {
  Rng rng = make_rng(4);
  for (int t = 0; t < 100; ++t) {
    Tensor x({1, 1, 4, 4});
    for (double& v : x.values()) v = uniform(rng, 0.0, 1.0);
    // Make the maximum unique by a clear margin.
    const std::size_t top = uniform_index(rng, 16);
    x[top] = 1.5;
    const PoolOutput hard = hard_pool(x, 4);
    const PoolOutput sharp = soft_pool(x, 4, 1e4);
    const std::size_t k = std::size_t(hard.where[0]);
    EXPECT_NEAR(sharp.what[0], hard.what[0], 1e-3);
    EXPECT_NEAR(sharp.where[0], cell_coordinate(k % 4, 4), 1e-3);
    EXPECT_NEAR(sharp.where[1], cell_coordinate(k / 4, 4), 1e-3);

    const PoolOutput flat = soft_pool(x, 4, 0.0);
    double mean = 0.0;
    for (double v : x.values()) mean += v;
    EXPECT_NEAR(flat.what[0], mean / 16.0, 1e-12);
    EXPECT_NEAR(flat.where[0], 0.0, 1e-12);
    EXPECT_NEAR(flat.where[1], 0.0, 1e-12);
  }
}

TEST(SoftUnpool, BilinearPlacement) {
  PoolOutput p;
  p.mode = PoolMode::soft;
  p.size = 2;
  p.what = Tensor({1, 1, 1, 1}, {4.0});
  p.where = Tensor({1, 2, 1, 1}, {1.0, -1.0});  // top-right corner
  EXPECT_EQ(soft_unpool(p), Tensor({1, 1, 2, 2}, {0, 4, 0, 0}));
  p.where = Tensor({1, 2, 1, 1}, {0.0, 0.0});  // centre
  EXPECT_EQ(soft_unpool(p), Tensor({1, 1, 2, 2}, 1.0));
}

TEST(SoftUnpool, ConservesMass) {
  const Tensor x = random_tensor({2, 3, 8, 8}, 5, 0.0, 1.0);
  const PoolOutput p = soft_pool(x, 4, 2.0);
  EXPECT_NEAR(sum(soft_unpool(p)), sum(p.what), 1e-12);
}

TEST(Upsample, BlockCopiesAndBackwardSums) {
  const Tensor what({1, 1, 1, 2}, {1.0, 2.0});
  EXPECT_EQ(upsample(what, 2), Tensor({1, 1, 2, 4}, {1, 1, 2, 2, 1, 1, 2, 2}));
  const Tensor g = upsample_backward(Tensor({1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8}), 2);
  EXPECT_EQ(g, Tensor({1, 1, 1, 2}, {14.0, 22.0}));
}

TEST(CellCoordinate, Endpoints) {
  EXPECT_EQ(cell_coordinate(0, 1), 0.0);
  EXPECT_EQ(cell_coordinate(0, 4), -1.0);
  EXPECT_EQ(cell_coordinate(3, 4), 1.0);
  EXPECT_NEAR(cell_coordinate(1, 4), -1.0 / 3.0, 1e-15);
}
