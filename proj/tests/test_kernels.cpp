#include <gtest/gtest.h>
#include <omp.h>

#include "swwae/kernels.hpp"
#include "swwae/nn.hpp"
#include "swwae/reference.hpp"
#include "swwae/rng.hpp"

using namespace swwae;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = uniform(rng, -1.0, 1.0);
  return t;
}

double max_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

struct ConvCase {
  std::size_t n, in, out, size, kernel;
};

}  // namespace

TEST(Gemm, AllTransposeCombinations) {
  const std::size_t m = 13, n = 37, k = 19;
  const Tensor a = random_tensor({m, k}, 1), b = random_tensor({k, n}, 2);
  const Tensor expect = reference::matmul(a, b);
  const Tensor at = random_tensor({k, m}, 0), bt = random_tensor({n, k}, 0);
  Tensor a_t({k, m}), b_t({n, k});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) a_t[p * m + i] = a[i * k + p];
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) b_t[j * k + p] = b[p * n + j];
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      Tensor c({m, n});
      kernels::gemm(m, n, k, ta ? a_t.data() : a.data(), ta, tb ? b_t.data() : b.data(), tb,
                    c.data(), false);
      EXPECT_LT(max_diff(c, expect), 1e-12) << ta << tb;
    }
  }
  Tensor acc({m, n}, 1.0);
  kernels::gemm(m, n, k, a.data(), false, b.data(), false, acc.data(), true);
  EXPECT_LT(max_diff(acc, add(expect, Tensor({m, n}, 1.0))), 1e-12);
}

class ConvAgainstReference : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvAgainstReference, ForwardAndBackward) {
  const ConvCase c = GetParam();
  const std::size_t pad = c.kernel / 2;
  const Tensor x = random_tensor({c.n, c.in, c.size, c.size}, 3);
  const Tensor w = random_tensor({c.out, c.in, c.kernel, c.kernel}, 4);
  const Tensor b = random_tensor({c.out}, 5);
  Conv2d conv(c.in, c.out, c.kernel, pad);
  conv.weights = w;
  conv.bias = b;
  const Tensor y = conv.forward(x);
  EXPECT_LT(max_diff(y, reference::conv2d(x, w, b, pad)), 1e-12);

  const Tensor gy = random_tensor(y.shape(), 6);
  conv.zero_grad();
  const Tensor gx = conv.backward(x, gy, true);
  const auto ref = reference::conv2d_backward(x, w, pad, gy);
  EXPECT_LT(max_diff(gx, ref.grad_x), 1e-12);
  EXPECT_LT(max_diff(conv.grad_weights, ref.grad_weights), 1e-11);
  EXPECT_LT(max_diff(conv.grad_bias, ref.grad_bias), 1e-11);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvAgainstReference,
                         ::testing::Values(ConvCase{2, 1, 16, 8, 5},   // GEMM, transposed weight grad
                                           ConvCase{3, 3, 5, 7, 3},    // GEMM with column tail
                                           ConvCase{2, 16, 1, 9, 5},   // direct path
                                           ConvCase{1, 4, 3, 6, 1},    // direct path, 1x1
                                           ConvCase{2, 8, 32, 4, 3}));

TEST(Conv, SevenLoopOracle) {
  // Written out here so the library reference is itself checked.
  const Tensor x = random_tensor({1, 2, 4, 4}, 7);
  const Tensor w = random_tensor({3, 2, 3, 3}, 8);
  const Tensor b = random_tensor({3}, 9);
  Conv2d conv(2, 3, 3, 1);
  conv.weights = w;
  conv.bias = b;
  const Tensor y = conv.forward(x);
  for (std::size_t o = 0; o < 3; ++o) {
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        double s = b[o];
        for (std::size_t i = 0; i < 2; ++i)
          for (int ki = 0; ki < 3; ++ki)
            for (int kj = 0; kj < 3; ++kj) {
              const int yy = r + ki - 1, xx = c + kj - 1;
              if (yy >= 0 && yy < 4 && xx >= 0 && xx < 4)
                s += w[((o * 2 + i) * 3 + ki) * 3 + kj] * x.at(0, i, yy, xx);
            }
        EXPECT_NEAR(y.at(0, o, r, c), s, 1e-12);
      }
    }
  }
}

TEST(Conv, ResultsIndependentOfThreadCount) {
  const Tensor x = random_tensor({6, 4, 10, 10}, 10);
  Conv2d conv(4, 16, 3, 1);
  Rng rng = make_rng(11);
  conv.init(rng);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const Tensor y1 = conv.forward(x);
  conv.zero_grad();
  const Tensor g1 = conv.backward(x, y1, true);
  const Tensor w1 = conv.grad_weights;
  omp_set_num_threads(4);
  const Tensor y4 = conv.forward(x);
  conv.zero_grad();
  const Tensor g4 = conv.backward(x, y4, true);
  omp_set_num_threads(saved);
  EXPECT_EQ(y1, y4);
  EXPECT_EQ(g1, g4);
  EXPECT_EQ(w1, conv.grad_weights);
}
