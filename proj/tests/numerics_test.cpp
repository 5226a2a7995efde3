/*
 * Copyright 2026 The feat Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "feat/numerics.hpp"
#include "gradcheck.hpp"

namespace feat {
namespace {

using ops::matmul;

Tensor random_tensor(Shape s, std::uint64_t seed, double stddev = 1.0) {
  RngStream rng(seed, 1);
  return randn(std::move(s), rng, stddev);
}

// Standard normal CDF by composite Simpson integration of the density from 0,
// independent of std::erf.
double normal_cdf_by_quadrature(double x) {
  const int n = 20000;
  const double h = x / n;
  auto pdf = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI); };
  double s = pdf(0.0) + pdf(x);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * pdf(i * h);
  return 0.5 + s * h / 3.0;
}

TEST(MatmulTest, IdentityTimesA) {
  Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor a = random_tensor({3, 4}, 1);
  Tensor c = matmul(eye, a);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(c[i], a[i]);
}

TEST(MatmulTest, TimesZero) {
  Tensor a = random_tensor({2, 3}, 2);
  Tensor c = matmul(a, Tensor::zeros({3, 5}));
  for (double v : c.data()) EXPECT_EQ(v, 0.0);
}

TEST(MatmulTest, HandEvaluated) {
  Tensor c = matmul(Tensor::from({2, 2}, {1, 2, 3, 4}), Tensor::from({2, 1}, {1, 1}));
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c[0], 3.0);
  EXPECT_EQ(c[1], 7.0);
}

TEST(MatmulTest, ShapeMismatchIsDimensionError) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected throw";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimension);
  }
}

TEST(LayerNormTest, ConstantVectorMapsToZero) {
  Tensor x = Tensor::full({1, 8}, 3.25);
  Tensor y = ops::layer_norm(x, Tensor::full({8}, 1.0), Tensor::zeros({8}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNormTest, AlreadyStandardized) {
  Tensor y = ops::layer_norm(Tensor::from({1, 2}, {1, -1}), Tensor::full({2}, 1.0),
                             Tensor::zeros({2}));
  EXPECT_NEAR(y[0], 1.0, 1e-8);
  EXPECT_NEAR(y[1], -1.0, 1e-8);
}

TEST(LayerNormTest, MomentsOfRandomRows) {
  const std::size_t d = 32;
  Tensor x = random_tensor({50, d}, 3, 4.0);
  Tensor y = ops::layer_norm(x, Tensor::full({d}, 1.0), Tensor::zeros({d}));
  for (std::size_t r = 0; r < 50; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t k = 0; k < d; ++k) mu += y[r * d + k];
    mu /= d;
    for (std::size_t k = 0; k < d; ++k) var += (y[r * d + k] - mu) * (y[r * d + k] - mu);
    var /= d;
    EXPECT_LT(std::abs(mu), 1e-9);
    EXPECT_LT(std::abs(var - 1.0), 1e-6);
  }
}

TEST(ActivationTest, OriginAndGeluAtOne) {
  EXPECT_EQ(ops::gelu(0.0), 0.0);
  EXPECT_EQ(ops::silu(0.0), 0.0);
  EXPECT_NEAR(ops::gelu(1.0), normal_cdf_by_quadrature(1.0), 1e-12);
  EXPECT_NEAR(ops::gelu(1.0), 0.841345, 1e-5);
}

TEST(ActivationTest, SoftmaxSymmetricAndNormalized) {
  Tensor s = ops::softmax(Tensor::full({1, 3}, 2.5));
  for (double v : s.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  Tensor r = ops::softmax(random_tensor({20, 7}, 4, 10.0));
  for (std::size_t i = 0; i < 20; ++i) {
    double sum = 0.0;
    for (std::size_t k = 0; k < 7; ++k) sum += r[i * 7 + k];
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(OrthonormalRowsTest, SingleRowIsUnit) {
  RngStream rng(5);
  Tensor q = orthonormal_rows(1, 6, rng);
  double n = 0.0;
  for (double v : q.data()) n += v * v;
  EXPECT_NEAR(n, 1.0, 1e-12);
}

void expect_gram_identity(const Tensor& q, double tol) {
  const std::size_t rows = q.dim(0), r = q.dim(1);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < rows; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < r; ++k) dot += q[i * r + k] * q[j * r + k];
      EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, tol) << i << "," << j;
    }
}

TEST(OrthonormalRowsTest, FullBasisAndLowRank) {
  RngStream rng(6);
  expect_gram_identity(orthonormal_rows(8, 8, rng), 1e-10);
  expect_gram_identity(orthonormal_rows(4, 16, rng), 1e-10);
}

TEST(OrthonormalRowsTest, TooManyRowsIsRankError) {
  RngStream rng(7);
  try {
    orthonormal_rows(5, 4, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kRank);
  }
}

TEST(BackwardTest, SumGivesOnes) {
  Tensor x = random_tensor({3, 4}, 8);
  x.set_requires_grad();
  ops::sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(BackwardTest, SumOfSquaresGivesTwoX) {
  Tensor x = random_tensor({5}, 9);
  x.set_requires_grad();
  ops::sum(ops::mul(x, x)).backward();
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x[i]);
}

TEST(BackwardTest, NonScalarRootIsContractError) {
  Tensor x = random_tensor({3}, 10);
  x.set_requires_grad();
  try {
    ops::scale(x, 2.0).backward();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kContract);
  }
}

TEST(BackwardTest, NoGradGuardSkipsRecording) {
  Tensor x = random_tensor({3}, 11);
  x.set_requires_grad();
  NoGradGuard guard;
  EXPECT_FALSE(ops::scale(x, 2.0).requires_grad());
}

// Every differentiable op in the closed set against central differences.
TEST(GradCheckTest, ElementwiseAndShapeOps) {
  Tensor a = random_tensor({3, 4}, 20), b = random_tensor({3, 4}, 21);
  Tensor bias = random_tensor({4}, 22);
  auto res = testing::grad_check({a, b, bias}, [&] {
    Tensor y = ops::add(ops::mul(ops::gelu(a), ops::silu(b)), ops::sub(ops::tanh(a), b));
    y = ops::add_bias(ops::softplus(y), bias);
    y = ops::add(y, ops::exp(ops::scale(ops::sigmoid(b), 0.3)));
    y = ops::concat_last(y, ops::square(a));
    y = ops::index_rows(ops::reshape(y, {3, 8}), {2, 0, 2});
    return testing::weighted_sum(y);
  });
  EXPECT_LT(res.max_rel_error(), 1e-6);
}

TEST(GradCheckTest, LinearMatmulLayerNorm) {
  Tensor x = random_tensor({2, 3, 5}, 30), w = random_tensor({4, 5}, 31);
  Tensor b = random_tensor({4}, 32), g = random_tensor({4}, 33), beta = random_tensor({4}, 34);
  Tensor m = random_tensor({4, 2}, 35);
  auto res = testing::grad_check({x, w, b, g, beta, m}, [&] {
    Tensor y = ops::layer_norm(ops::linear(x, w, b), g, beta);
    return testing::weighted_sum(ops::matmul(ops::reshape(y, {6, 4}), m));
  });
  EXPECT_LT(res.max_rel_error(), 1e-6);
}

TEST(GradCheckTest, SoftmaxFamilyAndBroadcasts) {
  Tensor x = random_tensor({4, 5}, 40), tok = random_tensor({5}, 41);
  Tensor lead = random_tensor({5}, 42), s = random_tensor({1}, 43);
  auto res = testing::grad_check({x, tok, lead, s}, [&] {
    Tensor y = ops::select_rows({true, false, true, false}, x, tok);
    y = ops::add_leading(y, lead);
    Tensor z = ops::add(ops::softmax(y), ops::log_softmax(y));
    return ops::add(testing::weighted_sum(z), ops::sum(ops::mul(ops::expand(s, {4, 5}), y)));
  });
  EXPECT_LT(res.max_rel_error(), 1e-6);
}

TEST(GradCheckTest, TokenSlicingAndConcat) {
  Tensor a = random_tensor({3, 2, 4}, 50), b = random_tensor({3, 1, 4}, 51);
  auto res = testing::grad_check({a, b}, [&] {
    Tensor c = ops::concat_tokens(a, b);
    Tensor y = ops::add(ops::slice_tokens(c, 1, 3), ops::slice_tokens(c, 0, 2));
    return testing::weighted_sum(ops::slice_rows(ops::gelu(y), 1, 3));
  });
  EXPECT_LT(res.max_rel_error(), 1e-6);
}

TEST(RngTest, SameSeedSameStream) {
  RngStream a(42, 3), b(42, 3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a(), b());
}

TEST(RngTest, DistinctStreamsDiffer) {
  RngStream a(42, 3), b(42, 4);
  int equal = 0;
  for (int i = 0; i < 100; ++i) equal += a() == b();
  EXPECT_EQ(equal, 0);
  // Crude independence check: correlation of uniforms near zero.
  RngStream c(1, 0), d(1, 1);
  double sxy = 0, sx = 0, sy = 0, sxx = 0, syy = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double x = c.uniform(), y = d.uniform();
    sx += x; sy += y; sxy += x * y; sxx += x * x; syy += y * y;
  }
  double cov = sxy / n - sx / n * sy / n;
  double corr = cov / std::sqrt((sxx / n - sx * sx / n / n) * (syy / n - sy * sy / n / n));
  EXPECT_LT(std::abs(corr), 0.03);
}

TEST(RngTest, SplitDoesNotAdvanceParent) {
  RngStream a(9), b(9);
  (void)a.split(5);
  EXPECT_EQ(a(), b());
  RngStream c1 = a.split(1), c2 = b.split(1);
  EXPECT_EQ(c1(), c2());
}

TEST(DirichletTest, OutputOnSimplex) {
  RngStream rng(12);
  for (double alpha : {0.01, 0.5, 1.0, 10.0}) {
    for (int t = 0; t < 50; ++t) {
      auto w = sample_dirichlet(std::vector<double>(6, alpha), rng);
      double s = 0.0;
      for (double v : w) {
        EXPECT_GE(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(DirichletTest, NonPositiveAlphaIsParameterError) {
  RngStream rng(13);
  EXPECT_THROW(sample_dirichlet({1.0, 0.0}, rng), Error);
}

TEST(KumaraswamyTest, UniformCaseIsIdentity) {
  for (double u : {0.0, 0.1, 0.5, 0.77, 1.0}) EXPECT_NEAR(kumaraswamy_icdf(u, 1, 1), u, 1e-15);
}

TEST(KumaraswamyTest, ClosedFormForBEqualsOne) {
  EXPECT_NEAR(kumaraswamy_icdf(0.25, 2.0, 1.0), 0.5, 1e-15);
}

TEST(KumaraswamyTest, DomainViolations) {
  EXPECT_THROW(kumaraswamy_icdf(0.5, 0.0, 1.0), Error);
  EXPECT_THROW(kumaraswamy_icdf(1.5, 1.0, 1.0), Error);
}

TEST(DeterminismTest, SameSeedBitwiseIdenticalTensors) {
  RngStream r1(77, 2), r2(77, 2);
  Tensor a = orthonormal_rows(3, 9, r1), b = orthonormal_rows(3, 9, r2);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}

}  // namespace
}  // namespace feat
