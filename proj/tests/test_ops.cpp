/*
 * Copyright (c) 2026 The SSU Lab Authors
 *
 * Licensed under the Apache License, Version 2.0;
 * You may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an 'AS IS' BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "ssu/gradcheck.hpp"
#include "ssu/ops.hpp"
#include "ssu/rng.hpp"

namespace ssu {
namespace {

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), DimensionError);
  Tensor<float> t({2, 3});
  EXPECT_EQ(t.numel(), 6u);
}

TEST(Matmul, IdentityLeavesRhsUnchanged) {
  const auto eye = Tensor<double>::matrix({{1, 0}, {0, 1}});
  const auto b = Tensor<double>::matrix({{3, 4}, {5, 6}});
  EXPECT_EQ(matmul(eye, b), b);
}

TEST(Matmul, DotProduct) {
  const auto c = matmul(Tensor<double>::matrix({{1, 2}}), Tensor<double>::matrix({{3}, {4}}));
  ASSERT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_EQ(c[0], 11.0);
}

TEST(Matmul, ZeroRowGivesZeroRow) {
  const auto a = Tensor<float>::matrix({{0, 0, 0}, {1, 2, 3}});
  const auto b = Tensor<float>::matrix({{1, 2}, {3, 4}, {5, 6}});
  const auto c = matmul(a, b);
  EXPECT_EQ(c.at(0, 0), 0.0f);
  EXPECT_EQ(c.at(0, 1), 0.0f);
  EXPECT_EQ(c.at(1, 0), 22.0f);
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor<float>({2, 3}), Tensor<float>({2, 3})), DimensionError);
}

TEST(Matmul, Deterministic) {
  Rng rng(3);
  Tensor<float> a({37, 29}), b({29, 41});
  for (auto& v : a.data()) v = static_cast<float>(rng.normal());
  for (auto& v : b.data()) v = static_cast<float>(rng.normal());
  EXPECT_EQ(matmul(a, b), matmul(a, b));
}

TEST(Softmax, SymmetricRow) {
  const auto y = softmax_rows(Tensor<double>::matrix({{0, 0}}));
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  const auto y = softmax_rows(Tensor<float>::matrix({{1000, 1000}}));
  EXPECT_FLOAT_EQ(y[0], 0.5f);
  EXPECT_FLOAT_EQ(y[1], 0.5f);
}

TEST(Softmax, ClosedForm) {
  const auto y = softmax_rows(Tensor<double>::matrix({{0, std::log(3.0)}}));
  EXPECT_NEAR(y[0], 0.25, 1e-15);
  EXPECT_NEAR(y[1], 0.75, 1e-15);
}

TEST(Softmax, RowsSumToOne) {
  Rng rng(11);
  Tensor<float> x({16, 50});
  for (auto& v : x.data()) v = static_cast<float>(10 * rng.normal());
  const auto y = softmax_rows(x);
  for (std::size_t r = 0; r < 16; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 50; ++c) s += y.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Softmax, NonFiniteInputRejected) {
  EXPECT_THROW(softmax_rows(Tensor<double>::matrix({{0, std::numeric_limits<double>::quiet_NaN()}})),
               NonFiniteError);
}

TEST(Softmax, BackwardMatchesFiniteDifferences) {
  Rng rng(5);
  Tensor<double> x({3, 4}), w({3, 4});
  for (auto& v : x.data()) v = rng.normal();
  for (auto& v : w.data()) v = rng.normal();
  auto f = [&] {
    const auto y = softmax_rows(x);
    double s = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += w[i] * y[i];
    return s;
  };
  const auto grad = softmax_rows_backward(softmax_rows(x), w);
  Tensor<double>* params[] = {&x};
  const auto r = finite_diff_gradcheck(f, params, std::span<const Tensor<double>>(&grad, 1), 1e-5);
  EXPECT_LE(r.max_rel_error, 1e-6);
}

TEST(RmsNorm, ConstantInputNormalizesToOne) {
  const auto y = rmsnorm(Tensor<double>::vector({2.5, 2.5, 2.5}), Tensor<double>::vector({1, 1, 1}), 1e-12);
  for (double v : y.data()) EXPECT_NEAR(v, 1.0, 1e-9);
}

TEST(RmsNorm, HandArithmetic) {
  const auto y = rmsnorm(Tensor<double>::vector({3, 4}), Tensor<double>::vector({1, 1}), 0.0);
  EXPECT_NEAR(y[0], 3.0 / std::sqrt(12.5), 1e-15);
  EXPECT_NEAR(y[1], 4.0 / std::sqrt(12.5), 1e-15);
}

TEST(RmsNorm, ZeroGainGivesZero) {
  const auto y = rmsnorm(Tensor<float>::vector({1, -2, 7}), Tensor<float>::vector({0, 0, 0}), 1e-5f);
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(RmsNorm, RowBackwardMatchesFiniteDifferences) {
  Rng rng(9);
  Tensor<double> x({2, 5}), gain({5}), w({2, 5});
  for (auto& v : x.data()) v = rng.normal();
  for (auto& v : gain.data()) v = 1 + 0.3 * rng.normal();
  for (auto& v : w.data()) v = rng.normal();
  const double eps = 1e-5;
  auto f = [&] {
    Mat<double> out;
    std::vector<double> inv;
    kernel::rmsnorm_rows<double>(as_matrix(x), gain.data(), eps, out, inv);
    return (out.array() * as_matrix(w).array()).sum();
  };
  Mat<double> out, dx;
  std::vector<double> inv;
  kernel::rmsnorm_rows<double>(as_matrix(x), gain.data(), eps, out, inv);
  Tensor<double> dgain({5});
  kernel::rmsnorm_rows_backward<double>(as_matrix(x), gain.data(), inv, as_matrix(w), dx, dgain.data());
  const Tensor<double> grads[] = {to_tensor(dx), dgain};
  Tensor<double>* params[] = {&x, &gain};
  EXPECT_LE(finite_diff_gradcheck(f, params, grads, 1e-5).max_rel_error, 1e-6);
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  Tensor<float> logits({4, 256}, 0.0f);
  const std::vector<std::int64_t> targets{0, 17, 255, 3};
  EXPECT_NEAR(cross_entropy_mean(logits, targets), std::log(256.0), 1e-6);
}

TEST(CrossEntropy, LargeCorrectMarginApproachesZero) {
  double prev = 1e9;
  for (double margin : {1.0, 5.0, 20.0, 60.0}) {
    const auto logits = Tensor<double>::matrix({{0, margin, 0}});
    const std::vector<std::int64_t> targets{1};
    const double l = cross_entropy_mean(logits, targets);
    EXPECT_LT(l, prev);
    prev = l;
  }
  EXPECT_LT(prev, 1e-20);
}

TEST(CrossEntropy, ClosedForm) {
  const auto logits = Tensor<double>::matrix({{0, std::log(3.0)}});
  const std::vector<std::int64_t> targets{1};
  EXPECT_NEAR(cross_entropy_mean(logits, targets), -std::log(0.75), 1e-15);
}

TEST(CrossEntropy, OutOfRangeTargetThrows) {
  const auto logits = Tensor<double>::matrix({{0, 1}});
  const std::vector<std::int64_t> targets{2};
  EXPECT_THROW(cross_entropy_mean(logits, targets), DimensionError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  Tensor<double> logits({3, 6});
  for (auto& v : logits.data()) v = rng.normal();
  const std::vector<std::int64_t> targets{1, 5, 0};
  const auto grad = cross_entropy_grad(logits, targets);
  Tensor<double>* params[] = {&logits};
  const auto r = finite_diff_gradcheck([&] { return cross_entropy_mean(logits, targets); }, params,
                                       std::span<const Tensor<double>>(&grad, 1), 1e-5);
  EXPECT_LE(r.max_rel_error, 1e-7);
}

TEST(Gradcheck, QuadraticIsExact) {
  Tensor<double> theta = Tensor<double>::vector({0.5, -1.5, 3.0, 2.0});
  auto f = [&] {
    double s = 0;
    for (double v : theta.data()) s += 0.5 * v * v;
    return s;
  };
  const Tensor<double> grad = theta;  // d/dθ ½‖θ‖² = θ
  Tensor<double>* params[] = {&theta};
  EXPECT_LE(finite_diff_gradcheck(f, params, std::span<const Tensor<double>>(&grad, 1), 1e-4).max_rel_error, 1e-9);
}

TEST(Gradcheck, ConstantFunctionHasZeroError) {
  Tensor<double> theta = Tensor<double>::vector({1, 2, 3});
  const Tensor<double> grad({3}, 0.0);
  Tensor<double>* params[] = {&theta};
  EXPECT_EQ(
      finite_diff_gradcheck([] { return 4.2; }, params, std::span<const Tensor<double>>(&grad, 1), 1e-5).max_rel_error,
      0.0);
}

TEST(Gradcheck, NonFiniteObjectiveThrows) {
  Tensor<double> theta = Tensor<double>::vector({1});
  const Tensor<double> grad({1}, 0.0);
  Tensor<double>* params[] = {&theta};
  EXPECT_THROW(finite_diff_gradcheck([] { return std::numeric_limits<double>::infinity(); }, params,
                                     std::span<const Tensor<double>>(&grad, 1), 1e-5),
               NonFiniteError);
}

}  // namespace
}  // namespace ssu
