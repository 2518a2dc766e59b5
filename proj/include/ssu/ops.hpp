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

// The fixed operation set used by the model, each with a hand-written
// backward pass. Kernels work on row-major Eigen matrices; the Tensor-level
// wrappers below validate shapes and finiteness.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ssu/tensor.hpp"

namespace ssu {

using Token = std::uint16_t;

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

/// 2-D tensor viewed as a row-major Eigen matrix.
template <typename T>
MatMap<T> as_matrix(Tensor<T>& t) {
  return MatMap<T>(t.raw(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}
template <typename T>
ConstMatMap<T> as_matrix(const Tensor<T>& t) {
  return ConstMatMap<T>(t.raw(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}

template <typename T>
Tensor<T> to_tensor(const Mat<T>& m) {
  Tensor<T> out({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  as_matrix(out) = m;
  return out;
}

namespace kernel {

/// Row-wise softmax with per-row max subtraction. Only the first `valid(r)`
/// entries of row r participate; the rest are set to 0 (causal masking).
template <typename T, typename ValidFn>
void softmax_rows_prefix(Eigen::Ref<Mat<T>> x, ValidFn valid) {
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Eigen::Index n = valid(r);
    auto row = x.row(r);
    T mx = row(0);
    for (Eigen::Index c = 1; c < n; ++c) mx = std::max(mx, row(c));
    T sum = 0;
    for (Eigen::Index c = 0; c < n; ++c) {
      row(c) = std::exp(row(c) - mx);
      sum += row(c);
    }
    const T inv = T(1) / sum;
    for (Eigen::Index c = 0; c < n; ++c) row(c) *= inv;
    for (Eigen::Index c = n; c < x.cols(); ++c) row(c) = 0;
  }
}

template <typename T>
void softmax_rows(Eigen::Ref<Mat<T>> x) {
  const Eigen::Index cols = x.cols();
  softmax_rows_prefix<T>(x, [cols](Eigen::Index) { return cols; });
}

/// dX = Y .* (dY - rowsum(dY .* Y)) for Y = softmax(X).
template <typename T>
void softmax_rows_backward(const Eigen::Ref<const Mat<T>>& y, Eigen::Ref<Mat<T>> dy_to_dx) {
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const T dot = y.row(r).dot(dy_to_dx.row(r));
    dy_to_dx.row(r) = (y.row(r).array() * (dy_to_dx.row(r).array() - dot)).matrix();
  }
}

/// out[r,i] = gain[i] * x[r,i] * inv_rms[r], inv_rms[r] = 1/sqrt(mean(x[r,:]^2) + eps).
template <typename T>
void rmsnorm_rows(const Eigen::Ref<const Mat<T>>& x, std::span<const T> gain, T eps, Mat<T>& out,
                  std::vector<T>& inv_rms) {
  const Eigen::Index n = x.cols();
  out.resize(x.rows(), n);
  inv_rms.resize(static_cast<std::size_t>(x.rows()));
  ConstVecMap<T> g(gain.data(), n);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T ms = x.row(r).squaredNorm() / static_cast<T>(n);
    const T inv = T(1) / std::sqrt(ms + eps);
    inv_rms[static_cast<std::size_t>(r)] = inv;
    out.row(r) = (x.row(r).array() * g.transpose().array() * inv).matrix();
  }
}

/// Accumulates dgain and writes dx for the row-wise rmsnorm above.
template <typename T>
void rmsnorm_rows_backward(const Eigen::Ref<const Mat<T>>& x, std::span<const T> gain, const std::vector<T>& inv_rms,
                           const Eigen::Ref<const Mat<T>>& dy, Mat<T>& dx, std::span<T> dgain) {
  const Eigen::Index n = x.cols();
  dx.resize(x.rows(), n);
  ConstVecMap<T> g(gain.data(), n);
  VecMap<T> dg(dgain.data(), n);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T inv = inv_rms[static_cast<std::size_t>(r)];
    const auto gdy = (dy.row(r).array() * g.transpose().array()).eval();
    const T dot = (gdy * x.row(r).array()).sum();
    dx.row(r) = (gdy * inv - x.row(r).array() * (inv * inv * inv * dot / static_cast<T>(n))).matrix();
    dg.array() += (dy.row(r).array() * x.row(r).array() * inv).transpose();
  }
}

template <typename T>
T silu(T v) {
  return v / (T(1) + std::exp(-v));
}

template <typename T>
T silu_grad(T v) {
  const T s = T(1) / (T(1) + std::exp(-v));
  return s * (T(1) + v * (T(1) - s));
}

/// Mean cross-entropy over rows whose target is >= 0; rows with target -1
/// are ignored. Returns the loss and, when `dlogits` is non-null, writes
/// dL/dlogits (zero on ignored rows).
template <typename T>
double cross_entropy_rows(const Eigen::Ref<const Mat<T>>& logits, std::span<const std::int64_t> targets,
                          Mat<T>* dlogits) {
  const Eigen::Index rows = logits.rows();
  const Eigen::Index vocab = logits.cols();
  std::size_t counted = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto target = targets[static_cast<std::size_t>(r)];
    if (target == -1) continue;
    if (target < 0 || target >= vocab) {
      throw DimensionError("target id " + std::to_string(target) + " out of range [0, " + std::to_string(vocab) + ")");
    }
    ++counted;
  }
  if (counted == 0) throw DimensionError("cross_entropy: no scored positions");
  if (dlogits) dlogits->setZero(rows, vocab);
  double total = 0.0;
  const T inv_count = T(1) / static_cast<T>(counted);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto target = targets[static_cast<std::size_t>(r)];
    if (target < 0) continue;
    const T mx = logits.row(r).maxCoeff();
    T sum = 0;
    for (Eigen::Index c = 0; c < vocab; ++c) sum += std::exp(logits(r, c) - mx);
    const T lse = mx + std::log(sum);
    total += static_cast<double>(lse - logits(r, target));
    if (dlogits) {
      for (Eigen::Index c = 0; c < vocab; ++c) (*dlogits)(r, c) = std::exp(logits(r, c) - lse) * inv_count;
      (*dlogits)(r, target) -= inv_count;
    }
  }
  return total / static_cast<double>(counted);
}

}  // namespace kernel

// ---------------------------------------------------------------------------
// Tensor-level operations.

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul inner dimensions disagree: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor<T> c({a.dim(0), b.dim(1)});
  as_matrix(c).noalias() = as_matrix(a) * as_matrix(b);
  require_finite(c, "matmul");
  return c;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add shapes disagree: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor<T> c(a.shape());
  for (std::size_t i = 0; i < c.numel(); ++i) c[i] = a[i] + b[i];
  require_finite(c, "add");
  return c;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  require_rank(x, 2, "softmax_rows");
  require_finite(x, "softmax_rows input");
  Tensor<T> y = x;
  kernel::softmax_rows<T>(as_matrix(y));
  return y;
}

template <typename T>
Tensor<T> softmax_rows_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx = dy;
  kernel::softmax_rows_backward<T>(as_matrix(y), as_matrix(dx));
  return dx;
}

/// out[i] = gain[i] * x[i] / sqrt(mean(x^2) + eps) on a 1-D vector.
template <typename T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& gain, T eps) {
  require_rank(x, 1, "rmsnorm input");
  if (gain.shape() != x.shape()) throw DimensionError("rmsnorm gain shape mismatch");
  if (x.numel() == 0) throw DimensionError("rmsnorm requires n >= 1");
  if (!(eps >= 0)) throw std::invalid_argument("rmsnorm eps must be non-negative");
  Mat<T> out;
  std::vector<T> inv;
  kernel::rmsnorm_rows<T>(ConstMatMap<T>(x.raw(), 1, static_cast<Eigen::Index>(x.numel())), gain.data(), eps, out,
                          inv);
  Tensor<T> y(x.shape());
  std::copy(out.data(), out.data() + out.size(), y.raw());
  require_finite(y, "rmsnorm");
  return y;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = kernel::silu(x[i]);
  return y;
}

/// Rows of `table` selected by `ids`.
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const Token> ids) {
  require_rank(table, 2, "embedding table");
  const std::size_t d = table.dim(1);
  Tensor<T> out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= table.dim(0)) throw DimensionError("token id " + std::to_string(ids[r]) + " >= vocab size");
    std::copy_n(table.raw() + ids[r] * d, d, out.raw() + r * d);
  }
  return out;
}

/// Mean over rows of -log softmax(logits)[target].
template <typename T>
double cross_entropy_mean(const Tensor<T>& logits, std::span<const std::int64_t> targets) {
  require_rank(logits, 2, "cross_entropy logits");
  if (targets.size() != logits.dim(0)) throw DimensionError("cross_entropy: one target per logits row required");
  require_finite(logits, "cross_entropy logits");
  for (const auto t : targets) {
    if (t < 0 || t >= static_cast<std::int64_t>(logits.dim(1))) {
      throw DimensionError("target id " + std::to_string(t) + " out of range [0, " + std::to_string(logits.dim(1)) + ")");
    }
  }
  return kernel::cross_entropy_rows<T>(as_matrix(logits), targets, nullptr);
}

template <typename T>
Tensor<T> cross_entropy_grad(const Tensor<T>& logits, std::span<const std::int64_t> targets) {
  Mat<T> d;
  kernel::cross_entropy_rows<T>(as_matrix(logits), targets, &d);
  return to_tensor(d);
}

}  // namespace ssu
