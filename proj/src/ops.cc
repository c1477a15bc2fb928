// src/ops.cc

// Copyright 2026  comsl authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "comsl/ops.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace comsl {

namespace {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MatMap = Eigen::Map<RowMat<Real>>;
template <typename Real>
using CMatMap = Eigen::Map<const RowMat<Real>>;
template <typename Real>
using StridedMap = Eigen::Map<RowMat<Real>, 0, Eigen::OuterStride<>>;
template <typename Real>
using CStridedMap = Eigen::Map<const RowMat<Real>, 0, Eigen::OuterStride<>>;

template <typename Real>
using Storage = internal::TensorStorage<Real>;

template <typename Real>
bool Tracking(std::initializer_list<const Tensor<Real> *> inputs) {
  if (ActiveTape<Real>() == nullptr) return false;
  for (const Tensor<Real> *t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

template <typename Real>
void Record(Tensor<Real> &out, std::function<void()> fn) {
  out.set_requires_grad(true);
  ActiveTape<Real>()->Record(out, std::move(fn));
}

// Gradient accumulator for an input, or nullptr if it does not want one.
template <typename Real>
Real *GradOf(const Tensor<Real> &t) {
  return t.requires_grad() ? t.storage()->EnsureGrad() : nullptr;
}

template <typename Real>
void CheckSameShape(const Tensor<Real> &a, const Tensor<Real> &b, const char *op) {
  if (a.shape() != b.shape())
    throw TensorError(std::string(op) + ": shape mismatch " + ShapeToString(a.shape()) +
                      " vs " + ShapeToString(b.shape()));
}

template <typename Real>
void CheckMatrix(const Tensor<Real> &a, const char *op) {
  if (a.rank() != 2)
    throw TensorError(std::string(op) + ": expected a matrix, got " + ShapeToString(a.shape()));
}

template <typename Real>
CMatMap<Real> View(const Tensor<Real> &t) {
  return CMatMap<Real>(t.data().data(), t.rows(), t.cols());
}

// Row-by-row accumulation: the summation order does not depend on buffer
// alignment, which Eigen's vectorized column reductions do.
template <typename Real> void AddColumnSums(const Real *g, int64_t rows, int64_t cols, Real *out) {
  std::vector<Real> acc(cols, Real(0));
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) acc[c] += g[r * cols + c];
  for (int64_t c = 0; c < cols; ++c) out[c] += acc[c];
}

// Rows x last-dimension view of any tensor with rank >= 1.
template <typename Real>
std::pair<int64_t, int64_t> RowsByLast(const Tensor<Real> &t, const char *op) {
  if (t.rank() < 1) throw TensorError(std::string(op) + ": scalar input");
  int64_t last = t.shape().back();
  if (last == 0) throw TensorError(std::string(op) + ": zero-length last dimension");
  return {t.numel() / last, last};
}

thread_local uint64_t g_dropout_draws = 0;

}  // namespace

uint64_t DropoutDraws() { return g_dropout_draws; }

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Real>
Tensor<Real> MatMul(const Tensor<Real> &a, const Tensor<Real> &b) {
  CheckMatrix(a, "matmul");
  CheckMatrix(b, "matmul");
  if (a.cols() != b.rows())
    throw TensorError("matmul: shape mismatch " + ShapeToString(a.shape()) + " x " +
                      ShapeToString(b.shape()));
  Tensor<Real> out({a.rows(), b.cols()});
  MatMap<Real>(out.mutable_data().data(), a.rows(), b.cols()).noalias() = View(a) * View(b);
  if (Tracking({&a, &b})) {
    Storage<Real> *o = out.storage().get();
    Record(out, [a, b, o]() {
      CMatMap<Real> g(o->grad.data(), a.rows(), b.cols());
      if (Real *ga = GradOf(a))
        MatMap<Real>(ga, a.rows(), a.cols()).noalias() += g * View(b).transpose();
      if (Real *gb = GradOf(b))
        MatMap<Real>(gb, b.rows(), b.cols()).noalias() += View(a).transpose() * g;
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> MatMulNT(const Tensor<Real> &a, const Tensor<Real> &b) {
  CheckMatrix(a, "matmul_nt");
  CheckMatrix(b, "matmul_nt");
  if (a.cols() != b.cols())
    throw TensorError("matmul_nt: shape mismatch " + ShapeToString(a.shape()) + " x " +
                      ShapeToString(b.shape()) + "^T");
  Tensor<Real> out({a.rows(), b.rows()});
  MatMap<Real>(out.mutable_data().data(), a.rows(), b.rows()).noalias() =
      View(a) * View(b).transpose();
  if (Tracking({&a, &b})) {
    Storage<Real> *o = out.storage().get();
    Record(out, [a, b, o]() {
      CMatMap<Real> g(o->grad.data(), a.rows(), b.rows());
      if (Real *ga = GradOf(a)) MatMap<Real>(ga, a.rows(), a.cols()).noalias() += g * View(b);
      if (Real *gb = GradOf(b))
        MatMap<Real>(gb, b.rows(), b.cols()).noalias() += g.transpose() * View(a);
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> Transpose(const Tensor<Real> &a) {
  CheckMatrix(a, "transpose");
  Tensor<Real> out({a.cols(), a.rows()});
  MatMap<Real>(out.mutable_data().data(), a.cols(), a.rows()) = View(a).transpose();
  if (Tracking({&a})) {
    Storage<Real> *o = out.storage().get();
    Record(out, [a, o]() {
      CMatMap<Real> g(o->grad.data(), a.cols(), a.rows());
      MatMap<Real>(GradOf(a), a.rows(), a.cols()) += g.transpose();
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> Linear(const Tensor<Real> &x, const Tensor<Real> &w, const Tensor<Real> &b) {
  CheckMatrix(x, "linear");
  CheckMatrix(w, "linear");
  if (x.cols() != w.rows() || b.numel() != w.cols())
    throw TensorError("linear: shape mismatch x" + ShapeToString(x.shape()) + " w" +
                      ShapeToString(w.shape()) + " b" + ShapeToString(b.shape()));
  const int64_t n = x.rows(), m = w.cols();
  Tensor<Real> out({n, m});
  MatMap<Real> y(out.mutable_data().data(), n, m);
  y.noalias() = View(x) * View(w);
  Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>> bias(b.data().data(), m);
  y.rowwise() += bias;
  if (Tracking({&x, &w, &b})) {
    Storage<Real> *o = out.storage().get();
    Record(out, [x, w, b, o, n, m]() {
      CMatMap<Real> g(o->grad.data(), n, m);
      if (Real *gx = GradOf(x)) MatMap<Real>(gx, n, x.cols()).noalias() += g * View(w).transpose();
      if (Real *gw = GradOf(w))
        MatMap<Real>(gw, w.rows(), m).noalias() += View(x).transpose() * g;
      if (Real *gb = GradOf(b))
        AddColumnSums(o->grad.data(), n, m, gb);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename Real>
Tensor<Real> Add(const Tensor<Real> &a, const Tensor<Real> &b) {
  CheckSameShape(a, b, "add");
  Tensor<Real> out(a.shape());
  auto y = out.mutable_data();
  auto x1 = a.data(), x2 = b.data();
  for (size_t i = 0; i < y.size(); ++i) y[i] = x1[i] + x2[i];
  if (Tracking({&a, &b})) {
    Storage<Real> *o = out.storage().get();
    Record(out, [a, b, o]() {
      const size_t n = o->grad.size();
      if (Real *ga = GradOf(a))
        for (size_t i = 0; i < n; ++i) ga[i] += o->grad[i];
      if (Real *gb = GradOf(b))
        for (size_t i = 0; i < n; ++i) gb[i] += o->grad[i];
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> Sub(const Tensor<Real> &a, const Tensor<Real> &b) {
  CheckSameShape(a, b, "sub");
  Tensor<Real> out(a.shape());
  auto y = out.mutable_data();
  auto x1 = a.data(), x2 = b.data();
  for (size_t i = 0; i < y.size(); ++i) y[i] = x1[i] - x2[i];
  if (Tracking({&a, &b})) {
    Storage<Real> *o = out.storage().get();
    Record(out, [a, b, o]() {
      const size_t n = o->grad.size();
      if (Real *ga = GradOf(a))
        for (size_t i = 0; i < n; ++i) ga[i] += o->grad[i];
      if (Real *gb = GradOf(b))
        for (size_t i = 0; i < n; ++i) gb[i] -= o->grad[i];
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> Mul(const Tensor<Real> &a, const Tensor<Real> &b) {
  CheckSameShape(a, b, "mul");
  Tensor<Real> out(a.shape());
  auto y = out.mutable_data();
  auto x1 = a.data(), x2 = b.data();
  for (size_t i = 0; i < y.size(); ++i) y[i] = x1[i] * x2[i];
  if (Tracking({&a, &b})) {
    Storage<Real> *o = out.storage().get();
    Record(out, [a, b, o]() {
      const size_t n = o->grad.size();
      auto x1 = a.data(), x2 = b.data();
      if (Real *ga = GradOf(a))
        for (size_t i = 0; i < n; ++i) ga[i] += o->grad[i] * x2[i];
      if (Real *gb = GradOf(b))
        for (size_t i = 0; i < n; ++i) gb[i] += o->grad[i] * x1[i];
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> Scale(const Tensor<Real> &a, Real s) {
  Tensor<Real> out(a.shape());
  auto y = out.mutable_data();
  auto x = a.data();
  for (size_t i = 0; i < y.size(); ++i) y[i] = x[i] * s;
  if (Tracking({&a})) {
    Storage<Real> *o = out.storage().get();
    Record(out, [a, o, s]() {
      Real *ga = GradOf(a);
      for (size_t i = 0; i < o->grad.size(); ++i) ga[i] += o->grad[i] * s;
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> AddRowVector(const Tensor<Real> &a, const Tensor<Real> &v) {
  CheckMatrix(a, "add_row_vector");
  const int64_t n = a.rows(), m = a.cols();
  if (v.numel() != m)
    throw TensorError("add_row_vector: shape mismatch " + ShapeToString(a.shape()) + " + " +
                      ShapeToString(v.shape()));
  Tensor<Real> out(a.shape());
  auto y = out.mutable_data();
  auto x = a.data(), b = v.data();
  for (int64_t r = 0; r < n; ++r)
    for (int64_t c = 0; c < m; ++c) y[r * m + c] = x[r * m + c] + b[c];
  if (Tracking({&a, &v})) {
    Storage<Real> *o = out.storage().get();
    Record(out, [a, v, o, n, m]() {
      if (Real *ga = GradOf(a))
        for (size_t i = 0; i < o->grad.size(); ++i) ga[i] += o->grad[i];
      if (Real *gv = GradOf(v))
        for (int64_t r = 0; r < n; ++r)
          for (int64_t c = 0; c < m; ++c) gv[c] += o->grad[r * m + c];
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> Gelu(const Tensor<Real> &a) {
  Tensor<Real> out(a.shape());
  auto y = out.mutable_data();
  auto x = a.data();
  const Real inv_sqrt2 = Real(0.70710678118654752440);
  for (size_t i = 0; i < y.size(); ++i) y[i] = Real(0.5) * x[i] * (Real(1) + std::erf(x[i] * inv_sqrt2));
  if (Tracking({&a})) {
    Storage<Real> *o = out.storage().get();
    Record(out, [a, o, inv_sqrt2]() {
      Real *ga = GradOf(a);
      auto x = a.data();
      const Real inv_sqrt_2pi = Real(0.39894228040143267794);
      for (size_t i = 0; i < o->grad.size(); ++i) {
        Real cdf = Real(0.5) * (Real(1) + std::erf(x[i] * inv_sqrt2));
        Real pdf = inv_sqrt_2pi * std::exp(Real(-0.5) * x[i] * x[i]);
        ga[i] += o->grad[i] * (cdf + x[i] * pdf);
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> MaskedFill(const Tensor<Real> &a, const std::vector<uint8_t> &mask, Real value) {
  if (static_cast<int64_t>(mask.size()) != a.numel())
    throw TensorError("masked_fill: mask has " + std::to_string(mask.size()) +
                      " entries for shape " + ShapeToString(a.shape()));
  Tensor<Real> out(a.shape());
  auto y = out.mutable_data();
  auto x = a.data();
  for (size_t i = 0; i < y.size(); ++i) y[i] = mask[i] ? value : x[i];
  if (Tracking({&a})) {
    Storage<Real> *o = out.storage().get();
    Record(out, [a, o, mask]() {
      Real *ga = GradOf(a);
      for (size_t i = 0; i < o->grad.size(); ++i)
        if (!mask[i]) ga[i] += o->grad[i];
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> Detach(const Tensor<Real> &a) {
  return Tensor<Real>(a.shape(), std::vector<Real>(a.data().begin(), a.data().end()));
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Real>
Tensor<Real> Sum(const Tensor<Real> &a) {
  if (a.numel() == 0) throw TensorError("sum: reduction over empty tensor");
  Real s = 0;
  for (Real x : a.data()) s += x;
  Tensor<Real> out = Tensor<Real>::Scalar(s);
  if (Tracking({&a})) {
    Storage<Real> *o = out.storage().get();
    Record(out, [a, o]() {
      Real *ga = GradOf(a);
      for (int64_t i = 0; i < a.numel(); ++i) ga[i] += o->grad[0];
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> Mean(const Tensor<Real> &a) {
  if (a.numel() == 0) throw TensorError("mean: reduction over empty tensor");
  return Scale(Sum(a), Real(1) / Real(a.numel()));
}

// ---------------------------------------------------------------------------
// Row plumbing

template <typename Real>
Tensor<Real> Embedding(const Tensor<Real> &table, const std::vector<int32_t> &ids) {
  CheckMatrix(table, "embedding");
  const int64_t v = table.rows(), d = table.cols();
  for (int32_t id : ids)
    if (id < 0 || id >= v)
      throw TensorError("embedding: token id " + std::to_string(id) + " outside vocabulary of " +
                        std::to_string(v));
  const int64_t n = static_cast<int64_t>(ids.size());
  Tensor<Real> out({n, d});
  auto y = out.mutable_data();
  auto t = table.data();
  for (int64_t i = 0; i < n; ++i) std::copy_n(t.data() + ids[i] * d, d, y.data() + i * d);
  if (Tracking({&table})) {
    Storage<Real> *o = out.storage().get();
    Record(out, [table, o, ids, d]() {
      Real *gt = GradOf(table);
      for (size_t i = 0; i < ids.size(); ++i)
        for (int64_t c = 0; c < d; ++c) gt[ids[i] * d + c] += o->grad[i * d + c];
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> GatherRows(const Tensor<Real> &a, const std::vector<int64_t> &idx) {
  CheckMatrix(a, "gather_rows");
  const int64_t rows = a.rows(), d = a.cols();
  for (int64_t r : idx)
    if (r < 0 || r >= rows)
      throw TensorError("gather_rows: row " + std::to_string(r) + " out of range for " +
                        ShapeToString(a.shape()));
  const int64_t n = static_cast<int64_t>(idx.size());
  Tensor<Real> out({n, d});
  auto y = out.mutable_data();
  auto x = a.data();
  for (int64_t i = 0; i < n; ++i) std::copy_n(x.data() + idx[i] * d, d, y.data() + i * d);
  if (Tracking({&a})) {
    Storage<Real> *o = out.storage().get();
    Record(out, [a, o, idx, d]() {
      Real *ga = GradOf(a);
      for (size_t i = 0; i < idx.size(); ++i)
        for (int64_t c = 0; c < d; ++c) ga[idx[i] * d + c] += o->grad[i * d + c];
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> ConcatSeq(const Tensor<Real> &a, const Tensor<Real> &b) {
  CheckMatrix(a, "concat_seq");
  CheckMatrix(b, "concat_seq");
  if (a.cols() != b.cols())
    throw TensorError("concat_seq: feature mismatch " + ShapeToString(a.shape()) + " vs " +
                      ShapeToString(b.shape()));
  Tensor<Real> out({a.rows() + b.rows(), a.cols()});
  auto y = out.mutable_data();
  std::copy(a.data().begin(), a.data().end(), y.begin());
  std::copy(b.data().begin(), b.data().end(), y.begin() + a.numel());
  if (Tracking({&a, &b})) {
    Storage<Real> *o = out.storage().get();
    Record(out, [a, b, o]() {
      if (Real *ga = GradOf(a))
        for (int64_t i = 0; i < a.numel(); ++i) ga[i] += o->grad[i];
      if (Real *gb = GradOf(b))
        for (int64_t i = 0; i < b.numel(); ++i) gb[i] += o->grad[a.numel() + i];
    });
  }
  return out;
}

template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> SplitSeq(const Tensor<Real> &t, int64_t first_rows) {
  CheckMatrix(t, "split_seq");
  if (first_rows < 0 || first_rows > t.rows())
    throw TensorError("split_seq: boundary " + std::to_string(first_rows) + " outside " +
                      ShapeToString(t.shape()));
  std::vector<int64_t> head(first_rows), tail(t.rows() - first_rows);
  std::iota(head.begin(), head.end(), 0);
  std::iota(tail.begin(), tail.end(), first_rows);
  return {GatherRows(t, head), GatherRows(t, tail)};
}

template <typename Real>
Tensor<Real> Dropout(const Tensor<Real> &a, double p, Rng *rng) {
  if (p < 0.0 || p >= 1.0) throw TensorError("dropout: rate must be in [0,1)");
  if (rng == nullptr || p == 0.0) return a;
  ++g_dropout_draws;
  const Real keep_scale = Real(1.0 / (1.0 - p));
  std::vector<Real> mask(a.numel());
  for (Real &m : mask) {
    double u = static_cast<double>((*rng)() >> 11) * 0x1.0p-53;
    m = u < p ? Real(0) : keep_scale;
  }
  Tensor<Real> out(a.shape());
  auto y = out.mutable_data();
  auto x = a.data();
  for (size_t i = 0; i < y.size(); ++i) y[i] = x[i] * mask[i];
  if (Tracking({&a})) {
    Storage<Real> *o = out.storage().get();
    Record(out, [a, o, mask = std::move(mask)]() {
      Real *ga = GradOf(a);
      for (size_t i = 0; i < o->grad.size(); ++i) ga[i] += o->grad[i] * mask[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

template <typename Real>
Tensor<Real> SoftmaxLast(const Tensor<Real> &a) {
  auto [rows, n] = RowsByLast(a, "softmax");
  Tensor<Real> out(a.shape());
  auto y = out.mutable_data();
  auto x = a.data();
  for (int64_t r = 0; r < rows; ++r) {
    const Real *xr = x.data() + r * n;
    Real *yr = y.data() + r * n;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (int64_t i = 0; i < n; ++i) {
      if (std::isnan(xr[i])) throw TensorError("softmax: NaN input");
      mx = std::max(mx, xr[i]);
    }
    Real s = 0;
    for (int64_t i = 0; i < n; ++i) s += (yr[i] = std::exp(xr[i] - mx));
    for (int64_t i = 0; i < n; ++i) yr[i] /= s;
  }
  if (Tracking({&a})) {
    Storage<Real> *o = out.storage().get();
    Record(out, [a, o, rows = rows, n = n]() {
      Real *ga = GradOf(a);
      for (int64_t r = 0; r < rows; ++r) {
        const Real *yr = o->data.data() + r * n;
        const Real *gr = o->grad.data() + r * n;
        Real dot = 0;
        for (int64_t i = 0; i < n; ++i) dot += gr[i] * yr[i];
        for (int64_t i = 0; i < n; ++i) ga[r * n + i] += yr[i] * (gr[i] - dot);
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> LayerNorm(const Tensor<Real> &a, const Tensor<Real> &gain, const Tensor<Real> &bias,
                       double eps) {
  auto [rows, n] = RowsByLast(a, "layer_norm");
  if (gain.numel() != n || bias.numel() != n)
    throw TensorError("layer_norm: gain/bias " + ShapeToString(gain.shape()) + "/" +
                      ShapeToString(bias.shape()) + " do not match last dim of " +
                      ShapeToString(a.shape()));
  if (!(eps > 0.0)) throw TensorError("layer_norm: eps must be positive");
  Tensor<Real> out(a.shape());
  std::vector<Real> xhat(a.numel()), rstd(rows);
  auto y = out.mutable_data();
  auto x = a.data();
  auto g = gain.data(), b = bias.data();
  for (int64_t r = 0; r < rows; ++r) {
    const Real *xr = x.data() + r * n;
    Real mean = 0;
    for (int64_t i = 0; i < n; ++i) mean += xr[i];
    mean /= Real(n);
    Real var = 0;
    for (int64_t i = 0; i < n; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= Real(n);
    rstd[r] = Real(1) / std::sqrt(var + Real(eps));
    for (int64_t i = 0; i < n; ++i) {
      Real h = (xr[i] - mean) * rstd[r];
      xhat[r * n + i] = h;
      y[r * n + i] = h * g[i] + b[i];
    }
  }
  if (Tracking({&a, &gain, &bias})) {
    Storage<Real> *o = out.storage().get();
    Record(out, [a, gain, bias, o, xhat = std::move(xhat), rstd = std::move(rstd), rows = rows,
                 n = n]() {
      Real *ga = GradOf(a);
      Real *gg = GradOf(gain);
      Real *gb = GradOf(bias);
      auto g = gain.data();
      std::vector<Real> dh(n);
      for (int64_t r = 0; r < rows; ++r) {
        const Real *dy = o->grad.data() + r * n;
        const Real *hr = xhat.data() + r * n;
        Real mean_dh = 0, mean_dh_h = 0;
        for (int64_t i = 0; i < n; ++i) {
          if (gg) gg[i] += dy[i] * hr[i];
          if (gb) gb[i] += dy[i];
          dh[i] = dy[i] * g[i];
          mean_dh += dh[i];
          mean_dh_h += dh[i] * hr[i];
        }
        if (!ga) continue;
        mean_dh /= Real(n);
        mean_dh_h /= Real(n);
        for (int64_t i = 0; i < n; ++i)
          ga[r * n + i] += rstd[r] * (dh[i] - mean_dh - hr[i] * mean_dh_h);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Strided convolution

template <typename Real>
Tensor<Real> Conv1dStride2(const Tensor<Real> &seq, const Tensor<Real> &kernel,
                           const Tensor<Real> &bias, const std::vector<int64_t> &segments) {
  CheckMatrix(seq, "conv1d_stride2");
  if (kernel.rank() != 3 || kernel.dim(0) != 3 || kernel.dim(1) != seq.cols() ||
      bias.numel() != kernel.dim(2))
    throw TensorError("conv1d_stride2: kernel " + ShapeToString(kernel.shape()) + " / bias " +
                      ShapeToString(bias.shape()) + " incompatible with input " +
                      ShapeToString(seq.shape()));
  const int64_t d_in = seq.cols(), d_out = kernel.dim(2);
  int64_t total = 0, out_rows = 0;
  for (int64_t len : segments) {
    if (len <= 0) throw TensorError("conv1d_stride2: empty sequence");
    total += len;
    out_rows += (len + 1) / 2;
  }
  if (total != seq.rows())
    throw TensorError("conv1d_stride2: segments cover " + std::to_string(total) + " rows of " +
                      ShapeToString(seq.shape()));
  // im2col: output row i of a segment sees input rows 2i-1, 2i, 2i+1.
  std::vector<int64_t> src(out_rows * 3, -1);
  {
    int64_t in_off = 0, r = 0;
    for (int64_t len : segments) {
      for (int64_t i = 0; i < (len + 1) / 2; ++i, ++r)
        for (int64_t j = 0; j < 3; ++j) {
          int64_t t = 2 * i - 1 + j;
          if (t >= 0 && t < len) src[r * 3 + j] = in_off + t;
        }
      in_off += len;
    }
  }
  const int64_t width = 3 * d_in;
  RowMat<Real> col = RowMat<Real>::Zero(out_rows, width);
  auto x = seq.data();
  for (int64_t r = 0; r < out_rows; ++r)
    for (int64_t j = 0; j < 3; ++j)
      if (src[r * 3 + j] >= 0)
        std::copy_n(x.data() + src[r * 3 + j] * d_in, d_in, col.data() + r * width + j * d_in);
  Tensor<Real> out({out_rows, d_out});
  MatMap<Real> y(out.mutable_data().data(), out_rows, d_out);
  CMatMap<Real> k(kernel.data().data(), width, d_out);
  y.noalias() = col * k;
  y.rowwise() += Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>>(bias.data().data(), d_out);
  if (Tracking({&seq, &kernel, &bias})) {
    Storage<Real> *o = out.storage().get();
    Record(out, [seq, kernel, bias, o, col = std::move(col), src = std::move(src), out_rows,
                 d_in, d_out, width]() {
      CMatMap<Real> g(o->grad.data(), out_rows, d_out);
      if (Real *gk = GradOf(kernel)) MatMap<Real>(gk, width, d_out).noalias() += col.transpose() * g;
      if (Real *gb = GradOf(bias))
        AddColumnSums(o->grad.data(), out_rows, d_out, gb);
      if (Real *gx = GradOf(seq)) {
        RowMat<Real> gcol = g * CMatMap<Real>(kernel.data().data(), width, d_out).transpose();
        for (int64_t r = 0; r < out_rows; ++r)
          for (int64_t j = 0; j < 3; ++j) {
            int64_t s = src[r * 3 + j];
            if (s < 0) continue;
            for (int64_t c = 0; c < d_in; ++c) gx[s * d_in + c] += gcol(r, j * d_in + c);
          }
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> Conv1dStride2(const Tensor<Real> &seq, const Tensor<Real> &kernel,
                           const Tensor<Real> &bias) {
  if (seq.rank() != 2 || seq.rows() == 0) throw TensorError("conv1d_stride2: empty sequence");
  return Conv1dStride2(seq, kernel, bias, std::vector<int64_t>{seq.rows()});
}

// ---------------------------------------------------------------------------
// Attention

AttentionLayout AttentionLayout::Self(const std::vector<int64_t> &lengths, bool causal) {
  AttentionLayout l;
  l.causal = causal;
  int64_t off = 0;
  for (int64_t len : lengths) {
    l.q_offsets.push_back(off);
    l.k_offsets.push_back(off);
    off += len;
  }
  l.q_lengths = lengths;
  l.k_lengths = lengths;
  return l;
}

AttentionLayout AttentionLayout::Cross(const std::vector<int64_t> &q_lengths,
                                       const std::vector<int64_t> &k_lengths) {
  if (q_lengths.size() != k_lengths.size())
    throw TensorError("attention: query/key segment counts differ");
  AttentionLayout l;
  int64_t qo = 0, ko = 0;
  for (size_t i = 0; i < q_lengths.size(); ++i) {
    l.q_offsets.push_back(qo);
    l.k_offsets.push_back(ko);
    qo += q_lengths[i];
    ko += k_lengths[i];
  }
  l.q_lengths = q_lengths;
  l.k_lengths = k_lengths;
  return l;
}

template <typename Real>
Tensor<Real> MultiHeadAttention(const Tensor<Real> &q, const Tensor<Real> &k,
                                const Tensor<Real> &v, int n_heads,
                                const AttentionLayout &layout) {
  CheckMatrix(q, "attention");
  CheckMatrix(k, "attention");
  CheckSameShape(k, v, "attention");
  const int64_t d = q.cols();
  if (k.cols() != d || n_heads <= 0 || d % n_heads != 0)
    throw TensorError("attention: width " + std::to_string(d) + " incompatible with " +
                      std::to_string(n_heads) + " heads / keys " + ShapeToString(k.shape()));
  const size_t nseg = layout.q_offsets.size();
  if (layout.q_lengths.size() != nseg || layout.k_offsets.size() != nseg ||
      layout.k_lengths.size() != nseg)
    throw TensorError("attention: malformed layout");
  const bool grouped = !layout.q_groups.empty();
  if (grouped && (static_cast<int64_t>(layout.q_groups.size()) != q.rows() ||
                  static_cast<int64_t>(layout.k_groups.size()) != k.rows()))
    throw TensorError("attention: group vectors do not cover all rows");
  const int64_t dh = d / n_heads;
  const Real scale = Real(1) / std::sqrt(Real(dh));
  const Real neg_inf = -std::numeric_limits<Real>::infinity();

  // Probabilities for every (segment, head), kept for backward.
  std::vector<int64_t> p_off(nseg + 1, 0);
  for (size_t s = 0; s < nseg; ++s) {
    if (layout.q_offsets[s] + layout.q_lengths[s] > q.rows() ||
        layout.k_offsets[s] + layout.k_lengths[s] > k.rows())
      throw TensorError("attention: layout exceeds tensor rows");
    p_off[s + 1] = p_off[s] + layout.q_lengths[s] * layout.k_lengths[s] * n_heads;
  }
  std::vector<Real> probs(p_off[nseg]);
  Tensor<Real> out({q.rows(), d});
  const Real *qd = q.data().data();
  const Real *kd = k.data().data();
  const Real *vd = v.data().data();
  Real *od = out.mutable_data().data();

  for (size_t s = 0; s < nseg; ++s) {
    const int64_t lq = layout.q_lengths[s], lk = layout.k_lengths[s];
    const int64_t qo = layout.q_offsets[s], ko = layout.k_offsets[s];
    if (lq == 0) continue;
    for (int h = 0; h < n_heads; ++h) {
      MatMap<Real> p(probs.data() + p_off[s] + h * lq * lk, lq, lk);
      if (lk == 0) continue;
      CStridedMap<Real> qh(qd + qo * d + h * dh, lq, dh, Eigen::OuterStride<>(d));
      CStridedMap<Real> kh(kd + ko * d + h * dh, lk, dh, Eigen::OuterStride<>(d));
      CStridedMap<Real> vh(vd + ko * d + h * dh, lk, dh, Eigen::OuterStride<>(d));
      p.noalias() = (qh * kh.transpose()) * scale;
      for (int64_t i = 0; i < lq; ++i) {
        Real mx = neg_inf;
        for (int64_t j = 0; j < lk; ++j) {
          bool allowed = !(layout.causal && j > i) &&
                         !(grouped && layout.q_groups[qo + i] != layout.k_groups[ko + j]);
          if (!allowed) p(i, j) = neg_inf;
          mx = std::max(mx, p(i, j));
        }
        if (mx == neg_inf) {  // nothing visible: the row contributes zeros
          p.row(i).setZero();
          continue;
        }
        Real sum = 0;
        for (int64_t j = 0; j < lk; ++j) sum += (p(i, j) = std::exp(p(i, j) - mx));
        p.row(i) /= sum;
      }
      StridedMap<Real>(od + qo * d + h * dh, lq, dh, Eigen::OuterStride<>(d)).noalias() = p * vh;
    }
  }

  if (Tracking({&q, &k, &v})) {
    Storage<Real> *o = out.storage().get();
    Record(out, [q, k, v, o, layout, probs = std::move(probs), p_off = std::move(p_off), n_heads,
                 d, dh, scale]() {
      const Real *qd = q.data().data();
      const Real *kd = k.data().data();
      const Real *vd = v.data().data();
      Real *gq = GradOf(q);
      Real *gk = GradOf(k);
      Real *gv = GradOf(v);
      RowMat<Real> dp, ds;
      for (size_t s = 0; s < layout.q_offsets.size(); ++s) {
        const int64_t lq = layout.q_lengths[s], lk = layout.k_lengths[s];
        const int64_t qo = layout.q_offsets[s], ko = layout.k_offsets[s];
        if (lq == 0 || lk == 0) continue;
        for (int h = 0; h < n_heads; ++h) {
          CMatMap<Real> p(probs.data() + p_off[s] + h * lq * lk, lq, lk);
          CStridedMap<Real> go(o->grad.data() + qo * d + h * dh, lq, dh, Eigen::OuterStride<>(d));
          CStridedMap<Real> qh(qd + qo * d + h * dh, lq, dh, Eigen::OuterStride<>(d));
          CStridedMap<Real> kh(kd + ko * d + h * dh, lk, dh, Eigen::OuterStride<>(d));
          CStridedMap<Real> vh(vd + ko * d + h * dh, lk, dh, Eigen::OuterStride<>(d));
          if (gv)
            StridedMap<Real>(gv + ko * d + h * dh, lk, dh, Eigen::OuterStride<>(d)).noalias() +=
                p.transpose() * go;
          if (!gq && !gk) continue;
          dp.noalias() = go * vh.transpose();
          ds.resize(lq, lk);
          for (int64_t i = 0; i < lq; ++i) {
            Real dot = 0;
            for (int64_t j = 0; j < lk; ++j) dot += dp(i, j) * p(i, j);
            for (int64_t j = 0; j < lk; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * scale;
          }
          if (gq)
            StridedMap<Real>(gq + qo * d + h * dh, lq, dh, Eigen::OuterStride<>(d)).noalias() +=
                ds * kh;
          if (gk)
            StridedMap<Real>(gk + ko * d + h * dh, lk, dh, Eigen::OuterStride<>(d)).noalias() +=
                ds.transpose() * qh;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses

template <typename Real>
std::vector<Real> LogSoftmaxRows(const Tensor<Real> &logits) {
  CheckMatrix(logits, "log_softmax");
  const int64_t rows = logits.rows(), n = logits.cols();
  std::vector<Real> out(logits.numel());
  auto x = logits.data();
  for (int64_t r = 0; r < rows; ++r) {
    const Real *xr = x.data() + r * n;
    Real mx = *std::max_element(xr, xr + n);
    Real s = 0;
    for (int64_t i = 0; i < n; ++i) s += std::exp(xr[i] - mx);
    Real lse = mx + std::log(s);
    for (int64_t i = 0; i < n; ++i) out[r * n + i] = xr[i] - lse;
  }
  return out;
}

template <typename Real>
Tensor<Real> WeightedCrossEntropy(const Tensor<Real> &logits,
                                  const std::vector<int32_t> &targets,
                                  const std::vector<double> &weights) {
  CheckMatrix(logits, "cross_entropy");
  const int64_t rows = logits.rows(), n = logits.cols();
  if (static_cast<int64_t>(targets.size()) != rows ||
      static_cast<int64_t>(weights.size()) != rows)
    throw TensorError("cross_entropy: " + std::to_string(targets.size()) + " targets / " +
                      std::to_string(weights.size()) + " weights for logits " +
                      ShapeToString(logits.shape()));
  auto x = logits.data();
  std::vector<Real> probs(logits.numel(), Real(0));
  double loss = 0;
  for (int64_t r = 0; r < rows; ++r) {
    if (weights[r] == 0.0) continue;
    if (targets[r] < 0 || targets[r] >= n)
      throw TensorError("cross_entropy: target " + std::to_string(targets[r]) +
                        " outside vocabulary of " + std::to_string(n));
    const Real *xr = x.data() + r * n;
    Real *pr = probs.data() + r * n;
    Real mx = *std::max_element(xr, xr + n);
    Real s = 0;
    for (int64_t i = 0; i < n; ++i) s += (pr[i] = std::exp(xr[i] - mx));
    for (int64_t i = 0; i < n; ++i) pr[i] /= s;
    loss += weights[r] * static_cast<double>(mx + std::log(s) - xr[targets[r]]);
  }
  Tensor<Real> out = Tensor<Real>::Scalar(static_cast<Real>(loss));
  if (Tracking({&logits})) {
    Storage<Real> *o = out.storage().get();
    Record(out, [logits, o, targets, weights, probs = std::move(probs), rows, n]() {
      Real *gl = GradOf(logits);
      const Real g = o->grad[0];
      for (int64_t r = 0; r < rows; ++r) {
        if (weights[r] == 0.0) continue;
        const Real w = g * static_cast<Real>(weights[r]);
        for (int64_t i = 0; i < n; ++i) gl[r * n + i] += w * probs[r * n + i];
        gl[r * n + targets[r]] -= w;
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> CrossEntropyRows(const Tensor<Real> &logits, const std::vector<int32_t> &targets,
                              const std::vector<uint8_t> &ignore) {
  if (ignore.size() != targets.size())
    throw TensorError("cross_entropy: ignore mask length differs from targets");
  int64_t count = 0;
  for (uint8_t ig : ignore) count += ig ? 0 : 1;
  if (count == 0) throw TensorError("cross_entropy: every position is ignored (empty loss)");
  std::vector<double> w(targets.size());
  for (size_t i = 0; i < w.size(); ++i) w[i] = ignore[i] ? 0.0 : 1.0 / double(count);
  return WeightedCrossEntropy(logits, targets, w);
}

template <typename Real>
Tensor<Real> WeightedSoftCrossEntropy(const Tensor<Real> &logits,
                                      const Tensor<Real> &soft_targets,
                                      const std::vector<double> &weights) {
  CheckMatrix(logits, "soft_cross_entropy");
  CheckSameShape(logits, soft_targets, "soft_cross_entropy");
  const int64_t rows = logits.rows(), n = logits.cols();
  if (static_cast<int64_t>(weights.size()) != rows)
    throw TensorError("soft_cross_entropy: weight count differs from rows");
  const double tol = sizeof(Real) >= 8 ? 1e-6 : 1e-4;
  auto x = logits.data();
  auto q = soft_targets.data();
  std::vector<Real> probs(logits.numel(), Real(0));
  std::vector<Real> qsum(rows, Real(0));
  double loss = 0;
  for (int64_t r = 0; r < rows; ++r) {
    if (weights[r] == 0.0) continue;
    const Real *xr = x.data() + r * n;
    const Real *qr = q.data() + r * n;
    Real *pr = probs.data() + r * n;
    double s_q = 0;
    for (int64_t i = 0; i < n; ++i) {
      if (qr[i] < Real(0)) throw TensorError("soft_cross_entropy: negative soft target");
      s_q += qr[i];
    }
    if (std::abs(s_q - 1.0) > tol)
      throw TensorError("soft_cross_entropy: soft-target row sums to " + std::to_string(s_q));
    qsum[r] = static_cast<Real>(s_q);
    Real mx = *std::max_element(xr, xr + n);
    Real s = 0;
    for (int64_t i = 0; i < n; ++i) s += (pr[i] = std::exp(xr[i] - mx));
    Real lse = mx + std::log(s);
    for (int64_t i = 0; i < n; ++i) pr[i] /= s;
    double row = 0;
    for (int64_t i = 0; i < n; ++i)
      if (qr[i] != Real(0)) row += static_cast<double>(qr[i]) * (lse - xr[i]);
    loss += weights[r] * row;
  }
  Tensor<Real> out = Tensor<Real>::Scalar(static_cast<Real>(loss));
  if (Tracking({&logits})) {
    Storage<Real> *o = out.storage().get();
    // Soft targets are captured by value: no gradient path exists into them.
    std::vector<Real> qv(q.begin(), q.end());
    Record(out, [logits, o, weights, probs = std::move(probs), qsum = std::move(qsum),
                 qv = std::move(qv), rows, n]() {
      Real *gl = GradOf(logits);
      const Real g = o->grad[0];
      for (int64_t r = 0; r < rows; ++r) {
        if (weights[r] == 0.0) continue;
        const Real w = g * static_cast<Real>(weights[r]);
        for (int64_t i = 0; i < n; ++i)
          gl[r * n + i] += w * (probs[r * n + i] * qsum[r] - qv[r * n + i]);
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> SoftCrossEntropyRows(const Tensor<Real> &logits, const Tensor<Real> &soft_targets) {
  CheckMatrix(logits, "soft_cross_entropy");
  if (logits.rows() == 0) throw TensorError("soft_cross_entropy: no rows");
  std::vector<double> w(logits.rows(), 1.0 / double(logits.rows()));
  return WeightedSoftCrossEntropy(logits, soft_targets, w);
}

template <typename Real>
Tensor<Real> WeightedMse(const Tensor<Real> &a, const Tensor<Real> &b,
                         const std::vector<double> &row_weights) {
  CheckSameShape(a, b, "mse");
  CheckMatrix(a, "mse");
  const int64_t rows = a.rows(), n = a.cols();
  if (static_cast<int64_t>(row_weights.size()) != rows)
    throw TensorError("mse: weight count differs from rows");
  auto x = a.data(), y = b.data();
  double loss = 0;
  for (int64_t r = 0; r < rows; ++r) {
    double row = 0;
    for (int64_t i = 0; i < n; ++i) {
      double diff = static_cast<double>(x[r * n + i]) - static_cast<double>(y[r * n + i]);
      row += diff * diff;
    }
    loss += row_weights[r] * row;
  }
  Tensor<Real> out = Tensor<Real>::Scalar(static_cast<Real>(loss));
  if (Tracking({&a, &b})) {
    Storage<Real> *o = out.storage().get();
    Record(out, [a, b, o, row_weights, rows, n]() {
      Real *ga = GradOf(a);
      Real *gb = GradOf(b);
      auto x = a.data(), y = b.data();
      for (int64_t r = 0; r < rows; ++r) {
        const Real w = Real(2) * o->grad[0] * static_cast<Real>(row_weights[r]);
        for (int64_t i = 0; i < n; ++i) {
          Real g = w * (x[r * n + i] - y[r * n + i]);
          if (ga) ga[r * n + i] += g;
          if (gb) gb[r * n + i] -= g;
        }
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> Mse(const Tensor<Real> &a, const Tensor<Real> &b) {
  CheckSameShape(a, b, "mse");
  if (a.numel() == 0) throw TensorError("mse: reduction over empty tensor");
  Tensor<Real> d = Sub(a, b);
  return Mean(Mul(d, d));
}

#define COMSL_INSTANTIATE_OPS(Real)                                                              \
  template Tensor<Real> MatMul(const Tensor<Real> &, const Tensor<Real> &);                      \
  template Tensor<Real> MatMulNT(const Tensor<Real> &, const Tensor<Real> &);                    \
  template Tensor<Real> Transpose(const Tensor<Real> &);                                         \
  template Tensor<Real> Linear(const Tensor<Real> &, const Tensor<Real> &, const Tensor<Real> &); \
  template Tensor<Real> Add(const Tensor<Real> &, const Tensor<Real> &);                         \
  template Tensor<Real> Sub(const Tensor<Real> &, const Tensor<Real> &);                         \
  template Tensor<Real> Mul(const Tensor<Real> &, const Tensor<Real> &);                         \
  template Tensor<Real> Scale(const Tensor<Real> &, Real);                                       \
  template Tensor<Real> AddRowVector(const Tensor<Real> &, const Tensor<Real> &);                \
  template Tensor<Real> Gelu(const Tensor<Real> &);                                              \
  template Tensor<Real> MaskedFill(const Tensor<Real> &, const std::vector<uint8_t> &, Real);    \
  template Tensor<Real> Detach(const Tensor<Real> &);                                            \
  template Tensor<Real> Sum(const Tensor<Real> &);                                               \
  template Tensor<Real> Mean(const Tensor<Real> &);                                              \
  template Tensor<Real> Embedding(const Tensor<Real> &, const std::vector<int32_t> &);           \
  template Tensor<Real> GatherRows(const Tensor<Real> &, const std::vector<int64_t> &);          \
  template Tensor<Real> ConcatSeq(const Tensor<Real> &, const Tensor<Real> &);                   \
  template std::pair<Tensor<Real>, Tensor<Real>> SplitSeq(const Tensor<Real> &, int64_t);        \
  template Tensor<Real> Dropout(const Tensor<Real> &, double, Rng *);                            \
  template Tensor<Real> SoftmaxLast(const Tensor<Real> &);                                       \
  template Tensor<Real> LayerNorm(const Tensor<Real> &, const Tensor<Real> &,                    \
                                  const Tensor<Real> &, double);                                 \
  template Tensor<Real> Conv1dStride2(const Tensor<Real> &, const Tensor<Real> &,                \
                                      const Tensor<Real> &, const std::vector<int64_t> &);       \
  template Tensor<Real> Conv1dStride2(const Tensor<Real> &, const Tensor<Real> &,                \
                                      const Tensor<Real> &);                                     \
  template Tensor<Real> MultiHeadAttention(const Tensor<Real> &, const Tensor<Real> &,           \
                                           const Tensor<Real> &, int, const AttentionLayout &);  \
  template Tensor<Real> CrossEntropyRows(const Tensor<Real> &, const std::vector<int32_t> &,     \
                                         const std::vector<uint8_t> &);                          \
  template Tensor<Real> WeightedCrossEntropy(const Tensor<Real> &, const std::vector<int32_t> &, \
                                             const std::vector<double> &);                       \
  template Tensor<Real> SoftCrossEntropyRows(const Tensor<Real> &, const Tensor<Real> &);        \
  template Tensor<Real> WeightedSoftCrossEntropy(const Tensor<Real> &, const Tensor<Real> &,     \
                                                 const std::vector<double> &);                   \
  template Tensor<Real> Mse(const Tensor<Real> &, const Tensor<Real> &);                         \
  template Tensor<Real> WeightedMse(const Tensor<Real> &, const Tensor<Real> &,                  \
                                    const std::vector<double> &);                                \
  template std::vector<Real> LogSoftmaxRows(const Tensor<Real> &);

COMSL_INSTANTIATE_OPS(float)
COMSL_INSTANTIATE_OPS(double)

}  // namespace comsl
