// comsl/ops.h

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

// Differentiable primitives.  Every function computes its forward value
// immediately and, when an input requires grad and a tape is active, records
// a backward rule on the active tape.
//
// Sequence-valued tensors are rank-2 [rows x features].  Batches are packed:
// the rows of several sequences are stacked without padding and a vector of
// segment lengths says where each sequence starts.

#ifndef COMSL_OPS_H_
#define COMSL_OPS_H_

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "comsl/tensor.h"

namespace comsl {

using Rng = std::mt19937_64;

// Linear algebra.
template <typename Real> Tensor<Real> MatMul(const Tensor<Real> &a, const Tensor<Real> &b);
/// a * b^T.
template <typename Real> Tensor<Real> MatMulNT(const Tensor<Real> &a, const Tensor<Real> &b);
template <typename Real> Tensor<Real> Transpose(const Tensor<Real> &a);
/// x * w + b, with b broadcast over rows.
template <typename Real>
Tensor<Real> Linear(const Tensor<Real> &x, const Tensor<Real> &w, const Tensor<Real> &b);

// Elementwise.
template <typename Real> Tensor<Real> Add(const Tensor<Real> &a, const Tensor<Real> &b);
template <typename Real> Tensor<Real> Sub(const Tensor<Real> &a, const Tensor<Real> &b);
template <typename Real> Tensor<Real> Mul(const Tensor<Real> &a, const Tensor<Real> &b);
template <typename Real> Tensor<Real> Scale(const Tensor<Real> &a, Real s);
/// a [n x m] + v [m] broadcast over rows.
template <typename Real> Tensor<Real> AddRowVector(const Tensor<Real> &a, const Tensor<Real> &v);
/// Exact (erf) GELU.
template <typename Real> Tensor<Real> Gelu(const Tensor<Real> &a);
/// Positions where mask[i] != 0 are replaced by `value` (gradient 0 there).
template <typename Real>
Tensor<Real> MaskedFill(const Tensor<Real> &a, const std::vector<uint8_t> &mask, Real value);
/// Stop-gradient: same values, never recorded.
template <typename Real> Tensor<Real> Detach(const Tensor<Real> &a);

// Reductions.
template <typename Real> Tensor<Real> Sum(const Tensor<Real> &a);
template <typename Real> Tensor<Real> Mean(const Tensor<Real> &a);

// Row gathering / sequence plumbing.
template <typename Real>
Tensor<Real> Embedding(const Tensor<Real> &table, const std::vector<int32_t> &ids);
/// out[i] = a[idx[i]]; backward scatter-adds.
template <typename Real>
Tensor<Real> GatherRows(const Tensor<Real> &a, const std::vector<int64_t> &idx);
template <typename Real> Tensor<Real> ConcatSeq(const Tensor<Real> &a, const Tensor<Real> &b);
template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> SplitSeq(const Tensor<Real> &t, int64_t first_rows);

/// Inverted dropout.  A null rng or p == 0 is the identity.
template <typename Real> Tensor<Real> Dropout(const Tensor<Real> &a, double p, Rng *rng);
/// Number of dropout masks drawn so far on this thread (used by GradCheck to
/// reject stochastic functions).
uint64_t DropoutDraws();

// Normalization.
template <typename Real> Tensor<Real> SoftmaxLast(const Tensor<Real> &a);
template <typename Real>
Tensor<Real> LayerNorm(const Tensor<Real> &a, const Tensor<Real> &gain, const Tensor<Real> &bias,
                       double eps = 1e-5);

/// Width-3, stride-2 convolution over each segment with one row of zero
/// padding at both ends; a segment of length L yields ceil(L/2) rows.
/// kernel is [3 x d_in x d_out], bias is [d_out].
template <typename Real>
Tensor<Real> Conv1dStride2(const Tensor<Real> &seq, const Tensor<Real> &kernel,
                           const Tensor<Real> &bias, const std::vector<int64_t> &segments);
template <typename Real>
Tensor<Real> Conv1dStride2(const Tensor<Real> &seq, const Tensor<Real> &kernel,
                           const Tensor<Real> &bias);

/// How queries of a packed batch see keys.  Query segment i occupies rows
/// [q_offsets[i], q_offsets[i] + q_lengths[i]) and attends to key rows
/// [k_offsets[i], k_offsets[i] + k_lengths[i]).  Several query segments may
/// share one key segment (beam search over a single memory).
struct AttentionLayout {
  std::vector<int64_t> q_offsets, q_lengths, k_offsets, k_lengths;
  bool causal = false;
  /// Optional: when non-empty, query row r may only see key row c if
  /// q_groups[r] == k_groups[c] (rows are global packed indices).
  std::vector<int32_t> q_groups, k_groups;

  static AttentionLayout Self(const std::vector<int64_t> &lengths, bool causal);
  static AttentionLayout Cross(const std::vector<int64_t> &q_lengths,
                               const std::vector<int64_t> &k_lengths);
};

/// Scaled dot-product multi-head attention; q, k, v are already projected.
template <typename Real>
Tensor<Real> MultiHeadAttention(const Tensor<Real> &q, const Tensor<Real> &k,
                                const Tensor<Real> &v, int n_heads,
                                const AttentionLayout &layout);

// Losses.  All return scalars.
/// Mean NLL over rows whose ignore flag is 0.
template <typename Real>
Tensor<Real> CrossEntropyRows(const Tensor<Real> &logits, const std::vector<int32_t> &targets,
                              const std::vector<uint8_t> &ignore);
/// sum_i w_i * NLL_i.  Rows with w_i == 0 are skipped entirely.
template <typename Real>
Tensor<Real> WeightedCrossEntropy(const Tensor<Real> &logits,
                                  const std::vector<int32_t> &targets,
                                  const std::vector<double> &weights);
/// Mean over rows of -sum_v q_v log p_v.  Soft targets never receive gradient.
template <typename Real>
Tensor<Real> SoftCrossEntropyRows(const Tensor<Real> &logits, const Tensor<Real> &soft_targets);
template <typename Real>
Tensor<Real> WeightedSoftCrossEntropy(const Tensor<Real> &logits,
                                      const Tensor<Real> &soft_targets,
                                      const std::vector<double> &weights);
template <typename Real> Tensor<Real> Mse(const Tensor<Real> &a, const Tensor<Real> &b);
/// sum_i w_i * sum_j (a_ij - b_ij)^2.
template <typename Real>
Tensor<Real> WeightedMse(const Tensor<Real> &a, const Tensor<Real> &b,
                         const std::vector<double> &row_weights);

/// Row-wise log-softmax values (no tape), for teachers and decoding.
template <typename Real>
std::vector<Real> LogSoftmaxRows(const Tensor<Real> &logits);

}  // namespace comsl

#endif  // COMSL_OPS_H_
