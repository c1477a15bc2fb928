// comsl/objectives.h

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

// Training losses.  Every token-level loss is a mean over the scored tokens
// of each example followed by a mean over examples, expressed through
// per-row weights so that padding never contributes and duplicating a batch
// leaves the value unchanged.

#ifndef COMSL_OBJECTIVES_H_
#define COMSL_OBJECTIVES_H_

#include <cstdint>
#include <string>
#include <vector>

#include "comsl/config.h"
#include "comsl/tensor.h"

namespace comsl {

/// Teacher-forcing layout.  Sequence i becomes the prefix
/// [task, lang_i, t_1 .. t_n]; logit row 0 is unscored and rows 1..n predict
/// t_1 .. t_n, EOS.
struct DecoderBatch {
  std::vector<int32_t> prefixes;
  std::vector<int64_t> prefix_lengths;
  std::vector<int32_t> targets;  // one per logit row (PAD on unscored rows)
  std::vector<double> weights;   // 1 / (B * (n_i + 1)) on scored rows, else 0
  int64_t rows() const { return static_cast<int64_t>(targets.size()); }
};

DecoderBatch MakeDecoderBatch(const std::vector<std::vector<int32_t>> &sequences,
                              const std::vector<int32_t> &lang_tags, int32_t task_tag);

/// Mean NLL (ASR, STM heads, plain ST/MT).  Rejects a batch with nothing to score.
template <typename Real>
Tensor<Real> LossNll(const Tensor<Real> &logits, const std::vector<int32_t> &targets,
                     const std::vector<double> &weights);
template <typename Real>
Tensor<Real> LossAsr(const Tensor<Real> &logits, const DecoderBatch &batch);

/// (1 - lambda) * CE(target) + lambda * softCE(softmax(teacher)); the teacher
/// logits are read as constants.
template <typename Real>
Tensor<Real> LossDistill(const Tensor<Real> &student, const Tensor<Real> &teacher,
                         const std::vector<int32_t> &targets, const std::vector<double> &weights,
                         double lambda);
template <typename Real>
Tensor<Real> LossStDdm(const Tensor<Real> &student, const Tensor<Real> &teacher,
                       const DecoderBatch &batch, double lambda_s);
/// `frozen` may be an empty tensor when lambda_t == 0.
template <typename Real>
Tensor<Real> LossMtReg(const Tensor<Real> &student, const Tensor<Real> &frozen,
                       const DecoderBatch &batch, double lambda_t);

/// NLL over masked positions only (per example mean, then mean over examples
/// with at least one mask).  Exactly 0 when nothing is masked.  `batch` must
/// be the teacher-forcing layout of the unmasked transcripts.
template <typename Real>
Tensor<Real> LossMtp(const Tensor<Real> &logits, const DecoderBatch &batch,
                     const std::vector<std::vector<int32_t>> &mask_positions);

template <typename Real> struct StmLosses {
  Tensor<Real> src, tgt;
};
template <typename Real>
StmLosses<Real> LossStm(const Tensor<Real> &logits_x, const DecoderBatch &batch_x,
                        const Tensor<Real> &logits_y, const DecoderBatch &batch_y);

/// Mean squared difference (per example element mean, then mean over
/// examples); gradient flows into speech_only only.
template <typename Real>
Tensor<Real> LossErm(const Tensor<Real> &concat_trace, const Tensor<Real> &speech_only_trace,
                     const std::vector<int64_t> &lengths);

template <typename Real>
Tensor<Real> LossCml(const Tensor<Real> &stm_src, const Tensor<Real> &stm_tgt,
                     const Tensor<Real> &mtp, const Tensor<Real> &erm, double w_erm);
double CmlValue(double stm_src, double stm_tgt, double mtp, double erm, double w_erm);

struct LossReport {
  double asr = 0, st = 0, mt = 0, mtp = 0, stm_src = 0, stm_tgt = 0, erm = 0, cml = 0, total = 0;
  std::string ToString() const;
};

/// Weighted sum; empty tensors stand for disabled components and count as 0.
template <typename Real>
Tensor<Real> LossTotal(const Tensor<Real> &asr, const Tensor<Real> &st, const Tensor<Real> &mt,
                       const Tensor<Real> &cml, const LossWeights &w);
/// Recomputes cml and total from the other components.
double RecomposeTotal(const LossReport &r, const LossWeights &w);

}  // namespace comsl

#endif  // COMSL_OBJECTIVES_H_
