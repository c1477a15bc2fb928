// src/objectives.cc

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

#include "comsl/objectives.h"

#include <cmath>
#include <sstream>

#include "comsl/corpus.h"
#include "comsl/ops.h"

namespace comsl {

DecoderBatch MakeDecoderBatch(const std::vector<std::vector<int32_t>> &sequences,
                              const std::vector<int32_t> &lang_tags, int32_t task_tag) {
  if (sequences.size() != lang_tags.size())
    throw TensorError("decoder batch: sequence and language counts differ");
  DecoderBatch b;
  const double n_seq = static_cast<double>(sequences.size());
  for (size_t i = 0; i < sequences.size(); ++i) {
    const auto &s = sequences[i];
    b.prefixes.push_back(task_tag);
    b.prefixes.push_back(lang_tags[i]);
    b.prefixes.insert(b.prefixes.end(), s.begin(), s.end());
    b.prefix_lengths.push_back(static_cast<int64_t>(s.size()) + 2);
    b.targets.push_back(Vocab::kPad);
    b.weights.push_back(0.0);
    const double w = 1.0 / (n_seq * static_cast<double>(s.size() + 1));
    for (size_t j = 0; j <= s.size(); ++j) {
      b.targets.push_back(j < s.size() ? s[j] : Vocab::kEos);
      b.weights.push_back(w);
    }
  }
  return b;
}

template <typename Real>
Tensor<Real> LossNll(const Tensor<Real> &logits, const std::vector<int32_t> &targets,
                     const std::vector<double> &weights) {
  bool any = false;
  for (double w : weights) any = any || w > 0;
  if (!any) throw TensorError("loss: empty target");
  return WeightedCrossEntropy(logits, targets, weights);
}

template <typename Real>
Tensor<Real> LossAsr(const Tensor<Real> &logits, const DecoderBatch &batch) {
  return LossNll(logits, batch.targets, batch.weights);
}

template <typename Real>
Tensor<Real> LossDistill(const Tensor<Real> &student, const Tensor<Real> &teacher,
                         const std::vector<int32_t> &targets, const std::vector<double> &weights,
                         double lambda) {
  if (lambda < 0 || lambda > 1) throw TensorError("distill: lambda outside [0,1]");
  if (lambda == 0.0) return LossNll(student, targets, weights);
  if (teacher.shape() != student.shape())
    throw TensorError("distill: teacher " + ShapeToString(teacher.shape()) + " vs student " +
                      ShapeToString(student.shape()));
  const int64_t n = student.rows(), v = student.cols();
  if (static_cast<int64_t>(targets.size()) != n) throw TensorError("distill: target count mismatch");
  std::vector<Real> logp = LogSoftmaxRows(teacher);
  Tensor<Real> soft({n, v});
  auto q = soft.mutable_data();
  for (int64_t r = 0; r < n; ++r) {
    if (targets[r] < 0 || targets[r] >= v) throw TensorError("distill: target out of range");
    for (int64_t c = 0; c < v; ++c)
      q[r * v + c] = static_cast<Real>(lambda * std::exp(static_cast<double>(logp[r * v + c])));
    q[r * v + targets[r]] += static_cast<Real>(1.0 - lambda);
  }
  bool any = false;
  for (double w : weights) any = any || w > 0;
  if (!any) throw TensorError("loss: empty target");
  return WeightedSoftCrossEntropy(student, soft, weights);
}

template <typename Real>
Tensor<Real> LossStDdm(const Tensor<Real> &student, const Tensor<Real> &teacher,
                       const DecoderBatch &batch, double lambda_s) {
  return LossDistill(student, teacher, batch.targets, batch.weights, lambda_s);
}

template <typename Real>
Tensor<Real> LossMtReg(const Tensor<Real> &student, const Tensor<Real> &frozen,
                       const DecoderBatch &batch, double lambda_t) {
  if (lambda_t > 0 && frozen.numel() == 0)
    throw TensorError("mt regularization: frozen teacher missing");
  return LossDistill(student, frozen, batch.targets, batch.weights, lambda_t);
}

template <typename Real>
Tensor<Real> LossMtp(const Tensor<Real> &logits, const DecoderBatch &batch,
                     const std::vector<std::vector<int32_t>> &mask_positions) {
  if (mask_positions.size() != batch.prefix_lengths.size())
    throw TensorError("mtp: mask sets do not match the batch");
  int64_t with_masks = 0;
  for (const auto &m : mask_positions) with_masks += m.empty() ? 0 : 1;
  if (with_masks == 0) return Tensor<Real>::Scalar(Real(0));
  std::vector<double> weights(batch.targets.size(), 0.0);
  int64_t offset = 0;
  for (size_t i = 0; i < mask_positions.size(); ++i) {
    const int64_t n = batch.prefix_lengths[i] - 2;
    for (int32_t p : mask_positions[i]) {
      if (p < 0 || p >= n) throw TensorError("mtp: mask position out of range");
      weights[offset + 1 + p] =
          1.0 / (static_cast<double>(with_masks) * static_cast<double>(mask_positions[i].size()));
    }
    offset += batch.prefix_lengths[i];
  }
  return WeightedCrossEntropy(logits, batch.targets, weights);
}

template <typename Real>
StmLosses<Real> LossStm(const Tensor<Real> &logits_x, const DecoderBatch &batch_x,
                        const Tensor<Real> &logits_y, const DecoderBatch &batch_y) {
  return {LossAsr(logits_x, batch_x), LossAsr(logits_y, batch_y)};
}

template <typename Real>
Tensor<Real> LossErm(const Tensor<Real> &concat_trace, const Tensor<Real> &speech_only_trace,
                     const std::vector<int64_t> &lengths) {
  if (concat_trace.shape() != speech_only_trace.shape())
    throw TensorError("erm: trace shapes differ " + ShapeToString(concat_trace.shape()) + " vs " +
                      ShapeToString(speech_only_trace.shape()));
  std::vector<double> w;
  const double d = static_cast<double>(speech_only_trace.cols());
  for (int64_t len : lengths)
    for (int64_t r = 0; r < len; ++r)
      w.push_back(1.0 / (static_cast<double>(lengths.size()) * static_cast<double>(len) * d));
  if (static_cast<int64_t>(w.size()) != speech_only_trace.rows())
    throw TensorError("erm: lengths do not cover the trace rows");
  return WeightedMse(speech_only_trace, Detach(concat_trace), w);
}

template <typename Real>
Tensor<Real> LossCml(const Tensor<Real> &stm_src, const Tensor<Real> &stm_tgt,
                     const Tensor<Real> &mtp, const Tensor<Real> &erm, double w_erm) {
  for (const Tensor<Real> *t : {&stm_src, &stm_tgt, &mtp, &erm})
    if (!std::isfinite(static_cast<double>(t->item()))) throw TensorError("cml: non-finite component");
  Tensor<Real> dec = Scale(Add(Add(stm_src, stm_tgt), mtp), static_cast<Real>(1.0 / 3.0));
  return Add(dec, Scale(erm, static_cast<Real>(w_erm)));
}

double CmlValue(double stm_src, double stm_tgt, double mtp, double erm, double w_erm) {
  return (stm_src + stm_tgt + mtp) / 3.0 + w_erm * erm;
}

template <typename Real>
Tensor<Real> LossTotal(const Tensor<Real> &asr, const Tensor<Real> &st, const Tensor<Real> &mt,
                       const Tensor<Real> &cml, const LossWeights &w) {
  auto errs = w.Validate();
  if (!errs.empty()) throw ConfigError(errs.front());
  Tensor<Real> total = Tensor<Real>::Scalar(Real(0));
  const std::pair<const Tensor<Real> *, double> terms[] = {
      {&asr, w.w_asr}, {&st, w.w_st}, {&mt, w.w_mt}, {&cml, w.w_cml}};
  for (const auto &[t, weight] : terms)
    if (t->numel() > 0 && weight != 0.0) total = Add(total, Scale(*t, static_cast<Real>(weight)));
  return total;
}

double RecomposeTotal(const LossReport &r, const LossWeights &w) {
  const double cml = CmlValue(r.stm_src, r.stm_tgt, r.mtp, r.erm, w.w_erm);
  return w.w_asr * r.asr + w.w_st * r.st + w.w_mt * r.mt + w.w_cml * cml;
}

std::string LossReport::ToString() const {
  std::ostringstream os;
  os.precision(6);
  os << "total=" << total << " asr=" << asr << " st=" << st << " mt=" << mt << " mtp=" << mtp
     << " stm_src=" << stm_src << " stm_tgt=" << stm_tgt << " erm=" << erm << " cml=" << cml;
  return os.str();
}

#define COMSL_INSTANTIATE_OBJECTIVES(Real)                                                       \
  template Tensor<Real> LossNll(const Tensor<Real> &, const std::vector<int32_t> &,              \
                                const std::vector<double> &);                                    \
  template Tensor<Real> LossAsr(const Tensor<Real> &, const DecoderBatch &);                     \
  template Tensor<Real> LossDistill(const Tensor<Real> &, const Tensor<Real> &,                  \
                                    const std::vector<int32_t> &, const std::vector<double> &,   \
                                    double);                                                     \
  template Tensor<Real> LossStDdm(const Tensor<Real> &, const Tensor<Real> &,                    \
                                  const DecoderBatch &, double);                                 \
  template Tensor<Real> LossMtReg(const Tensor<Real> &, const Tensor<Real> &,                    \
                                  const DecoderBatch &, double);                                 \
  template Tensor<Real> LossMtp(const Tensor<Real> &, const DecoderBatch &,                      \
                                const std::vector<std::vector<int32_t>> &);                      \
  template StmLosses<Real> LossStm(const Tensor<Real> &, const DecoderBatch &,                   \
                                   const Tensor<Real> &, const DecoderBatch &);                  \
  template Tensor<Real> LossErm(const Tensor<Real> &, const Tensor<Real> &,                      \
                                const std::vector<int64_t> &);                                   \
  template Tensor<Real> LossCml(const Tensor<Real> &, const Tensor<Real> &, const Tensor<Real> &, \
                                const Tensor<Real> &, double);                                   \
  template Tensor<Real> LossTotal(const Tensor<Real> &, const Tensor<Real> &,                    \
                                  const Tensor<Real> &, const Tensor<Real> &, const LossWeights &);

COMSL_INSTANTIATE_OBJECTIVES(float)
COMSL_INSTANTIATE_OBJECTIVES(double)

}  // namespace comsl
