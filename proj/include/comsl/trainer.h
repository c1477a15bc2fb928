// comsl/trainer.h

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

// Multi-task training: text-only pre-finetuning, the per-step forward over
// all enabled tasks, AdamW with decoupled weight decay, the warmup/decay
// schedule, speech-encoder freezing and checkpoints.

#ifndef COMSL_TRAINER_H_
#define COMSL_TRAINER_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "comsl/config.h"
#include "comsl/corpus.h"
#include "comsl/model.h"
#include "comsl/objectives.h"

namespace comsl {

class TrainError : public std::runtime_error {
 public:
  explicit TrainError(const std::string &msg) : std::runtime_error(msg) {}
};

/// Learning rate at step s: linear warmup from 0 to peak over `warmup`
/// steps, then linear decay to 0 at `total`.
double LearningRate(int64_t s, double peak, int64_t warmup, int64_t total);
/// Number of leading steps during which the speech group is frozen.
int64_t FreezeSteps(double freeze_fraction, int64_t total_steps);

/// Per-language stratified split; every language with >= 2 examples keeps at
/// least one example on each side.
void SplitCorpus(const std::vector<TripletExample> &corpus, double valid_fraction, uint64_t seed,
                 std::vector<TripletExample> *train, std::vector<TripletExample> *valid);

template <typename Real> struct StepOutput {
  Tensor<Real> total;
  LossReport report;
};

/// One forward of every task whose weight is nonzero.  `frozen` is the
/// pre-finetuned teacher (may be null when lambda_t == 0 or w_mt == 0).
template <typename Real>
StepOutput<Real> ForwardLosses(ComSLModel<Real> &model, ComSLModel<Real> *frozen,
                               const Batch &batch, const Vocab &vocab, const LossWeights &w);

/// Decoupled-weight-decay Adam.  Each parameter keeps its own step count so
/// frozen parameters resume with correct bias correction.
template <typename Real> class AdamW {
 public:
  AdamW() = default;
  AdamW(const std::vector<NamedParam<Real>> &params, double beta1, double beta2, double eps,
        double weight_decay);

  /// Updates every parameter whose `update` flag is set, using its gradient
  /// (missing gradient = zero).  Weight decay applies to matrices only.
  void Step(std::vector<NamedParam<Real>> &params, const std::vector<bool> &update, double lr);

  std::vector<std::vector<Real>> &m() { return m_; }
  std::vector<std::vector<Real>> &v() { return v_; }
  std::vector<int64_t> &steps() { return steps_; }
  const std::vector<std::vector<Real>> &m() const { return m_; }
  const std::vector<std::vector<Real>> &v() const { return v_; }
  const std::vector<int64_t> &steps() const { return steps_; }

 private:
  double beta1_ = 0.9, beta2_ = 0.98, eps_ = 1e-8, weight_decay_ = 0.0;
  std::vector<std::vector<Real>> m_, v_;
  std::vector<int64_t> steps_;
};

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename Real>
double ClipGradients(std::vector<NamedParam<Real>> &params, const std::vector<bool> &update,
                     double max_norm);

/// Order-sensitive FNV-1a digest of parameter names and bytes.
template <typename Real> uint64_t ParamChecksum(const std::vector<NamedParam<Real>> &params);

struct StepRecord {
  int64_t step = 0;
  double lr = 0;
  LossReport report;
  bool frozen = false;
  double bleu = -1;  // validation BLEU when evaluated at this step, else -1
};

using Model = ComSLModel<float>;

/// Training state of one run: live model, frozen teacher, optimizer, step.
class Trainer {
 public:
  Trainer(const RunConfig &cfg, std::unique_ptr<Model> model, std::unique_ptr<Model> teacher);

  Model &model() { return *model_; }
  Model *teacher() { return teacher_.get(); }
  AdamW<float> &optimizer() { return adam_; }
  int64_t step() const { return step_; }
  const RunConfig &config() const { return cfg_; }
  const Vocab &vocab() const { return vocab_; }

  /// Forward, backward, clipping and one optimizer update (speech group held
  /// fixed inside the freeze window).  Throws TrainError with the full report
  /// when the loss is not finite.
  StepRecord TrainStep(const Batch &batch);

  void Save(const std::filesystem::path &path) const;
  /// Restores config, model, teacher, optimizer and step counter.
  static std::unique_ptr<Trainer> Load(const std::filesystem::path &path);

 private:
  RunConfig cfg_;
  Vocab vocab_;
  std::unique_ptr<Model> model_, teacher_;
  AdamW<float> adam_;
  int64_t step_ = 0;
};

/// The run configuration echoed into a checkpoint.
RunConfig CheckpointConfig(const std::filesystem::path &path);
/// Loads only the live model of a checkpoint.
std::unique_ptr<Model> LoadModel(const std::filesystem::path &path);

/// Trains text-side parameters only on x -> y with plain cross-entropy and
/// returns a frozen deep copy (no parameter requires grad).
std::unique_ptr<Model> PretrainMt(Model &model, const std::vector<TripletExample> &train,
                                  const RunConfig &cfg,
                                  const std::function<void(int64_t, double)> &on_step = {});

/// Which examples form the batch of a given step: epoch e visits a
/// permutation seeded by (seed, e), so any step can be reproduced without
/// replaying earlier ones.
class BatchSchedule {
 public:
  BatchSchedule(size_t n_examples, int batch_size, uint64_t seed);
  /// step is 1-based.
  std::vector<size_t> Indices(int64_t step);

 private:
  size_t n_;
  int batch_size_;
  uint64_t seed_;
  int64_t cached_epoch_ = -1;
  std::vector<size_t> order_;
};

struct FitResult {
  std::filesystem::path best_checkpoint;
  double best_bleu = -1;
  int64_t best_step = -1;
  std::vector<StepRecord> log;  // validation rows have bleu >= 0
  double seconds = 0;
};

/// Validation ST BLEU (beam search over the speech-only path).  limit > 0
/// scores an evenly strided subset of that many examples.
double ValidationBleu(Model &model, const std::vector<TripletExample> &valid, const Vocab &vocab,
                      int beam, int limit);

/// Runs train_steps of TrainStep with validation every validation_every steps
/// (and at the end); keeps the best-BLEU checkpoint in checkpoint_dir.
/// Metric lines are appended to `log` when non-null.
FitResult Fit(Trainer &trainer, const std::vector<TripletExample> &train,
              const std::vector<TripletExample> &valid, std::ostream *log = nullptr);

/// Metric-log line for one record.
std::string FormatRecord(const StepRecord &r);

}  // namespace comsl

#endif  // COMSL_TRAINER_H_
