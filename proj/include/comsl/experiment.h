// comsl/experiment.h

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

// End-to-end runs built from the library pieces: corpus preparation, the
// full recipe (text pre-finetuning, then multi-task training), evaluation,
// and the cumulative ablation ladder.

#ifndef COMSL_EXPERIMENT_H_
#define COMSL_EXPERIMENT_H_

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "comsl/config.h"
#include "comsl/corpus.h"
#include "comsl/trainer.h"

namespace comsl {

SynthConfig SynthFromConfig(const RunConfig &cfg);
Vocab VocabFromConfig(const RunConfig &cfg);

/// Synthesizes the configured corpus.
std::vector<TripletExample> MakeCorpus(const RunConfig &cfg);

struct EvalResult {
  double st_bleu = 0;
  double mt_bleu = 0;  // decoded from the gold transcript
  double asr_wer = 0;  // corpus-level: total edits / total reference tokens
  std::map<int, double> st_bleu_by_lang;
};

EvalResult Evaluate(Model &model, const std::vector<TripletExample> &examples, const Vocab &vocab,
                    int beam);

/// Pre-finetunes the text side (when train.pretrain_steps > 0) and returns
/// the live model together with the frozen copy.
struct PretrainedModel {
  std::unique_ptr<Model> live, frozen;
};
PretrainedModel Pretrain(const RunConfig &cfg, const std::vector<TripletExample> &train,
                         std::ostream *log = nullptr);

/// Translates the unlabeled pool with `teacher` (beam search from text) and
/// returns the filtered pseudo-labelled examples.
std::vector<TripletExample> MakePseudoData(const RunConfig &cfg, Model &teacher,
                                           const std::vector<TripletExample> &existing,
                                           PseudoLabelStats *stats = nullptr);

struct AblationStage {
  std::string name;
  LossWeights loss;
  double freeze_fraction = 0;
  bool pseudo = false;
};

/// The cumulative ladder: st, +mt, +ddm, +asr, +freeze, +mt_reg, +cml,
/// +pseudo, with weights taken from `base` as each feature is switched on.
std::vector<AblationStage> LadderStages(const RunConfig &base);

struct AblationRow {
  std::string stage;
  uint64_t seed = 0;
  double st_bleu = 0;
  double mt_bleu = 0;
  double low_resource_bleu = 0;  // ST BLEU on validation examples of data.pseudo_langs
  bool failed = false;
  std::string error;
};

/// Trains one model per (stage, seed).  Every stage of a seed starts from the
/// same pre-finetuned text model.  A failing run is recorded, not rethrown.
/// Rows are written to `out` as they finish.
std::vector<AblationRow> RunAblation(const RunConfig &base, const std::vector<AblationStage> &stages,
                                     const std::vector<uint64_t> &seeds, std::ostream *out,
                                     std::ostream *log = nullptr);

/// "stage=... seed=... st_bleu=... mt_bleu=... low_bleu=..." (plus error=...).
std::string FormatAblationRow(const AblationRow &row);
/// Per-stage mean and median ST BLEU with deltas to the previous stage.
std::string AblationSummary(const std::vector<AblationRow> &rows,
                            const std::vector<AblationStage> &stages);

double Median(std::vector<double> v);

}  // namespace comsl

#endif  // COMSL_EXPERIMENT_H_
