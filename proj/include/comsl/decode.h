// comsl/decode.h

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

// Decoding and scoring: beam search, greedy decoding, corpus BLEU over token
// ids, word error rate and speech/text similarity matrices.

#ifndef COMSL_DECODE_H_
#define COMSL_DECODE_H_

#include <cstdint>
#include <string>
#include <vector>

#include "comsl/corpus.h"
#include "comsl/model.h"

namespace comsl {

struct Hypothesis {
  std::vector<int32_t> tokens;  // without tags and EOS
  double logprob = 0;
  double score = 0;  // logprob / number of generated steps (EOS included)
  bool finished = false;
};

/// Candidate tokens at every step: content tokens and EOS.
std::vector<int32_t> AllowedTokens(const Vocab &vocab);

/// Length-normalized beam search for every memory segment at once.  At each
/// step the `beam` best expansions (by log-probability, ties broken by the
/// lexicographically smaller token sequence) survive; those ending in EOS
/// retire.  Returns the best retired hypothesis, else the best live one after
/// max_len steps.
template <typename Real>
std::vector<Hypothesis> BeamSearch(ComSLModel<Real> &model, const Packed<Real> &memory,
                                   const std::vector<int32_t> &lang_tags, int32_t task_tag,
                                   const Vocab &vocab, int beam, int max_len);

/// Argmax decoding (smallest id on ties), written independently of BeamSearch.
template <typename Real>
std::vector<Hypothesis> GreedyDecode(ComSLModel<Real> &model, const Packed<Real> &memory,
                                     const std::vector<int32_t> &lang_tags, int32_t task_tag,
                                     const Vocab &vocab, int max_len);

/// Corpus BLEU-4 in [0, 100]; zero n-gram precisions are replaced by 1e-9.
double CorpusBleu(const std::vector<std::vector<int32_t>> &hypotheses,
                  const std::vector<std::vector<int32_t>> &references);

/// Levenshtein distance with unit costs.
int64_t EditDistance(const std::vector<int32_t> &a, const std::vector<int32_t> &b);
/// Edit distance / reference length after dropping every non-content token
/// (specials, language tags, SILENCE).
double WordErrorRate(const std::vector<int32_t> &hypothesis,
                     const std::vector<int32_t> &reference, const Vocab &vocab);

struct SimilarityMatrix {
  int64_t rows = 0, cols = 0;
  int layer = 0;
  bool cml_forward = false;
  std::vector<double> values;  // row-major, each row a distribution over text positions
  double at(int64_t r, int64_t c) const { return values[r * cols + c]; }
  double MeanRowEntropy() const;
};

/// softmax_j(<s_i, t_j> / sqrt(d)) over text positions j.
SimilarityMatrix SimilarityFromStates(const std::vector<double> &speech, int64_t n_speech,
                                      const std::vector<double> &text, int64_t n_text, int64_t d);

/// Speech states after text-encoder block erm_layer (from the concatenated
/// forward with the unmasked transcript when cml_forward, else speech-only)
/// against the text-only states of the same block.
template <typename Real>
SimilarityMatrix ComputeSimilarity(ComSLModel<Real> &model, const TripletExample &example,
                                   bool cml_forward);

/// Plain-text grid: a header line "# rows=R cols=C layer=K mode=M" followed
/// by one space-separated row per line.
std::string FormatSimilarity(const SimilarityMatrix &m);

/// Packs example frames into one [sum T x feat_dim] tensor.
template <typename Real>
Tensor<Real> PackFrames(const std::vector<const TripletExample *> &examples,
                        std::vector<int64_t> *lengths);

/// Decodes translations (ST from speech, or MT from the gold transcript when
/// from_text) in chunks of `chunk` examples.
template <typename Real>
std::vector<std::vector<int32_t>> Translate(ComSLModel<Real> &model,
                                            const std::vector<TripletExample> &examples,
                                            const Vocab &vocab, int beam, bool from_text,
                                            int chunk = 64);
/// Decodes transcripts from speech (ASR mode).
template <typename Real>
std::vector<std::vector<int32_t>> Transcribe(ComSLModel<Real> &model,
                                             const std::vector<TripletExample> &examples,
                                             const Vocab &vocab, int beam, int chunk = 64);

}  // namespace comsl

#endif  // COMSL_DECODE_H_
