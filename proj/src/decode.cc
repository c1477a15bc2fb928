// src/decode.cc

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

#include "comsl/decode.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace comsl {

namespace {

// Log-softmax of one logits row, in double.
template <typename Real>
void RowLogSoftmax(std::span<const Real> logits, int64_t row, int64_t v, std::vector<double> *out) {
  out->resize(v);
  const Real *p = logits.data() + row * v;
  double mx = p[0];
  for (int64_t j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(p[j]));
  double sum = 0;
  for (int64_t j = 0; j < v; ++j) sum += std::exp(static_cast<double>(p[j]) - mx);
  const double lse = mx + std::log(sum);
  for (int64_t j = 0; j < v; ++j) (*out)[j] = static_cast<double>(p[j]) - lse;
}

struct Candidate {
  std::vector<int32_t> tokens;  // includes EOS when finished
  double logprob;
  bool eos;
};

bool Better(const Candidate &a, const Candidate &b) {
  if (a.logprob != b.logprob) return a.logprob > b.logprob;
  return a.tokens < b.tokens;
}

bool BetterHyp(const Hypothesis &a, const Hypothesis &b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

void CheckDecodeArgs(size_t n_memory, size_t n_tags, int max_len) {
  if (n_memory != n_tags) throw TensorError("decode: one language tag per memory segment required");
  if (max_len < 1) throw TensorError("decode: max_len must be >= 1");
}

}  // namespace

std::vector<int32_t> AllowedTokens(const Vocab &vocab) {
  std::vector<int32_t> out = {Vocab::kEos};
  for (int i = 0; i < vocab.n_content(); ++i) out.push_back(vocab.ContentId(i));
  return out;
}

template <typename Real>
std::vector<Hypothesis> BeamSearch(ComSLModel<Real> &model, const Packed<Real> &memory,
                                   const std::vector<int32_t> &lang_tags, int32_t task_tag,
                                   const Vocab &vocab, int beam, int max_len) {
  CheckDecodeArgs(memory.lengths.size(), lang_tags.size(), max_len);
  if (beam < 1) throw TensorError("beam search: beam must be >= 1");
  NoGradScope<Real> no_grad;
  const size_t n = lang_tags.size();
  const std::vector<int32_t> allowed = AllowedTokens(vocab);
  std::vector<std::vector<Candidate>> live(n, {Candidate{{}, 0.0, false}});
  std::vector<std::vector<Hypothesis>> done(n);
  std::vector<double> logp;

  for (int step = 1; step <= max_len; ++step) {
    std::vector<int32_t> prefixes;
    std::vector<int64_t> lengths, mem_index;
    for (size_t i = 0; i < n; ++i)
      for (const Candidate &c : live[i]) {
        prefixes.push_back(task_tag);
        prefixes.push_back(lang_tags[i]);
        prefixes.insert(prefixes.end(), c.tokens.begin(), c.tokens.end());
        lengths.push_back(static_cast<int64_t>(c.tokens.size()) + 2);
        mem_index.push_back(static_cast<int64_t>(i));
      }
    if (lengths.empty()) break;
    Tensor<Real> logits = model.DecodeLogits(memory, prefixes, lengths, mem_index);
    const int64_t v = logits.cols();
    int64_t row_end = 0, k = 0;
    for (size_t i = 0; i < n; ++i) {
      std::vector<Candidate> cands;
      for (const Candidate &c : live[i]) {
        row_end += lengths[k++];
        RowLogSoftmax(logits.data(), row_end - 1, v, &logp);
        for (int32_t tok : allowed) {
          Candidate next{c.tokens, c.logprob + logp[tok], tok == Vocab::kEos};
          next.tokens.push_back(tok);
          cands.push_back(std::move(next));
        }
      }
      if (cands.empty()) continue;
      const size_t keep = std::min<size_t>(beam, cands.size());
      std::partial_sort(cands.begin(), cands.begin() + keep, cands.end(), Better);
      cands.resize(keep);
      live[i].clear();
      for (Candidate &c : cands) {
        if (c.eos) {
          Hypothesis h;
          h.tokens.assign(c.tokens.begin(), c.tokens.end() - 1);
          h.logprob = c.logprob;
          h.score = c.logprob / step;
          h.finished = true;
          done[i].push_back(std::move(h));
        } else {
          live[i].push_back(std::move(c));
        }
      }
    }
  }

  std::vector<Hypothesis> out(n);
  for (size_t i = 0; i < n; ++i) {
    std::vector<Hypothesis> pool = done[i];
    if (pool.empty())
      for (const Candidate &c : live[i]) {
        Hypothesis h;
        h.tokens = c.tokens;
        h.logprob = c.logprob;
        h.score = c.logprob / static_cast<double>(c.tokens.size());
        pool.push_back(std::move(h));
      }
    out[i] = *std::min_element(pool.begin(), pool.end(), BetterHyp);
  }
  return out;
}

template <typename Real>
std::vector<Hypothesis> GreedyDecode(ComSLModel<Real> &model, const Packed<Real> &memory,
                                     const std::vector<int32_t> &lang_tags, int32_t task_tag,
                                     const Vocab &vocab, int max_len) {
  CheckDecodeArgs(memory.lengths.size(), lang_tags.size(), max_len);
  NoGradScope<Real> no_grad;
  const size_t n = lang_tags.size();
  std::vector<Hypothesis> out(n);
  std::vector<bool> active(n, true);
  std::vector<double> logp;
  for (int step = 1; step <= max_len; ++step) {
    std::vector<int32_t> prefixes;
    std::vector<int64_t> lengths, mem_index;
    for (size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      prefixes.push_back(task_tag);
      prefixes.push_back(lang_tags[i]);
      prefixes.insert(prefixes.end(), out[i].tokens.begin(), out[i].tokens.end());
      lengths.push_back(static_cast<int64_t>(out[i].tokens.size()) + 2);
      mem_index.push_back(static_cast<int64_t>(i));
    }
    if (lengths.empty()) break;
    Tensor<Real> logits = model.DecodeLogits(memory, prefixes, lengths, mem_index);
    const int64_t v = logits.cols();
    int64_t row_end = 0;
    size_t k = 0;
    for (size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      row_end += lengths[k++];
      RowLogSoftmax(logits.data(), row_end - 1, v, &logp);
      // Ascending id scan with strict '>' keeps the smallest id on ties.
      int32_t best = -1;
      for (int32_t tok = 0; tok < v; ++tok) {
        if (tok != Vocab::kEos && !vocab.IsContent(tok)) continue;
        if (best < 0 || logp[tok] > logp[best]) best = tok;
      }
      out[i].logprob += logp[best];
      if (best == Vocab::kEos) {
        out[i].finished = true;
        active[i] = false;
        out[i].score = out[i].logprob / step;
      } else {
        out[i].tokens.push_back(best);
        out[i].score = out[i].logprob / step;
      }
    }
  }
  return out;
}

double CorpusBleu(const std::vector<std::vector<int32_t>> &hypotheses,
                  const std::vector<std::vector<int32_t>> &references) {
  if (hypotheses.size() != references.size())
    throw std::invalid_argument("bleu: hypothesis and reference counts differ");
  if (hypotheses.empty()) throw std::invalid_argument("bleu: empty corpus");
  double matches[4] = {0, 0, 0, 0}, totals[4] = {0, 0, 0, 0};
  double hyp_len = 0, ref_len = 0;
  for (size_t s = 0; s < hypotheses.size(); ++s) {
    const auto &h = hypotheses[s], &r = references[s];
    hyp_len += static_cast<double>(h.size());
    ref_len += static_cast<double>(r.size());
    for (size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<int32_t>, int> ref_counts;
      for (size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[{r.begin() + i, r.begin() + i + n}];
      std::map<std::vector<int32_t>, int> hyp_counts;
      for (size_t i = 0; i + n <= h.size(); ++i) ++hyp_counts[{h.begin() + i, h.begin() + i + n}];
      for (const auto &[gram, count] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[n - 1] += std::min(count, it->second);
        totals[n - 1] += count;
      }
    }
  }
  if (ref_len == 0) throw std::invalid_argument("bleu: empty references");
  if (hyp_len == 0) return 0.0;
  double log_sum = 0;
  for (int n = 0; n < 4; ++n) {
    const double p = matches[n] > 0 ? matches[n] / totals[n] : 1e-9;
    log_sum += std::log(p);
  }
  const double bp = hyp_len < ref_len ? std::exp(1.0 - ref_len / hyp_len) : 1.0;
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

int64_t EditDistance(const std::vector<int32_t> &a, const std::vector<int32_t> &b) {
  std::vector<int64_t> prev(b.size() + 1), cur(b.size() + 1);
  for (size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int64_t>(j);
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int64_t>(i);
    for (size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double WordErrorRate(const std::vector<int32_t> &hypothesis,
                     const std::vector<int32_t> &reference, const Vocab &vocab) {
  auto filter = [&](const std::vector<int32_t> &s) {
    std::vector<int32_t> out;
    for (int32_t t : s)
      if (vocab.IsContent(t)) out.push_back(t);
    return out;
  };
  const auto h = filter(hypothesis), r = filter(reference);
  if (r.empty()) throw std::invalid_argument("wer: empty reference after filtering");
  return static_cast<double>(EditDistance(h, r)) / static_cast<double>(r.size());
}

double SimilarityMatrix::MeanRowEntropy() const {
  double total = 0;
  for (int64_t r = 0; r < rows; ++r) {
    double h = 0;
    for (int64_t c = 0; c < cols; ++c) {
      const double p = at(r, c);
      if (p > 0) h -= p * std::log(p);
    }
    total += h;
  }
  return rows > 0 ? total / static_cast<double>(rows) : 0.0;
}

SimilarityMatrix SimilarityFromStates(const std::vector<double> &speech, int64_t n_speech,
                                      const std::vector<double> &text, int64_t n_text, int64_t d) {
  if (n_speech < 1 || n_text < 1) throw std::invalid_argument("similarity: empty state sequence");
  SimilarityMatrix m;
  m.rows = n_speech;
  m.cols = n_text;
  m.values.resize(n_speech * n_text);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (int64_t i = 0; i < n_speech; ++i) {
    double mx = -INFINITY;
    for (int64_t j = 0; j < n_text; ++j) {
      double dot = 0;
      for (int64_t c = 0; c < d; ++c) dot += speech[i * d + c] * text[j * d + c];
      m.values[i * n_text + j] = dot * scale;
      mx = std::max(mx, dot * scale);
    }
    double sum = 0;
    for (int64_t j = 0; j < n_text; ++j) sum += (m.values[i * n_text + j] = std::exp(m.values[i * n_text + j] - mx));
    for (int64_t j = 0; j < n_text; ++j) m.values[i * n_text + j] /= sum;
  }
  return m;
}

template <typename Real>
Tensor<Real> PackFrames(const std::vector<const TripletExample *> &examples,
                        std::vector<int64_t> *lengths) {
  if (examples.empty()) throw TensorError("pack: no examples");
  const int64_t fd = examples[0]->feat_dim;
  int64_t total = 0;
  lengths->clear();
  for (const TripletExample *ex : examples) {
    if (ex->feat_dim != fd) throw TensorError("pack: mixed feat_dim");
    lengths->push_back(ex->num_frames);
    total += ex->num_frames;
  }
  Tensor<Real> out({total, fd});
  auto dst = out.mutable_data();
  size_t pos = 0;
  for (const TripletExample *ex : examples)
    for (float f : ex->frames) dst[pos++] = static_cast<Real>(f);
  return out;
}

template <typename Real>
SimilarityMatrix ComputeSimilarity(ComSLModel<Real> &model, const TripletExample &example,
                                   bool cml_forward) {
  if (example.x.empty()) throw std::invalid_argument("similarity: empty transcript");
  NoGradScope<Real> no_grad;
  std::vector<int64_t> frame_lengths;
  Tensor<Real> frames = PackFrames<Real>({&example}, &frame_lengths);
  Packed<Real> es = model.EncodeSpeech(frames, frame_lengths);
  const std::vector<int64_t> x_len = {static_cast<int64_t>(example.x.size())};
  Tensor<Real> speech = cml_forward ? model.EncodeConcat(es, example.x, x_len).speech.trace
                                    : model.EncodeSpeechOnly(es).trace;
  Tensor<Real> text = model.EncodeText(example.x, x_len).trace;
  SimilarityMatrix m = SimilarityFromStates({speech.data().begin(), speech.data().end()},
                                            speech.rows(), {text.data().begin(), text.data().end()},
                                            text.rows(), model.config().d_model);
  m.layer = model.config().erm_layer;
  m.cml_forward = cml_forward;
  return m;
}

std::string FormatSimilarity(const SimilarityMatrix &m) {
  std::ostringstream os;
  os.precision(9);
  os << "# rows=" << m.rows << " cols=" << m.cols << " layer=" << m.layer
     << " mode=" << (m.cml_forward ? "cml" : "speech-only") << '\n';
  for (int64_t r = 0; r < m.rows; ++r) {
    for (int64_t c = 0; c < m.cols; ++c) os << (c ? " " : "") << m.at(r, c);
    os << '\n';
  }
  return os.str();
}

namespace {

template <typename Real>
std::vector<std::vector<int32_t>> DecodeChunks(ComSLModel<Real> &model,
                                               const std::vector<TripletExample> &examples,
                                               const Vocab &vocab, int beam, bool from_text,
                                               int32_t task, int chunk) {
  std::vector<std::vector<int32_t>> out;
  NoGradScope<Real> no_grad;
  const int max_len = model.config().max_tokens + 1;
  for (size_t begin = 0; begin < examples.size(); begin += chunk) {
    const size_t end = std::min(examples.size(), begin + static_cast<size_t>(chunk));
    std::vector<const TripletExample *> part;
    std::vector<int32_t> tags, ids;
    std::vector<int64_t> x_len;
    for (size_t i = begin; i < end; ++i) {
      part.push_back(&examples[i]);
      tags.push_back(vocab.LangTag(examples[i].src_lang));
      ids.insert(ids.end(), examples[i].x.begin(), examples[i].x.end());
      x_len.push_back(static_cast<int64_t>(examples[i].x.size()));
    }
    Packed<Real> memory;
    if (from_text) {
      memory = model.EncodeText(ids, x_len).hidden;
    } else {
      std::vector<int64_t> frame_lengths;
      Tensor<Real> frames = PackFrames<Real>(part, &frame_lengths);
      memory = model.EncodeSpeechOnly(model.EncodeSpeech(frames, frame_lengths)).hidden;
    }
    for (Hypothesis &h : BeamSearch(model, memory, tags, task, vocab, beam, max_len))
      out.push_back(std::move(h.tokens));
  }
  return out;
}

}  // namespace

template <typename Real>
std::vector<std::vector<int32_t>> Translate(ComSLModel<Real> &model,
                                            const std::vector<TripletExample> &examples,
                                            const Vocab &vocab, int beam, bool from_text,
                                            int chunk) {
  return DecodeChunks(model, examples, vocab, beam, from_text,
                      from_text ? Vocab::kMt : Vocab::kSt, chunk);
}

template <typename Real>
std::vector<std::vector<int32_t>> Transcribe(ComSLModel<Real> &model,
                                             const std::vector<TripletExample> &examples,
                                             const Vocab &vocab, int beam, int chunk) {
  return DecodeChunks(model, examples, vocab, beam, false, Vocab::kAsr, chunk);
}

#define COMSL_INSTANTIATE_DECODE(Real)                                                           \
  template std::vector<Hypothesis> BeamSearch(ComSLModel<Real> &, const Packed<Real> &,          \
                                              const std::vector<int32_t> &, int32_t,             \
                                              const Vocab &, int, int);                          \
  template std::vector<Hypothesis> GreedyDecode(ComSLModel<Real> &, const Packed<Real> &,        \
                                                const std::vector<int32_t> &, int32_t,           \
                                                const Vocab &, int);                             \
  template Tensor<Real> PackFrames(const std::vector<const TripletExample *> &,                  \
                                   std::vector<int64_t> *);                                      \
  template SimilarityMatrix ComputeSimilarity(ComSLModel<Real> &, const TripletExample &, bool); \
  template std::vector<std::vector<int32_t>> Translate(                                          \
      ComSLModel<Real> &, const std::vector<TripletExample> &, const Vocab &, int, bool, int);   \
  template std::vector<std::vector<int32_t>> Transcribe(                                         \
      ComSLModel<Real> &, const std::vector<TripletExample> &, const Vocab &, int, int);

COMSL_INSTANTIATE_DECODE(float)
COMSL_INSTANTIATE_DECODE(double)

}  // namespace comsl
