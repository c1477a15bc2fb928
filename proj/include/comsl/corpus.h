// comsl/corpus.h

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

// Synthetic speech/transcript/translation triplets.
//
// A transcript x is a random string of content tokens.  Its translation is
// y = reverse(sigma(x)) with sigma(t) = (7 t + 3 + offset(src, tgt)) mod
// n_content on content indices, so the task needs genuine reordering.  Each
// token is "spoken" as 2-4 noisy copies of a fixed prototype frame; silence
// frames surround the utterance and occasionally separate words.

#ifndef COMSL_CORPUS_H_
#define COMSL_CORPUS_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace comsl {

class CorpusError : public std::runtime_error {
 public:
  explicit CorpusError(const std::string &msg) : std::runtime_error(msg) {}
};

/// Token id layout: specials, then language tags, then content tokens.
class Vocab {
 public:
  static constexpr int32_t kPad = 0, kBos = 1, kEos = 2, kMask = 3, kAsr = 4, kSt = 5, kMt = 6,
                           kSilence = 7;
  static constexpr int32_t kNumSpecials = 8;

  Vocab() = default;
  /// max_size == 0 means unbounded; otherwise a larger layout is rejected.
  Vocab(int n_content, int n_langs, int max_size = 0);

  int size() const { return kNumSpecials + n_langs_ + n_content_; }
  int n_content() const { return n_content_; }
  int n_langs() const { return n_langs_; }
  int32_t LangTag(int lang) const;
  int32_t ContentId(int index) const;
  int ContentIndex(int32_t id) const;
  bool IsContent(int32_t id) const { return id >= content_base() && id < size(); }
  int32_t content_base() const { return kNumSpecials + n_langs_; }

  bool operator==(const Vocab &) const = default;

 private:
  int n_content_ = 0;
  int n_langs_ = 0;
};

Vocab BuildVocab(int n_content, int n_langs, int max_size = 0);

struct TripletExample {
  int64_t id = 0;
  std::vector<float> frames;  // num_frames x feat_dim, row-major
  int32_t num_frames = 0;
  int32_t feat_dim = 0;
  std::vector<int32_t> x;  // transcript
  std::vector<int32_t> y;  // translation
  int src_lang = 0;
  int tgt_lang = 0;
  bool is_pseudo = false;
};

struct SynthConfig {
  int feat_dim = 16;
  int max_frames = 256;
  int min_tokens = 3;
  int max_tokens = 12;
  double noise_sigma = 0.1;
  double pause_prob = 0.1;
  /// Target language shared by every pair (the "into English" direction).
  int tgt_lang = 0;
  /// Seeds the token prototypes; corpora that should sound alike share it.
  uint64_t acoustic_seed = 1234;
};

/// Per-pair content offset used by sigma.
int PairOffset(int src_lang, int tgt_lang, int n_content);
/// The toy translation of a transcript.
std::vector<int32_t> TranslateReference(const Vocab &vocab, const std::vector<int32_t> &x,
                                        int src_lang, int tgt_lang);

/// lang_weights[l] is the relative share of language l (emulating high/mid/
/// low-resource splits); counts are allocated by largest remainder.
std::vector<TripletExample> SynthCorpus(const Vocab &vocab, int n_examples, uint64_t seed,
                                        const std::vector<double> &lang_weights,
                                        const SynthConfig &cfg = {});

/// Each content position is independently replaced by MASK with probability
/// p_mask.  Returns (x', sorted masked positions).
std::pair<std::vector<int32_t>, std::vector<int32_t>> MaskTranscript(
    const Vocab &vocab, const std::vector<int32_t> &x, double p_mask, std::mt19937_64 &rng);
/// Masks every content position.
std::pair<std::vector<int32_t>, std::vector<int32_t>> MaskAll(const Vocab &vocab,
                                                              const std::vector<int32_t> &x);

/// Right-padded view of several examples.
struct Batch {
  int batch_size = 0;
  int feat_dim = 0;
  int max_frames = 0;
  std::vector<float> frames;  // batch_size x max_frames x feat_dim, zero padded
  std::vector<int32_t> frame_lengths;
  int max_x = 0, max_y = 0;
  std::vector<int32_t> x, x_masked, y;  // PAD-padded, batch_size x max_{x,y}
  std::vector<int32_t> x_lengths, y_lengths;
  std::vector<std::vector<int32_t>> mask_positions;
  std::vector<int> src_lang, tgt_lang;

  std::vector<int32_t> X(int b) const;
  std::vector<int32_t> XMasked(int b) const;
  std::vector<int32_t> Y(int b) const;
};

Batch CollateBatch(const std::vector<const TripletExample *> &examples, const Vocab &vocab,
                   double p_mask, uint64_t seed);

/// Speech with a transcript but no translation.
struct UnlabeledPair {
  std::vector<float> frames;
  int32_t num_frames = 0;
  int32_t feat_dim = 0;
  std::vector<int32_t> x;
  int src_lang = 0;
  int tgt_lang = 0;
};

/// Maps (x, src_lang, tgt_lang) to a translation; an empty result means the
/// teacher produced nothing usable.
using Translator =
    std::function<std::vector<int32_t>(const std::vector<int32_t> &, int, int)>;

struct PseudoLabelStats {
  int64_t kept = 0;
  int64_t in_existing = 0;  // transcript already present in the gold corpus
  int64_t duplicates = 0;   // transcript repeated within the unlabeled pool
  int64_t empty_output = 0;
};

/// Translates every unlabeled transcript not already in `existing` (exact
/// transcript identity) and returns is_pseudo examples with fresh ids
/// starting at first_id.
std::vector<TripletExample> PseudoLabel(const std::vector<UnlabeledPair> &unlabeled,
                                        const Translator &teacher,
                                        const std::vector<TripletExample> &existing,
                                        int64_t first_id, PseudoLabelStats *stats = nullptr);

/// Unlabeled pool synthesized like SynthCorpus but without translations.
std::vector<UnlabeledPair> SynthUnlabeled(const Vocab &vocab, int n_examples, uint64_t seed,
                                          const std::vector<double> &lang_weights,
                                          const SynthConfig &cfg = {});

/// Manifest (tab-separated: id, src_lang, tgt_lang, is_pseudo, x ids, y ids,
/// frame offset, frame count) plus a flat little-endian float32 frames file.
void WriteCorpus(const std::filesystem::path &dir, const std::vector<TripletExample> &examples);
std::vector<TripletExample> ReadCorpus(const std::filesystem::path &dir);

}  // namespace comsl

#endif  // COMSL_CORPUS_H_
