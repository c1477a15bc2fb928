// tests/decode_test.cc

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

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "comsl/corpus.h"
#include "comsl/decode.h"
#include "comsl/model.h"
#include "doctest.h"

using namespace comsl;
using T = Tensor<double>;
using M = ComSLModel<double>;
using Seqs = std::vector<std::vector<int32_t>>;

namespace {

ModelConfig Tiny() {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.ffn_dim = 16;
  c.speech_layers = 1;
  c.text_enc_layers = 2;
  c.text_dec_layers = 2;
  c.erm_layer = 2;
  c.feat_dim = 4;
  c.max_frames = 64;
  c.max_tokens = 6;
  c.vocab_size = 17;
  c.dropout_text = 0.0;
  return c;
}

Vocab TinyVocab() { return Vocab(6, 3, 17); }

Packed<double> RandomMemory(M &model, int n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<int64_t> lens;
  int64_t total = 0;
  for (int i = 0; i < n; ++i) {
    lens.push_back(5 + static_cast<int64_t>(rng() % 20));
    total += lens.back();
  }
  T frames(Shape{total, 4});
  for (double &v : frames.mutable_data()) v = 2.0 * nd(rng);
  NoGradScope<double> no_grad;
  return model.EncodeSpeechOnly(model.EncodeSpeech(frames, lens)).hidden;
}

// Randomize every parameter more aggressively than the initializer so that
// decoded sequences vary in length and content.
void Scramble(M &model, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 0.8);
  for (auto &p : model.params())
    for (double &v : p.value.mutable_data()) v += nd(rng);
}

}  // namespace

TEST_CASE("bleu hand-counted fixtures") {
  // Identity.
  CHECK(CorpusBleu({{11, 12, 13, 14, 15}}, {{11, 12, 13, 14, 15}}) == 100.0);
  // "a b c d" vs "a b c e": p = 3/4, 2/3, 1/2, 0 -> 1e-9; equal lengths.
  CHECK(std::abs(CorpusBleu({{1, 2, 3, 4}}, {{1, 2, 3, 5}}) -
                 100.0 * std::pow(0.75 * (2.0 / 3.0) * 0.5 * 1e-9, 0.25)) < 1e-6);
  // Perfect prefix of a longer reference: all p = 1, BP = exp(1 - 6/4).
  CHECK(std::abs(CorpusBleu({{1, 2, 3, 4}}, {{1, 2, 3, 4, 5, 6}}) - 100.0 * std::exp(-0.5)) < 1e-6);
  // Two sentences pooled.  Sentence 2 hyp "1 1 1 1" vs ref "1 2 1 3": unigram
  // matches clip at 2, no higher-order matches.  p = 7/9, 4/7, 3/5, 2/3.
  CHECK(std::abs(CorpusBleu({{1, 2, 3, 4, 5}, {1, 1, 1, 1}}, {{1, 2, 3, 4, 5}, {1, 2, 1, 3}}) -
                 100.0 * std::pow((7.0 / 9) * (4.0 / 7) * (3.0 / 5) * (2.0 / 3), 0.25)) < 1e-6);
  // Longer hypothesis, no brevity penalty: p = 4/6, 3/5, 2/4, 1/3.
  CHECK(std::abs(CorpusBleu({{1, 2, 3, 4, 5, 6}}, {{1, 2, 3, 4}}) -
                 100.0 * std::pow((4.0 / 6) * (3.0 / 5) * (2.0 / 4) * (1.0 / 3), 0.25)) < 1e-6);
}

TEST_CASE("bleu argument checks and properties") {
  CHECK_THROWS_AS(CorpusBleu({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(CorpusBleu({{1}}, {{1}, {2}}), std::invalid_argument);
  CHECK(CorpusBleu({{}}, {{1, 2}}) == 0.0);

  std::mt19937_64 rng(3);
  Seqs hyp, ref;
  for (int i = 0; i < 20; ++i) {
    std::vector<int32_t> r, h;
    for (int j = 0; j < 8; ++j) r.push_back(11 + static_cast<int32_t>(rng() % 6));
    for (int32_t t : r) h.push_back(rng() % 4 ? t : 11 + static_cast<int32_t>(rng() % 6));
    ref.push_back(r);
    hyp.push_back(h);
  }
  const double base = CorpusBleu(hyp, ref);
  std::vector<size_t> order(hyp.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  Seqs hp, rp;
  for (size_t i : order) {
    hp.push_back(hyp[i]);
    rp.push_back(ref[i]);
  }
  CHECK(CorpusBleu(hp, rp) == doctest::Approx(base).epsilon(1e-12));

  Seqs half = ref;
  for (auto &h : half) h.resize(h.size() / 2);
  CHECK(CorpusBleu(half, ref) < CorpusBleu(ref, ref));
  Seqs half_hyp = hyp;
  for (auto &h : half_hyp) h.resize(h.size() / 2);
  CHECK(CorpusBleu(half_hyp, ref) < base);
}

TEST_CASE("word error rate hand fixtures") {
  const Vocab v = TinyVocab();
  const int32_t a = 11, b = 12, c = 13, x = 14;
  CHECK(WordErrorRate({a, b, c}, {a, b, c}, v) == 0.0);
  CHECK(WordErrorRate({a, x, c}, {a, b, c}, v) == 1.0 / 3.0);
  CHECK(WordErrorRate({}, {a, b, c}, v) == 1.0);
  CHECK(WordErrorRate({a, b, c, x}, {a, b, c}, v) == 1.0 / 3.0);
  CHECK(WordErrorRate({b, c}, {a, b, c}, v) == 1.0 / 3.0);
  CHECK(WordErrorRate({c, b, a}, {a, b, c}, v) == 2.0 / 3.0);
  // Non-content tokens are dropped on both sides before alignment.
  CHECK(WordErrorRate({a, Vocab::kSilence, b, Vocab::kEos}, {a, Vocab::kSilence, b}, v) == 0.0);
  CHECK(WordErrorRate({x, x, x, x, x}, {a, b}, v) == 5.0 / 2.0);
  CHECK_THROWS(WordErrorRate({a}, {Vocab::kSilence}, v));
  CHECK(EditDistance({1, 2, 3, 4, 5, 6}, {7, 2, 3, 4, 8, 6, 9}) == 3);
  CHECK(EditDistance({}, {}) == 0);
}

TEST_CASE("word error rate bound and zero iff equal") {
  const Vocab v = TinyVocab();
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int32_t> h, r;
    const int nh = static_cast<int>(rng() % 6), nr = 1 + static_cast<int>(rng() % 6);
    for (int i = 0; i < nh; ++i) h.push_back(11 + static_cast<int32_t>(rng() % 3));
    for (int i = 0; i < nr; ++i) r.push_back(11 + static_cast<int32_t>(rng() % 3));
    const double w = WordErrorRate(h, r, v);
    CHECK(w <= 1.0 + static_cast<double>(h.size()) / r.size());
    CHECK((w == 0.0) == (h == r));
  }
}

TEST_CASE("beam width one equals greedy decoding on 100 random models") {
  const Vocab vocab = TinyVocab();
  int distinct_lengths = 0;
  std::set<size_t> lengths;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    M model(Tiny(), seed);
    Scramble(model, seed + 1000);
    const Packed<double> memory = RandomMemory(model, 3, seed);
    const std::vector<int32_t> tags = {vocab.LangTag(0), vocab.LangTag(1), vocab.LangTag(2)};
    const int32_t task = seed % 2 ? Vocab::kSt : Vocab::kAsr;
    const auto beam = BeamSearch(model, memory, tags, task, vocab, 1, 7);
    const auto greedy = GreedyDecode(model, memory, tags, task, vocab, 7);
    REQUIRE(beam.size() == 3);
    REQUIRE(greedy.size() == 3);
    for (int i = 0; i < 3; ++i) {
      CHECK(beam[i].tokens == greedy[i].tokens);
      CHECK(beam[i].finished == greedy[i].finished);
      lengths.insert(beam[i].tokens.size());
    }
  }
  distinct_lengths = static_cast<int>(lengths.size());
  CHECK(distinct_lengths >= 3);
}

TEST_CASE("hypotheses contain only content tokens and respect max length") {
  const Vocab vocab = TinyVocab();
  for (uint64_t seed = 0; seed < 10; ++seed) {
    M model(Tiny(), seed);
    Scramble(model, seed);
    const Packed<double> memory = RandomMemory(model, 2, seed);
    for (int beam : {1, 3, 5}) {
      for (const auto &h : BeamSearch(model, memory, {9, 10}, Vocab::kSt, vocab, beam, 5)) {
        CHECK(h.tokens.size() <= 5);
        for (int32_t t : h.tokens) CHECK(vocab.IsContent(t));
        const double steps = static_cast<double>(h.tokens.size() + (h.finished ? 1 : 0));
        CHECK(h.score == doctest::Approx(h.logprob / steps).epsilon(1e-12));
      }
    }
  }
  M model(Tiny(), 1);
  const Packed<double> memory = RandomMemory(model, 1, 1);
  CHECK_THROWS(BeamSearch(model, memory, {9}, Vocab::kSt, vocab, 0, 5));
}

TEST_CASE("deterministic chain model decodes its chain") {
  // All decoder blocks are zeroed, so the state at row i is the scaled token
  // embedding plus the position signal.  With tiny embeddings the final layer
  // norm sees the position alone; aligning the output embeddings of a, b and
  // EOS with positions 1, 2 and 3 forces the chain a, b, EOS.
  const Vocab vocab = TinyVocab();
  M model(Tiny(), 5);
  const int64_t d = 8;
  for (auto &p : model.params())
    if (p.name.rfind("dec.block", 0) == 0)
      for (double &v : p.value.mutable_data()) v = 0.0;
  Tensor<double> embed = model.Param("embed.tokens");
  Tensor<double> gain = model.Param("dec.ln.g");
  const Packed<double> memory = RandomMemory(model, 1, 3);

  // Probe: unit embeddings for ids 0..7 read out the normalized position
  // vectors as logits.
  const double probe = 1e-7;
  for (double &v : embed.mutable_data()) v = 0.0;
  for (int64_t i = 0; i < d; ++i) embed.mutable_data()[i * d + i] = probe;
  std::vector<std::vector<double>> pos(4, std::vector<double>(d));
  {
    NoGradScope<double> no_grad;
    const std::vector<int32_t> prefix = {Vocab::kSt, 9, 11, 12};
    const T logits = model.DecodeLogits(memory, prefix, {4});
    for (int64_t r = 1; r < 4; ++r) {
      double norm = 0;
      for (int64_t k = 0; k < d; ++k) norm += std::pow(logits.at(r, k) / probe, 2);
      for (int64_t k = 0; k < d; ++k) pos[r][k] = logits.at(r, k) / probe / std::sqrt(norm);
    }
  }
  const int32_t a = 11, b = 12;
  for (double &v : embed.mutable_data()) v = 0.0;
  const double scale = 1e-4;
  for (int64_t k = 0; k < d; ++k) {
    embed.mutable_data()[a * d + k] = scale * pos[1][k];
    embed.mutable_data()[b * d + k] = scale * pos[2][k];
    embed.mutable_data()[Vocab::kEos * d + k] = scale * pos[3][k];
  }
  for (double &g : gain.mutable_data()) g = 1e7;

  const auto greedy = GreedyDecode(model, memory, {9}, Vocab::kSt, vocab, 6);
  CHECK(greedy[0].tokens == std::vector<int32_t>{a, b});
  CHECK(greedy[0].finished);
  for (int beam : {1, 2, 5}) {
    const auto h = BeamSearch(model, memory, {9}, Vocab::kSt, vocab, beam, 6);
    CHECK(h[0].tokens == std::vector<int32_t>{a, b});
    CHECK(h[0].finished);
    CHECK(h[0].logprob > -1e-6);
  }
}

TEST_CASE("exhaustive beam finds the optimum and no width exceeds it") {
  // With max_len 2 there are 7 first moves (6 content tokens, EOS) and 42
  // second moves, so width 49 keeps everything.  Brute force over the
  // finished sequences [EOS] and [t, EOS] gives the optimal normalized score.
  const Vocab vocab = TinyVocab();
  int narrower_differs = 0;
  for (uint64_t seed = 0; seed < 30; ++seed) {
    M model(Tiny(), seed + 500);
    Scramble(model, seed + 77);
    const Packed<double> memory = RandomMemory(model, 1, seed + 9);
    double best = -1e300;
    {
      NoGradScope<double> no_grad;
      auto logprob = [&](const std::vector<int32_t> &prefix, int32_t next) {
        const T logits = model.DecodeLogits(memory, prefix, {static_cast<int64_t>(prefix.size())});
        const int64_t r = logits.rows() - 1;
        double mx = -1e300, z = 0;
        // Normalized over the whole vocabulary; only the candidates are expanded.
        for (int64_t t = 0; t < logits.cols(); ++t) mx = std::max(mx, logits.at(r, t));
        for (int64_t t = 0; t < logits.cols(); ++t) z += std::exp(logits.at(r, t) - mx);
        return logits.at(r, next) - mx - std::log(z);
      };
      const std::vector<int32_t> root = {Vocab::kSt, 9};
      best = logprob(root, Vocab::kEos);
      for (int32_t t = vocab.content_base(); t < vocab.size(); ++t) {
        std::vector<int32_t> p = root;
        p.push_back(t);
        best = std::max(best, (logprob(root, t) + logprob(p, Vocab::kEos)) / 2.0);
      }
    }
    const auto full = BeamSearch(model, memory, {9}, Vocab::kSt, vocab, 49, 2);
    REQUIRE(full[0].finished);
    CHECK(full[0].score == doctest::Approx(best).epsilon(1e-9));
    for (int beam = 1; beam <= 6; ++beam) {
      const auto h = BeamSearch(model, memory, {9}, Vocab::kSt, vocab, beam, 2);
      if (h[0].finished) CHECK(h[0].score <= best + 1e-9);
      narrower_differs += h[0].score < best - 1e-9;
    }
  }
  MESSAGE("narrow beams below the optimum: " << narrower_differs << " of 180");
}

TEST_CASE("similarity rows are distributions with the expected shape") {
  const Vocab vocab = TinyVocab();
  SynthConfig s;
  s.feat_dim = 4;
  s.max_frames = 64;
  s.min_tokens = 2;
  s.max_tokens = 5;
  const auto corpus = SynthCorpus(vocab, 6, 3, {1, 1, 1}, s);
  M model(Tiny(), 2);
  for (const auto &ex : corpus) {
    for (bool cml : {true, false}) {
      const SimilarityMatrix m = ComputeSimilarity(model, ex, cml);
      CHECK(m.rows == AdapterLength(ex.num_frames));
      CHECK(m.cols == static_cast<int64_t>(ex.x.size()));
      CHECK(m.layer == 2);
      for (int64_t r = 0; r < m.rows; ++r) {
        double sum = 0;
        for (int64_t c = 0; c < m.cols; ++c) {
          CHECK(m.at(r, c) >= 0.0);
          CHECK(m.at(r, c) <= 1.0);
          sum += m.at(r, c);
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
      }
      const std::string text = FormatSimilarity(m);
      CHECK(text.rfind("# rows=" + std::to_string(m.rows) + " cols=" + std::to_string(m.cols) +
                           " layer=2 mode=" + (cml ? "cml" : "speech-only"),
                       0) == 0);
      CHECK(std::count(text.begin(), text.end(), '\n') == m.rows + 1);
    }
  }
  TripletExample empty = corpus[0];
  empty.x.clear();
  CHECK_THROWS(ComputeSimilarity(model, empty, true));
}

TEST_CASE("self-similarity peaks on the diagonal") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  const int64_t n = 7, d = 16;
  std::vector<double> states(n * d);
  for (double &v : states) v = 3.0 * nd(rng);
  const SimilarityMatrix m = SimilarityFromStates(states, n, states, n, d);
  for (int64_t r = 0; r < n; ++r)
    for (int64_t c = 0; c < n; ++c)
      if (c != r) CHECK(m.at(r, r) > m.at(r, c));
  // Uniform rows have maximal entropy.
  const SimilarityMatrix flat = SimilarityFromStates(std::vector<double>(3 * d, 0.0), 3,
                                                     std::vector<double>(4 * d, 0.0), 4, d);
  CHECK(flat.MeanRowEntropy() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(m.MeanRowEntropy() < std::log(7.0));
}

TEST_CASE("translation helpers decode every example in order") {
  const Vocab vocab = TinyVocab();
  SynthConfig s;
  s.feat_dim = 4;
  s.max_frames = 64;
  s.min_tokens = 2;
  s.max_tokens = 5;
  const auto corpus = SynthCorpus(vocab, 9, 5, {1, 1, 1}, s);
  M model(Tiny(), 3);
  const auto whole = Translate(model, corpus, vocab, 2, false, 64);
  const auto chunked = Translate(model, corpus, vocab, 2, false, 4);
  CHECK(whole == chunked);
  CHECK(whole.size() == corpus.size());
  CHECK(Transcribe(model, corpus, vocab, 1).size() == corpus.size());
  CHECK(Translate(model, corpus, vocab, 1, true).size() == corpus.size());
  std::vector<int64_t> lens;
  const T frames = PackFrames<double>({&corpus[0], &corpus[1]}, &lens);
  CHECK(lens == std::vector<int64_t>{corpus[0].num_frames, corpus[1].num_frames});
  CHECK(frames.rows() == corpus[0].num_frames + corpus[1].num_frames);
}
