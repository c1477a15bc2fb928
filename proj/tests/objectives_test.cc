// tests/objectives_test.cc

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

#include <cmath>
#include <random>

#include "comsl/corpus.h"
#include "comsl/decode.h"
#include "comsl/grad_check.h"
#include "comsl/model.h"
#include "comsl/objectives.h"
#include "comsl/ops.h"
#include "comsl/trainer.h"
#include "doctest.h"

using namespace comsl;
using T = Tensor<double>;
using M = ComSLModel<double>;

namespace {

ModelConfig Tiny() {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.ffn_dim = 16;
  c.speech_layers = 2;
  c.text_enc_layers = 2;
  c.text_dec_layers = 2;
  c.erm_layer = 2;
  c.feat_dim = 4;
  c.max_frames = 64;
  c.max_tokens = 8;
  c.vocab_size = 17;
  c.dropout_text = 0.0;
  return c;
}

// 8 specials + 3 language tags + 6 content tokens = 17.
Vocab TinyVocab() { return Vocab(6, 3, 17); }

std::vector<TripletExample> TinyCorpus(int n, uint64_t seed) {
  SynthConfig s;
  s.feat_dim = 4;
  s.max_frames = 64;
  s.min_tokens = 2;
  s.max_tokens = 5;
  return SynthCorpus(TinyVocab(), n, seed, {1, 1, 1}, s);
}

Batch MakeBatch(const std::vector<TripletExample> &corpus, double p_mask, uint64_t seed) {
  std::vector<const TripletExample *> ptrs;
  for (const auto &ex : corpus) ptrs.push_back(&ex);
  return CollateBatch(ptrs, TinyVocab(), p_mask, seed);
}

LossWeights Only(double asr, double st, double mt, double cml) {
  LossWeights w;
  w.w_asr = asr;
  w.w_st = st;
  w.w_mt = mt;
  w.w_cml = cml;
  return w;
}

T Random(Shape shape, uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  T t(shape);
  for (double &v : t.mutable_data()) v = nd(rng);
  return t;
}

// Worst relative error over a few coordinates of every parameter.
double ModelGradError(M &model, M *frozen, const Batch &batch, const LossWeights &w, int coords) {
  double worst = 0;
  uint64_t seed = 11;
  for (auto &p : model.params()) {
    auto f = [&](const T &) { return ForwardLosses(model, frozen, batch, TinyVocab(), w).total; };
    GradCheckOptions opts;
    opts.eps = 1e-6;
    opts.max_coords = coords;
    opts.seed = seed++;
    worst = std::max(worst, GradCheck(f, p.value, opts));
  }
  for (auto &p : model.params()) p.value.ZeroGrad();
  return worst;
}

double MaxAbs(std::span<const double> v) {
  double m = 0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

TEST_CASE("decoder batch layout and weights") {
  const auto b = MakeDecoderBatch({{20, 21, 22}, {23}}, {9, 10}, Vocab::kSt);
  CHECK(b.prefixes == std::vector<int32_t>{Vocab::kSt, 9, 20, 21, 22, Vocab::kSt, 10, 23});
  CHECK(b.prefix_lengths == std::vector<int64_t>{5, 3});
  CHECK(b.targets == std::vector<int32_t>{Vocab::kPad, 20, 21, 22, Vocab::kEos, Vocab::kPad, 23,
                                          Vocab::kEos});
  // Each example's rows sum to 1/B.
  double first = 0, second = 0;
  for (int i = 0; i < 5; ++i) first += b.weights[i];
  for (int i = 5; i < 8; ++i) second += b.weights[i];
  CHECK(first == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(second == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(b.weights[0] == 0.0);
}

TEST_CASE("uniform logits give ln|V| per token") {
  // Eight-symbol toy layout: rows are unscored, token 5, token 6, EOS.
  DecoderBatch b;
  b.prefixes = {Vocab::kAsr, 1, 5, 6};
  b.prefix_lengths = {4};
  b.targets = {Vocab::kPad, 5, 6, Vocab::kEos};
  b.weights = {0.0, 1.0 / 3, 1.0 / 3, 1.0 / 3};
  T logits(Shape{b.rows(), 8});
  CHECK(LossAsr(logits, b).item() == doctest::Approx(std::log(8.0)).epsilon(1e-14));
  CHECK_THROWS(LossAsr(T(Shape{0, 8}), MakeDecoderBatch({}, {}, Vocab::kAsr)));
}

TEST_CASE("padding rows do not contribute") {
  auto b = MakeDecoderBatch({{11, 12}}, {9}, Vocab::kAsr);
  const T l = Random({b.rows(), 17}, 6);
  const double before = LossAsr(l, b).item();
  T padded(Shape{b.rows() + 2, 17});
  std::copy(l.data().begin(), l.data().end(), padded.mutable_data().begin());
  for (int64_t i = l.numel(); i < padded.numel(); ++i) padded.mutable_data()[i] = 3.0;
  b.targets.insert(b.targets.end(), 2, Vocab::kPad);
  b.weights.insert(b.weights.end(), 2, 0.0);
  CHECK(LossNll(padded, b.targets, b.weights).item() == before);
}

TEST_CASE("near one-hot correct logits give a loss near zero") {
  const auto b = MakeDecoderBatch({{12, 13}}, {9}, Vocab::kAsr);
  T logits(Shape{b.rows(), 17});
  for (int64_t r = 1; r < b.rows(); ++r) logits.mutable_data()[r * 17 + b.targets[r]] = 40.0;
  CHECK(LossAsr(logits, b).item() < 1e-15);
}

TEST_CASE("distillation hand value and reduction") {
  // Student uniform over two classes, target 0, teacher (0.8, 0.2).
  T student(Shape{1, 2});
  T teacher(Shape{1, 2}, {std::log(0.8), std::log(0.2)});
  const double v = LossDistill(student, teacher, {0}, {1.0}, 0.8).item();
  CHECK(v == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  const auto b = MakeDecoderBatch({{11, 12, 13}, {14, 15}}, {9, 10}, Vocab::kSt);
  T s = Random({b.rows(), 17}, 3), t = Random({b.rows(), 17}, 4);
  CHECK(std::abs(LossStDdm(s, t, b, 0.0).item() - LossAsr(s, b).item()) < 1e-12);
  CHECK(std::abs(LossMtReg(s, T(), b, 0.0).item() - LossAsr(s, b).item()) < 1e-12);
  CHECK_THROWS(LossMtReg(s, T(), b, 0.2));
  CHECK_THROWS(LossStDdm(s, Random({b.rows() - 1, 17}, 5), b, 0.5));
}

TEST_CASE("teacher equal to student: regularizer term is the teacher entropy") {
  const auto b = MakeDecoderBatch({{11, 12}}, {9}, Vocab::kMt);
  T s = Random({b.rows(), 17}, 8);
  const double pure_soft = LossMtReg(s, s, b, 1.0).item();
  // Hand entropy of softmax rows, averaged with the batch weights.
  double expect = 0;
  for (int64_t r = 0; r < b.rows(); ++r) {
    if (b.weights[r] == 0) continue;
    double mx = -1e300, z = 0, h = 0;
    for (int c = 0; c < 17; ++c) mx = std::max(mx, s.at(r, c));
    for (int c = 0; c < 17; ++c) z += std::exp(s.at(r, c) - mx);
    for (int c = 0; c < 17; ++c) {
      const double p = std::exp(s.at(r, c) - mx) / z;
      h -= p * std::log(p);
    }
    expect += b.weights[r] * h;
  }
  CHECK(pure_soft == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("masked prediction hand value, locality and empty mask") {
  const auto b = MakeDecoderBatch({{12, 13, 14}}, {9}, Vocab::kAsr);
  T uniform(Shape{b.rows(), 17});
  CHECK(LossMtp(uniform, b, {{1}}).item() == doctest::Approx(std::log(17.0)).epsilon(1e-14));
  CHECK(LossMtp(uniform, b, {{}}).item() == 0.0);

  T l = Random({b.rows(), 17}, 2);
  const double before = LossMtp(l, b, {{1}}).item();
  // Position p of the transcript is predicted by logit row p + 1.
  for (int64_t r : {0, 1, 3, 4})
    for (int c = 0; c < 17; ++c) l.mutable_data()[r * 17 + c] += 0.37 * (c + 1);
  CHECK(LossMtp(l, b, {{1}}).item() == before);
  CHECK_THROWS(LossMtp(l, b, {{3}}));
}

TEST_CASE("masked prediction with a four-way vocabulary") {
  // One sequence of one token over a 4-symbol toy layout: ids must be < 4.
  // Rows: unscored, token 3, EOS.
  DecoderBatch b;
  b.prefixes = {Vocab::kAsr, 1, 3};
  b.prefix_lengths = {3};
  b.targets = {Vocab::kPad, 3, Vocab::kEos};
  b.weights = {0.0, 0.5, 0.5};
  T uniform(Shape{3, 4});
  CHECK(LossMtp(uniform, b, {{0}}).item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  const auto stm = LossStm(uniform, b, uniform, b);
  CHECK(stm.src.item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  CHECK(stm.tgt.item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
}

TEST_CASE("representation matching values and stop gradient") {
  T a = Random({5, 3}, 1);
  CHECK(LossErm(a, a.Clone(), {2, 3}).item() == 0.0);
  T shifted = a.Clone();
  for (double &v : shifted.mutable_data()) v += 1.0;
  CHECK(LossErm(shifted, a, {2, 3}).item() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_THROWS(LossErm(a, Random({4, 3}, 2), {2, 2}));

  T other = Random({5, 3}, 9);
  const auto g_concat = TapeGradient([&](const T &x) { return LossErm(x, other, {2, 3}); }, a);
  CHECK(MaxAbs(g_concat) == 0.0);
  const auto g_speech = TapeGradient([&](const T &x) { return LossErm(other, x, {2, 3}); }, a);
  CHECK(MaxAbs(g_speech) > 0.0);
}

TEST_CASE("cml aggregation and weighted total") {
  const T one = T::Scalar(1.0), zero = T::Scalar(0.0);
  CHECK(LossCml(one, one, one, one, 0.1).item() == doctest::Approx(1.1).epsilon(1e-15));
  CHECK(LossCml(zero, zero, zero, zero, 0.1).item() == 0.0);
  CHECK(LossCml(T::Scalar(1.0), T::Scalar(2.0), T::Scalar(3.0), T::Scalar(5.0), 0.0).item() ==
        doctest::Approx(2.0).epsilon(1e-15));
  CHECK(CmlValue(1, 1, 1, 1, 0.1) == doctest::Approx(1.1).epsilon(1e-15));

  const LossWeights w;
  const T cml = LossCml(one, one, one, one, w.w_erm);
  CHECK(std::abs(LossTotal(one, one, one, cml, w).item() - 1.01) < 1e-12);
  LossWeights st_only = Only(0, 1, 0, 0);
  CHECK(LossTotal(T(), T::Scalar(2.5), T(), T(), st_only).item() == 2.5);
  CHECK(LossTotal(one, one, one, one, Only(0, 0, 0, 0)).item() == 0.0);

  // Linearity in each component.
  const T a = T::Scalar(0.7), b = T::Scalar(1.3), c = T::Scalar(2.1), d = T::Scalar(0.4);
  const double base = LossTotal(a, b, c, d, w).item();
  CHECK(LossTotal(T::Scalar(1.7), b, c, d, w).item() - base == doctest::Approx(w.w_asr));
  CHECK(LossTotal(a, b, c, T::Scalar(1.4), w).item() - base == doctest::Approx(w.w_cml));
}

TEST_CASE("teacher branches receive no gradient") {
  const auto b = MakeDecoderBatch({{11, 12}, {13}}, {9, 10}, Vocab::kSt);
  T s = Random({b.rows(), 17}, 1), t = Random({b.rows(), 17}, 2);
  const auto g_t = TapeGradient([&](const T &x) { return LossStDdm(s, x, b, 0.8); }, t);
  CHECK(MaxAbs(g_t) == 0.0);
  const auto g_f = TapeGradient([&](const T &x) { return LossMtReg(s, x, b, 0.2); }, t);
  CHECK(MaxAbs(g_f) == 0.0);
  const auto g_s = TapeGradient([&](const T &x) { return LossStDdm(x, t, b, 0.8); }, s);
  CHECK(MaxAbs(g_s) > 0.0);
}

TEST_CASE("frozen model receives no gradient through the full step") {
  const auto corpus = TinyCorpus(3, 5);
  const Batch batch = MakeBatch(corpus, 0.3, 1);
  M model(Tiny(), 1), frozen(Tiny(), 2);
  for (auto &p : frozen.params()) p.value.set_requires_grad(true);
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto out = ForwardLosses(model, &frozen, batch, TinyVocab(), LossWeights{});
    tape.Backward(out.total);
  }
  for (auto &p : frozen.params()) CHECK_FALSE(p.value.has_grad());
  bool any = false;
  for (auto &p : model.params()) any = any || (p.value.has_grad() && MaxAbs(p.value.grad()) > 0);
  CHECK(any);
}

TEST_CASE("finite-difference gradients of every loss through the model") {
  const auto corpus = TinyCorpus(3, 5);
  const Batch batch = MakeBatch(corpus, 0.4, 3);
  M model(Tiny(), 4), frozen(Tiny(), 5);
  for (auto &p : frozen.params()) p.value.set_requires_grad(false);
  const double tol = 1e-4;

  CHECK(ModelGradError(model, &frozen, batch, Only(1, 0, 0, 0), 2) < tol);
  LossWeights st = Only(0, 1, 0, 0);
  st.lambda_s = 0.0;
  CHECK(ModelGradError(model, &frozen, batch, st, 2) < tol);
  LossWeights mt = Only(0, 0, 1, 0);
  mt.lambda_t = 0.2;
  CHECK(ModelGradError(model, &frozen, batch, mt, 2) < tol);
  // Detached branches move under finite differences, so the composite checks
  // switch them off; the next case covers them with the branch held fixed.
  LossWeights cml = Only(0, 0, 0, 1);
  cml.w_erm = 0.0;
  CHECK(ModelGradError(model, &frozen, batch, cml, 2) < tol);
  LossWeights all;
  all.lambda_s = 0.0;
  all.w_erm = 0.0;
  CHECK(ModelGradError(model, &frozen, batch, all, 3) < tol);
}

TEST_CASE("finite-difference gradients with detached branches held fixed") {
  const auto corpus = TinyCorpus(3, 5);
  const Vocab vocab = TinyVocab();
  M model(Tiny(), 4);
  std::vector<const TripletExample *> ptrs;
  std::vector<std::vector<int32_t>> xs, ys;
  std::vector<int32_t> tags, x_flat;
  std::vector<int64_t> x_len;
  for (const auto &ex : corpus) {
    ptrs.push_back(&ex);
    xs.push_back(ex.x);
    ys.push_back(ex.y);
    tags.push_back(vocab.LangTag(ex.src_lang));
    x_flat.insert(x_flat.end(), ex.x.begin(), ex.x.end());
    x_len.push_back(static_cast<int64_t>(ex.x.size()));
  }
  std::vector<int64_t> lens;
  const T frames = PackFrames<double>(ptrs, &lens);
  const auto mt_b = MakeDecoderBatch(ys, tags, Vocab::kMt);
  const auto st_b = MakeDecoderBatch(ys, tags, Vocab::kSt);
  T teacher, concat_trace;
  {
    NoGradScope<double> no_grad;
    const auto zx = model.EncodeText(x_flat, x_len);
    teacher = model.DecodeLogits(zx.hidden, mt_b.prefixes, mt_b.prefix_lengths).Clone();
    const auto cc = model.EncodeConcat(model.EncodeSpeech(frames, lens), x_flat, x_len);
    concat_trace = cc.speech.trace.Clone();
  }
  auto ddm = [&](const T &) {
    const auto zs = model.EncodeSpeechOnly(model.EncodeSpeech(frames, lens));
    return LossStDdm(model.DecodeLogits(zs.hidden, st_b.prefixes, st_b.prefix_lengths), teacher,
                     st_b, 0.8);
  };
  auto erm = [&](const T &) {
    const auto es = model.EncodeSpeech(frames, lens);
    return LossErm(concat_trace, model.EncodeSpeechOnly(es).trace, es.lengths);
  };
  double worst_ddm = 0, worst_erm = 0;
  uint64_t seed = 1;
  for (auto &p : model.params()) {
    GradCheckOptions opts;
    opts.eps = 1e-6;
    opts.max_coords = 2;
    opts.seed = seed++;
    worst_ddm = std::max(worst_ddm, GradCheck(ddm, p.value, opts));
    worst_erm = std::max(worst_erm, GradCheck(erm, p.value, opts));
  }
  CHECK(worst_ddm < 1e-4);
  CHECK(worst_erm < 1e-4);
}

TEST_CASE("finite-difference gradients of each loss with respect to its inputs") {
  const auto b = MakeDecoderBatch({{11, 12, 13}, {14, 15}}, {9, 10}, Vocab::kSt);
  const T s = Random({b.rows(), 17}, 1), t = Random({b.rows(), 17}, 2);
  const double tol = 1e-4;
  CHECK(GradCheck([&](const T &x) { return LossAsr(x, b); }, s.Clone()) < tol);
  CHECK(GradCheck([&](const T &x) { return LossStDdm(x, t, b, 0.8); }, s.Clone()) < tol);
  CHECK(GradCheck([&](const T &x) { return LossMtReg(x, t, b, 0.2); }, s.Clone()) < tol);
  CHECK(GradCheck([&](const T &x) { return LossMtp(x, b, {{0, 2}, {1}}); }, s.Clone()) < tol);
  CHECK(GradCheck([&](const T &x) { return LossStm(x, b, t, b).src; }, s.Clone()) < tol);
  CHECK(GradCheck([&](const T &x) { return LossStm(t, b, x, b).tgt; }, s.Clone()) < tol);
  const T trace = Random({6, 8}, 3), target = Random({6, 8}, 4);
  CHECK(GradCheck([&](const T &x) { return LossErm(target, x, {4, 2}); }, trace.Clone()) < tol);
}

TEST_CASE("empty mask set gives an exact zero masked-prediction loss") {
  const auto corpus = TinyCorpus(3, 5);
  const Batch batch = MakeBatch(corpus, 0.0, 1);
  M model(Tiny(), 1);
  NoGradScope<double> no_grad;
  const auto out = ForwardLosses<double>(model, nullptr, batch, TinyVocab(), Only(0, 0, 0, 1));
  CHECK(out.report.mtp == 0.0);
  CHECK(std::isfinite(out.report.stm_src));
}

TEST_CASE("fully masked transcript still gives finite losses") {
  const auto corpus = TinyCorpus(2, 6);
  Batch batch = MakeBatch(corpus, 0.0, 1);
  for (int i = 0; i < batch.batch_size; ++i) {
    const auto masked = MaskAll(TinyVocab(), batch.X(i));
    for (size_t j = 0; j < masked.first.size(); ++j) batch.x_masked[i * batch.max_x + j] = masked.first[j];
    batch.mask_positions[i] = masked.second;
  }
  M model(Tiny(), 1);
  NoGradScope<double> no_grad;
  const auto out = ForwardLosses<double>(model, nullptr, batch, TinyVocab(), Only(0, 0, 0, 1));
  CHECK(std::isfinite(out.report.mtp));
  CHECK(out.report.mtp > 0);
  CHECK(std::isfinite(out.report.stm_src));
  CHECK(std::isfinite(out.report.stm_tgt));
}

TEST_CASE("report total recomposes from its components") {
  const auto corpus = TinyCorpus(4, 8);
  const Batch batch = MakeBatch(corpus, 0.3, 2);
  M model(Tiny(), 3), frozen(Tiny(), 4);
  NoGradScope<double> no_grad;
  const LossWeights w;
  const auto out = ForwardLosses(model, &frozen, batch, TinyVocab(), w);
  const LossReport &r = out.report;
  CHECK(std::abs(RecomposeTotal(r, w) - r.total) < 1e-10);
  CHECK(std::abs(CmlValue(r.stm_src, r.stm_tgt, r.mtp, r.erm, w.w_erm) - r.cml) < 1e-10);
  CHECK(r.erm > 0);
}

TEST_CASE("duplicating every example leaves each component unchanged") {
  const auto corpus = TinyCorpus(3, 9);
  const Batch one = MakeBatch(corpus, 0.5, 4);
  // Same examples twice with identical masks.
  Batch two = one;
  two.batch_size *= 2;
  auto twice = [](auto &v) { v.insert(v.end(), v.begin(), v.end()); };
  twice(two.frames);
  twice(two.frame_lengths);
  twice(two.x);
  twice(two.x_masked);
  twice(two.y);
  twice(two.x_lengths);
  twice(two.y_lengths);
  twice(two.mask_positions);
  twice(two.src_lang);
  twice(two.tgt_lang);
  M model(Tiny(), 3), frozen(Tiny(), 4);
  NoGradScope<double> no_grad;
  const auto a = ForwardLosses(model, &frozen, one, TinyVocab(), LossWeights{}).report;
  const auto b = ForwardLosses(model, &frozen, two, TinyVocab(), LossWeights{}).report;
  CHECK(std::abs(a.asr - b.asr) < 1e-10);
  CHECK(std::abs(a.st - b.st) < 1e-10);
  CHECK(std::abs(a.mt - b.mt) < 1e-10);
  CHECK(std::abs(a.mtp - b.mtp) < 1e-10);
  CHECK(std::abs(a.stm_src - b.stm_src) < 1e-10);
  CHECK(std::abs(a.stm_tgt - b.stm_tgt) < 1e-10);
  CHECK(std::abs(a.erm - b.erm) < 1e-10);
  CHECK(std::abs(a.total - b.total) < 1e-10);
}

TEST_CASE("batched loss is the mean of single-example losses") {
  const auto corpus = TinyCorpus(3, 10);
  M model(Tiny(), 3), frozen(Tiny(), 4);
  NoGradScope<double> no_grad;
  LossWeights w;
  w.p_mask = 0.0;  // masks are drawn per batch; keep them out of this comparison
  const auto all = ForwardLosses(model, &frozen, MakeBatch(corpus, 0.0, 1), TinyVocab(), w).report;
  double asr = 0, st = 0, mt = 0, erm = 0, src = 0;
  for (const auto &ex : corpus) {
    const auto r = ForwardLosses(model, &frozen, MakeBatch({ex}, 0.0, 1), TinyVocab(), w).report;
    asr += r.asr / 3;
    st += r.st / 3;
    mt += r.mt / 3;
    erm += r.erm / 3;
    src += r.stm_src / 3;
  }
  CHECK(std::abs(all.asr - asr) < 1e-10);
  CHECK(std::abs(all.st - st) < 1e-10);
  CHECK(std::abs(all.mt - mt) < 1e-10);
  CHECK(std::abs(all.erm - erm) < 1e-10);
  CHECK(std::abs(all.stm_src - src) < 1e-10);
}

TEST_CASE("only-ST step equals a plain ST cross-entropy step") {
  const auto corpus = TinyCorpus(3, 12);
  const Batch batch = MakeBatch(corpus, 0.3, 1);
  M model(Tiny(), 3);
  LossWeights w = Only(0, 1, 0, 0);
  w.lambda_s = 0.0;
  auto grads = [&](auto &&loss_fn) {
    for (auto &p : model.params()) p.value.ZeroGrad();
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.Backward(loss_fn());
    std::vector<double> g;
    for (auto &p : model.params()) {
      if (p.value.has_grad()) g.insert(g.end(), p.value.grad().begin(), p.value.grad().end());
      else g.insert(g.end(), p.value.numel(), 0.0);
    }
    return g;
  };
  const auto via_step = grads([&] { return ForwardLosses<double>(model, nullptr, batch, TinyVocab(), w).total; });
  const auto direct = grads([&] {
    std::vector<const TripletExample *> ptrs;
    for (const auto &ex : corpus) ptrs.push_back(&ex);
    std::vector<int64_t> lens;
    const T frames = PackFrames<double>(ptrs, &lens);
    const auto zs = model.EncodeSpeechOnly(model.EncodeSpeech(frames, lens));
    std::vector<std::vector<int32_t>> ys;
    std::vector<int32_t> tags;
    for (const auto &ex : corpus) {
      ys.push_back(ex.y);
      tags.push_back(TinyVocab().LangTag(ex.src_lang));
    }
    const auto b = MakeDecoderBatch(ys, tags, Vocab::kSt);
    return LossAsr(model.DecodeLogits(zs.hidden, b.prefixes, b.prefix_lengths), b);
  });
  REQUIRE(via_step.size() == direct.size());
  double worst = 0;
  for (size_t i = 0; i < direct.size(); ++i) worst = std::max(worst, std::abs(via_step[i] - direct[i]));
  CHECK(worst < 1e-10);
  for (auto &p : model.params()) p.value.ZeroGrad();
}

TEST_CASE("each component is unchanged by which other tasks run") {
  const auto corpus = TinyCorpus(4, 13);
  const Batch batch = MakeBatch(corpus, 0.3, 2);
  M model(Tiny(), 3), frozen(Tiny(), 4);
  NoGradScope<double> no_grad;
  LossWeights all;
  all.lambda_s = 0.0;
  const auto joint = ForwardLosses(model, &frozen, batch, TinyVocab(), all).report;
  auto alone = [&](double asr, double st, double mt, double cml) {
    LossWeights w = Only(asr, st, mt, cml);
    w.lambda_s = 0.0;
    return ForwardLosses(model, &frozen, batch, TinyVocab(), w).report;
  };
  CHECK(std::abs(alone(1, 0, 0, 0).asr - joint.asr) < 1e-12);
  CHECK(std::abs(alone(0, 1, 0, 0).st - joint.st) < 1e-12);
  CHECK(std::abs(alone(0, 0, 1, 0).mt - joint.mt) < 1e-12);
  const auto cml = alone(0, 0, 0, 1);
  CHECK(std::abs(cml.mtp - joint.mtp) < 1e-12);
  CHECK(std::abs(cml.stm_src - joint.stm_src) < 1e-12);
  CHECK(std::abs(cml.stm_tgt - joint.stm_tgt) < 1e-12);
  CHECK(std::abs(cml.erm - joint.erm) < 1e-12);
  const auto st_asr = alone(1, 1, 0, 0);
  CHECK(std::abs(st_asr.st - joint.st) < 1e-12);
  CHECK(std::abs(st_asr.asr - joint.asr) < 1e-12);
}
