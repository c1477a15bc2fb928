// tests/model_test.cc

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
#include <map>
#include <random>
#include <set>

#include "comsl/grad_check.h"
#include "comsl/model.h"
#include "doctest.h"

using namespace comsl;
using M = ComSLModel<double>;
using T = Tensor<double>;

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

T Frames(int64_t rows, int64_t feat, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  T t({rows, feat});
  for (double &v : t.mutable_data()) v = nd(rng);
  return t;
}

std::vector<double> Values(const T &t) { return {t.data().begin(), t.data().end()}; }

std::vector<double> Rows(const T &t, int64_t begin, int64_t end) {
  return {t.data().begin() + begin * t.cols(), t.data().begin() + end * t.cols()};
}

double MaxAbsDiff(const std::vector<double> &a, const std::vector<double> &b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("parameter count matches the closed form") {
  ModelConfig c = Tiny();
  M m(c, 1);
  const int64_t d = c.d_model, f = c.ffn_dim, V = c.vocab_size, F = c.feat_dim;
  const int64_t ln = 2 * d;
  const int64_t attn = 4 * (d * d + d);
  const int64_t ff = d * f + f + f * d + d;
  const int64_t enc_block = ln + attn + ln + ff;
  const int64_t dec_block = enc_block + ln + attn;
  const int64_t adapter_layer = ln + (d * 2 * d + 2 * d) + (2 * d * d + d) + (3 * d * d + d);
  const int64_t expected = (F * d + d) + c.speech_layers * enc_block + ln  // speech
                           + 2 * adapter_layer                                // adapter
                           + V * d + 2 * d                                     // tokens, segments
                           + c.text_enc_layers * enc_block + ln                // encoder
                           + c.text_dec_layers * dec_block + ln;               // decoder
  CHECK(m.NumParameters() == expected);
  // Hand sum: speech 1256 + adapter 992 + embeddings 152 + encoder 1216 + decoder 1824.
  CHECK(expected == 5440);
}

TEST_CASE("parameter names are unique and groups partition the parameters") {
  M m(Tiny(), 1);
  std::set<std::string> names;
  std::map<ParamGroup, int> per_group;
  for (const auto &p : m.params()) {
    CHECK(names.insert(p.name).second);
    ++per_group[p.group];
    const std::string prefix = p.name.substr(0, p.name.find('.'));
    if (prefix == "speech") CHECK(p.group == ParamGroup::kSpeech);
    if (prefix == "adapter") CHECK(p.group == ParamGroup::kAdapter);
    if (prefix == "enc") CHECK(p.group == ParamGroup::kTextEnc);
    if (prefix == "dec") CHECK(p.group == ParamGroup::kTextDec);
    if (prefix == "embed") CHECK(p.group == ParamGroup::kSharedEmbed);
    CHECK(p.value.requires_grad());
  }
  CHECK(per_group.size() == 5);
  CHECK_THROWS_AS(m.Param("nope"), TensorError);
}

TEST_CASE("initialization is deterministic per seed") {
  M a(Tiny(), 3), b(Tiny(), 3), c(Tiny(), 4);
  bool any_diff = false;
  for (size_t i = 0; i < a.params().size(); ++i) {
    CHECK(Values(a.params()[i].value) == Values(b.params()[i].value));
    if (Values(a.params()[i].value) != Values(c.params()[i].value)) any_diff = true;
  }
  CHECK(any_diff);
  // Gains are ones, biases zeros.
  for (double v : a.Param("enc.ln.g").data()) CHECK(v == 1.0);
  for (double v : a.Param("dec.block0.ff.b1").data()) CHECK(v == 0.0);
}

TEST_CASE("invalid configs are rejected with every problem listed") {
  ModelConfig c = Tiny();
  c.text_enc_layers = 4;
  c.erm_layer = 5;
  CHECK_THROWS_AS(M(c, 1), ConfigError);
  c.n_heads = 3;
  c.max_frames = 3;
  auto errs = c.Validate();
  CHECK(errs.size() == 3);
  try {
    M m(c, 1);
  } catch (const ConfigError &e) {
    std::string msg = e.what();
    CHECK(msg.find("erm_layer") != std::string::npos);
    CHECK(msg.find("n_heads") != std::string::npos);
    CHECK(msg.find("max_frames") != std::string::npos);
  }
}

TEST_CASE("adapter length law") {
  CHECK(AdapterLength(16) == 4);
  CHECK(AdapterLength(11) == 3);
  CHECK(AdapterLength(1) == 1);
  M m(Tiny(), 2);
  NoGradScope<double> ng;
  for (int64_t t = 1; t <= 64; ++t) {
    auto e = m.EncodeSpeech(Frames(t, 4, t), {t});
    const int64_t expect = static_cast<int64_t>(std::ceil(std::ceil(t / 2.0) / 2.0));
    CHECK(e.rows.rows() == expect);
    CHECK(e.lengths == std::vector<int64_t>{expect});
  }
  CHECK_THROWS_AS(m.EncodeSpeech(Frames(0, 4, 1), {0}), TensorError);
  CHECK_THROWS_AS(m.EncodeSpeech(Frames(65, 4, 1), {65}), TensorError);
}

TEST_CASE("packed batches equal separate forwards") {
  M m(Tiny(), 5);
  NoGradScope<double> ng;
  T f1 = Frames(9, 4, 1), f2 = Frames(14, 4, 2);
  T both({23, 4});
  auto dst = both.mutable_data();
  std::copy(f1.data().begin(), f1.data().end(), dst.begin());
  std::copy(f2.data().begin(), f2.data().end(), dst.begin() + 36);
  auto sep1 = m.EncodeSpeech(f1, {9}), sep2 = m.EncodeSpeech(f2, {14});
  auto joint = m.EncodeSpeech(both, {9, 14});
  CHECK(joint.lengths == std::vector<int64_t>{3, 4});
  CHECK(MaxAbsDiff(Rows(joint.rows, 0, 3), Values(sep1.rows)) < 1e-12);
  CHECK(MaxAbsDiff(Rows(joint.rows, 3, 7), Values(sep2.rows)) < 1e-12);

  auto z1 = m.EncodeSpeechOnly(sep1), zj = m.EncodeSpeechOnly(joint);
  CHECK(MaxAbsDiff(Rows(zj.hidden.rows, 0, 3), Values(z1.hidden.rows)) < 1e-12);

  auto t1 = m.EncodeText({13, 14, 15}, {3}), t2 = m.EncodeText({9, 16}, {2});
  auto tj = m.EncodeText({13, 14, 15, 9, 16}, {3, 2});
  CHECK(MaxAbsDiff(Rows(tj.hidden.rows, 0, 3), Values(t1.hidden.rows)) < 1e-12);
  CHECK(MaxAbsDiff(Rows(tj.hidden.rows, 3, 5), Values(t2.hidden.rows)) < 1e-12);
  CHECK(MaxAbsDiff(Rows(tj.trace, 3, 5), Values(t2.trace)) < 1e-12);

  auto d1 = m.DecodeLogits(t1.hidden, {4, 8, 13}, {3});
  auto d2 = m.DecodeLogits(t2.hidden, {5, 8, 9, 10}, {4});
  auto dj = m.DecodeLogits(tj.hidden, {4, 8, 13, 5, 8, 9, 10}, {3, 4});
  CHECK(MaxAbsDiff(Rows(dj, 0, 3), Values(d1)) < 1e-12);
  CHECK(MaxAbsDiff(Rows(dj, 3, 7), Values(d2)) < 1e-12);
  // Shared memory through an index (beam search layout).
  auto shared = m.DecodeLogits(tj.hidden, {5, 8, 9, 10, 4, 8, 13}, {4, 3}, {1, 0});
  CHECK(MaxAbsDiff(Rows(shared, 0, 4), Values(d2)) < 1e-12);
  CHECK(MaxAbsDiff(Rows(shared, 4, 7), Values(d1)) < 1e-12);
}

TEST_CASE("text encoding shape, determinism and order sensitivity") {
  M m(Tiny(), 6);
  NoGradScope<double> ng;
  auto a = m.EncodeText({10, 11}, {2});
  auto a2 = m.EncodeText({10, 11}, {2});
  auto b = m.EncodeText({11, 10}, {2});
  CHECK(a.hidden.rows.shape() == Shape{2, 8});
  CHECK(a.trace.shape() == Shape{2, 8});
  CHECK(Values(a.hidden.rows) == Values(a2.hidden.rows));
  CHECK(MaxAbsDiff(Values(a.hidden.rows), Values(b.hidden.rows)) > 1e-3);
  CHECK_THROWS_AS(m.EncodeText({17}, {1}), TensorError);
  CHECK_THROWS_AS(m.EncodeText({-1}, {1}), TensorError);
  CHECK_THROWS_AS(m.EncodeText(std::vector<int32_t>(9, 10), {9}), TensorError);
}

TEST_CASE("concatenated encoding") {
  M m(Tiny(), 7);
  T frames = Frames(13, 4, 9);
  const std::vector<int32_t> masked = {10, 3, 12, 3};
  SUBCASE("split law") {
    NoGradScope<double> ng;
    auto es = m.EncodeSpeech(frames, {13});
    auto c = m.EncodeConcat(es, masked, {4});
    CHECK(c.speech.hidden.rows.rows() == es.rows.rows());
    CHECK(c.speech.hidden.lengths == es.lengths);
    CHECK(c.text.hidden.rows.rows() == 4);
    CHECK(c.speech.trace.shape() == c.speech.hidden.rows.shape());
  }
  SUBCASE("block-diagonal diagnostic isolates the segments") {
    NoGradScope<double> ng;
    auto es = m.EncodeSpeech(frames, {13});
    auto c = m.EncodeConcat(es, masked, {4}, true);
    auto t = m.EncodeText(masked, {4});
    auto s = m.EncodeSpeechOnly(es);
    CHECK(MaxAbsDiff(Values(c.text.hidden.rows), Values(t.hidden.rows)) < 1e-12);
    CHECK(MaxAbsDiff(Values(c.speech.hidden.rows), Values(s.hidden.rows)) < 1e-12);
    CHECK(MaxAbsDiff(Values(c.speech.trace), Values(s.trace)) < 1e-12);
    auto full = m.EncodeConcat(es, masked, {4}, false);
    CHECK(MaxAbsDiff(Values(full.text.hidden.rows), Values(t.hidden.rows)) > 1e-6);
  }
  SUBCASE("cross-segment attention carries gradient into the speech embedding") {
    T es_rows;
    {
      NoGradScope<double> ng;
      es_rows = m.EncodeSpeech(frames, {13}).rows.Clone();
    }
    auto loss = [&](const T &e) {
      auto c = m.EncodeConcat({e, {4}}, masked, {4});
      return Sum(Mul(c.text.hidden.rows, c.text.hidden.rows));
    };
    auto g = TapeGradient(loss, es_rows);
    double norm = 0;
    for (double v : g) norm += v * v;
    CHECK(norm > 1e-12);
    GradCheckOptions o;
    o.max_coords = 8;
    CHECK(GradCheck(loss, es_rows, o) < 1e-6);
    auto iso = [&](const T &e) {
      auto c = m.EncodeConcat({e, {4}}, masked, {4}, true);
      return Sum(Mul(c.text.hidden.rows, c.text.hidden.rows));
    };
    for (double v : TapeGradient(iso, es_rows)) CHECK(v == 0.0);
  }
  SUBCASE("capacity") {
    NoGradScope<double> ng;
    auto es = m.EncodeSpeech(Frames(64, 4, 1), {64});  // 16 rows; capacity 16 + 8
    CHECK_NOTHROW(m.EncodeConcat(es, std::vector<int32_t>(8, 10), {8}));
    Packed<double> big{T(Shape{17, 8}), {17}};
    CHECK_THROWS_AS(m.EncodeConcat(big, std::vector<int32_t>(8, 10), {8}), TensorError);
  }
}

TEST_CASE("decoder causality") {
  M m(Tiny(), 8);
  NoGradScope<double> ng;
  auto mem = m.EncodeText({10, 11, 12}, {3});
  const std::vector<int32_t> prefix = {4, 8, 13, 14, 15, 16};
  T base = m.DecodeLogits(mem.hidden, prefix, {6});
  CHECK(base.shape() == Shape{6, 17});
  for (int j = 1; j < 6; ++j) {
    auto changed = prefix;
    changed[j] = changed[j] == 9 ? 10 : 9;
    T out = m.DecodeLogits(mem.hidden, changed, {6});
    CHECK(Rows(out, 0, j) == Rows(base, 0, j));
    CHECK(Rows(out, j, 6) != Rows(base, j, 6));
  }
  // Perturb the embedding row of the token at position 5 (used nowhere
  // earlier); rows 0..4 may only move in that token's own output column.
  T &emb = m.Param("embed.tokens");
  const double saved = emb.mutable_data()[16 * 8 + 3];
  emb.mutable_data()[16 * 8 + 3] += 1e-3;
  T out = m.DecodeLogits(mem.hidden, prefix, {6});
  emb.mutable_data()[16 * 8 + 3] = saved;
  for (int r = 0; r < 5; ++r)
    for (int v = 0; v < 17; ++v)
      if (v != 16) CHECK(out.at(r, v) == base.at(r, v));
  CHECK(out.at(5, 0) != base.at(5, 0));
  CHECK_THROWS_AS(m.DecodeLogits(mem.hidden, {}, {0}), TensorError);
}

TEST_CASE("cross-attention is live") {
  M m(Tiny(), 9);
  NoGradScope<double> ng;
  auto mem = m.EncodeText({10, 11, 12}, {3});
  Packed<double> zeros{T(Shape{3, 8}), {3}};
  T a = m.DecodeLogits(mem.hidden, {4, 8, 13}, {3});
  T b = m.DecodeLogits(zeros, {4, 8, 13}, {3});
  CHECK(MaxAbsDiff(Values(a), Values(b)) > 1e-6);
}

TEST_CASE("dropout only with an installed rng") {
  ModelConfig c = Tiny();
  c.dropout_text = 0.3;
  M m(c, 10);
  NoGradScope<double> ng;
  auto a = m.EncodeText({10, 11, 12}, {3});
  auto b = m.EncodeText({10, 11, 12}, {3});
  CHECK(Values(a.hidden.rows) == Values(b.hidden.rows));
  Rng rng(1);
  m.SetDropoutRng(&rng);
  auto d = m.EncodeText({10, 11, 12}, {3});
  m.SetDropoutRng(nullptr);
  CHECK(Values(d.hidden.rows) != Values(a.hidden.rows));
}

TEST_CASE("parameter copy") {
  M a(Tiny(), 1), b(Tiny(), 2);
  b.CopyParametersFrom(a);
  for (size_t i = 0; i < a.params().size(); ++i)
    CHECK(Values(a.params()[i].value) == Values(b.params()[i].value));
  CHECK_FALSE(a.params()[0].value.SameStorage(b.params()[0].value));
}
