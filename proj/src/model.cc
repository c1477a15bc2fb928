// src/model.cc

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

#include "comsl/model.h"

#include <algorithm>
#include <cmath>

#include "comsl/random.h"

namespace comsl {

namespace {

enum Init { kZeros = 0, kOnes = 1, kXavier = 2, kEmbed = 3 };

std::vector<int64_t> Offsets(const std::vector<int64_t> &lengths) {
  std::vector<int64_t> off(lengths.size() + 1, 0);
  for (size_t i = 0; i < lengths.size(); ++i) off[i + 1] = off[i] + lengths[i];
  return off;
}

}  // namespace

const char *GroupName(ParamGroup g) {
  switch (g) {
    case ParamGroup::kSpeech: return "speech";
    case ParamGroup::kAdapter: return "adapter";
    case ParamGroup::kTextEnc: return "text-enc";
    case ParamGroup::kTextDec: return "text-dec";
    case ParamGroup::kSharedEmbed: return "shared-embed";
  }
  return "?";
}

int64_t AdapterLength(int64_t frames) { return ((frames + 1) / 2 + 1) / 2; }

template <typename Real>
ComSLModel<Real>::ComSLModel(const ModelConfig &cfg, uint64_t seed) : cfg_(cfg), init_rng_(seed) {
  auto errs = cfg.Validate();
  if (!errs.empty()) {
    std::string msg = "invalid model config:";
    for (const auto &e : errs) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  const int64_t d = cfg.d_model;
  speech_in_w_ = NewParam("speech.in.w", ParamGroup::kSpeech, {cfg.feat_dim, d}, kXavier);
  speech_in_b_ = NewParam("speech.in.b", ParamGroup::kSpeech, {d}, kZeros);
  for (int i = 0; i < cfg.speech_layers; ++i)
    speech_blocks_.push_back(MakeBlock("speech.block" + std::to_string(i), ParamGroup::kSpeech, false));
  speech_ln_g_ = NewParam("speech.ln.g", ParamGroup::kSpeech, {d}, kOnes);
  speech_ln_b_ = NewParam("speech.ln.b", ParamGroup::kSpeech, {d}, kZeros);
  for (int i = 0; i < 2; ++i) {
    const std::string p = "adapter.layer" + std::to_string(i);
    AdapterLayer a;
    a.ln_g = NewParam(p + ".ln.g", ParamGroup::kAdapter, {d}, kOnes);
    a.ln_b = NewParam(p + ".ln.b", ParamGroup::kAdapter, {d}, kZeros);
    a.ff_w1 = NewParam(p + ".ff.w1", ParamGroup::kAdapter, {d, 2 * d}, kXavier);
    a.ff_b1 = NewParam(p + ".ff.b1", ParamGroup::kAdapter, {2 * d}, kZeros);
    a.ff_w2 = NewParam(p + ".ff.w2", ParamGroup::kAdapter, {2 * d, d}, kXavier);
    a.ff_b2 = NewParam(p + ".ff.b2", ParamGroup::kAdapter, {d}, kZeros);
    a.conv_k = NewParam(p + ".conv.k", ParamGroup::kAdapter, {3, d, d}, kXavier);
    a.conv_b = NewParam(p + ".conv.b", ParamGroup::kAdapter, {d}, kZeros);
    adapter_.push_back(a);
  }
  embed_ = NewParam("embed.tokens", ParamGroup::kSharedEmbed, {cfg.vocab_size, d}, kEmbed);
  segment_ = NewParam("enc.segment", ParamGroup::kTextEnc, {2, d}, kEmbed);
  for (int i = 0; i < cfg.text_enc_layers; ++i)
    enc_blocks_.push_back(MakeBlock("enc.block" + std::to_string(i), ParamGroup::kTextEnc, false));
  enc_ln_g_ = NewParam("enc.ln.g", ParamGroup::kTextEnc, {d}, kOnes);
  enc_ln_b_ = NewParam("enc.ln.b", ParamGroup::kTextEnc, {d}, kZeros);
  for (int i = 0; i < cfg.text_dec_layers; ++i)
    dec_blocks_.push_back(MakeBlock("dec.block" + std::to_string(i), ParamGroup::kTextDec, true));
  dec_ln_g_ = NewParam("dec.ln.g", ParamGroup::kTextDec, {d}, kOnes);
  dec_ln_b_ = NewParam("dec.ln.b", ParamGroup::kTextDec, {d}, kZeros);

  const int64_t rows = std::max<int64_t>({cfg.max_frames, cfg.max_tokens + 2,
                                          AdapterLength(cfg.max_frames)});
  pos_table_ = Tensor<Real>({rows, d});
  auto pt = pos_table_.mutable_data();
  for (int64_t p = 0; p < rows; ++p)
    for (int64_t i = 0; i < d; i += 2) {
      const double angle = p / std::pow(10000.0, static_cast<double>(i) / d);
      pt[p * d + i] = static_cast<Real>(std::sin(angle));
      if (i + 1 < d) pt[p * d + i + 1] = static_cast<Real>(std::cos(angle));
    }
}

template <typename Real>
Tensor<Real> ComSLModel<Real>::NewParam(const std::string &name, ParamGroup group,
                                        const Shape &shape, int init) {
  Tensor<Real> t(shape);
  auto data = t.mutable_data();
  if (init == kOnes) {
    std::fill(data.begin(), data.end(), Real(1));
  } else if (init == kXavier || init == kEmbed) {
    double limit;
    if (init == kEmbed) {
      limit = std::sqrt(3.0 / static_cast<double>(shape.back()));
    } else {
      const double receptive = shape.size() == 3 ? static_cast<double>(shape[0]) : 1.0;
      const double fan_in = receptive * static_cast<double>(shape[shape.size() - 2]);
      const double fan_out = receptive * static_cast<double>(shape.back());
      limit = std::sqrt(6.0 / (fan_in + fan_out));
    }
    for (Real &v : data) v = static_cast<Real>((2.0 * UniformReal(init_rng_) - 1.0) * limit);
  }
  t.set_requires_grad(true);
  params_.push_back({name, group, t});
  return t;
}

template <typename Real>
typename ComSLModel<Real>::Attn ComSLModel<Real>::MakeAttn(const std::string &p, ParamGroup g) {
  const int64_t d = cfg_.d_model;
  Attn a;
  a.wq = NewParam(p + ".wq", g, {d, d}, kXavier);
  a.bq = NewParam(p + ".bq", g, {d}, kZeros);
  a.wk = NewParam(p + ".wk", g, {d, d}, kXavier);
  a.bk = NewParam(p + ".bk", g, {d}, kZeros);
  a.wv = NewParam(p + ".wv", g, {d, d}, kXavier);
  a.bv = NewParam(p + ".bv", g, {d}, kZeros);
  a.wo = NewParam(p + ".wo", g, {d, d}, kXavier);
  a.bo = NewParam(p + ".bo", g, {d}, kZeros);
  return a;
}

template <typename Real>
typename ComSLModel<Real>::Block ComSLModel<Real>::MakeBlock(const std::string &p, ParamGroup g,
                                                             bool decoder) {
  const int64_t d = cfg_.d_model, f = cfg_.ffn_dim;
  Block b;
  b.ln1_g = NewParam(p + ".ln1.g", g, {d}, kOnes);
  b.ln1_b = NewParam(p + ".ln1.b", g, {d}, kZeros);
  b.self = MakeAttn(p + ".self", g);
  if (decoder) {
    b.lnc_g = NewParam(p + ".lnc.g", g, {d}, kOnes);
    b.lnc_b = NewParam(p + ".lnc.b", g, {d}, kZeros);
    b.cross = MakeAttn(p + ".cross", g);
  }
  b.ln2_g = NewParam(p + ".ln2.g", g, {d}, kOnes);
  b.ln2_b = NewParam(p + ".ln2.b", g, {d}, kZeros);
  b.ff_w1 = NewParam(p + ".ff.w1", g, {d, f}, kXavier);
  b.ff_b1 = NewParam(p + ".ff.b1", g, {f}, kZeros);
  b.ff_w2 = NewParam(p + ".ff.w2", g, {f, d}, kXavier);
  b.ff_b2 = NewParam(p + ".ff.b2", g, {d}, kZeros);
  return b;
}

template <typename Real> Tensor<Real> &ComSLModel<Real>::Param(const std::string &name) {
  for (auto &p : params_)
    if (p.name == name) return p.value;
  throw TensorError("model: no parameter named " + name);
}

template <typename Real> int64_t ComSLModel<Real>::NumParameters() const {
  int64_t n = 0;
  for (const auto &p : params_) n += p.value.numel();
  return n;
}

template <typename Real> void ComSLModel<Real>::CopyParametersFrom(const ComSLModel &other) {
  if (other.params_.size() != params_.size())
    throw TensorError("model: parameter lists differ");
  for (size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name != other.params_[i].name ||
        params_[i].value.shape() != other.params_[i].value.shape())
      throw TensorError("model: parameter mismatch at " + params_[i].name);
    auto src = other.params_[i].value.data();
    std::copy(src.begin(), src.end(), params_[i].value.mutable_data().begin());
  }
}

template <typename Real>
Tensor<Real> ComSLModel<Real>::MaybeDropout(const Tensor<Real> &x, double p) {
  if (dropout_rng_ == nullptr || p <= 0.0) return x;
  return Dropout(x, p, dropout_rng_);
}

template <typename Real>
Tensor<Real> ComSLModel<Real>::AttnForward(const Attn &a, const Tensor<Real> &q_in,
                                           const Tensor<Real> &kv_in,
                                           const AttentionLayout &layout) {
  Tensor<Real> q = Linear(q_in, a.wq, a.bq);
  Tensor<Real> k = Linear(kv_in, a.wk, a.bk);
  Tensor<Real> v = Linear(kv_in, a.wv, a.bv);
  return Linear(MultiHeadAttention(q, k, v, cfg_.n_heads, layout), a.wo, a.bo);
}

template <typename Real>
Tensor<Real> ComSLModel<Real>::FeedForward(const Block &b, const Tensor<Real> &x) {
  return Linear(Gelu(Linear(x, b.ff_w1, b.ff_b1)), b.ff_w2, b.ff_b2);
}

template <typename Real>
Tensor<Real> ComSLModel<Real>::BlockForward(const Block &b, const Tensor<Real> &x,
                                            const AttentionLayout &self, double dropout,
                                            const Tensor<Real> *memory,
                                            const AttentionLayout *cross) {
  Tensor<Real> h = LayerNorm(x, b.ln1_g, b.ln1_b);
  Tensor<Real> out = comsl::Add(x, MaybeDropout(AttnForward(b.self, h, h, self), dropout));
  if (memory != nullptr) {
    h = LayerNorm(out, b.lnc_g, b.lnc_b);
    out = comsl::Add(out, MaybeDropout(AttnForward(b.cross, h, *memory, *cross), dropout));
  }
  h = LayerNorm(out, b.ln2_g, b.ln2_b);
  return comsl::Add(out, MaybeDropout(FeedForward(b, h), dropout));
}

template <typename Real>
Tensor<Real> ComSLModel<Real>::Positions(const std::vector<int64_t> &lengths) const {
  const int64_t d = cfg_.d_model;
  int64_t total = 0;
  for (int64_t l : lengths) {
    if (l > pos_table_.rows())
      throw TensorError("model: segment of length " + std::to_string(l) +
                        " exceeds position capacity " + std::to_string(pos_table_.rows()));
    total += l;
  }
  Tensor<Real> out({total, d});
  auto dst = out.mutable_data();
  auto src = pos_table_.data();
  int64_t row = 0;
  for (int64_t l : lengths)
    for (int64_t p = 0; p < l; ++p, ++row)
      std::copy(src.begin() + p * d, src.begin() + (p + 1) * d, dst.begin() + row * d);
  return out;
}

template <typename Real>
Tensor<Real> ComSLModel<Real>::TokenEmbedding(const std::vector<int32_t> &ids) const {
  return Scale(Embedding(embed_, ids), static_cast<Real>(std::sqrt(cfg_.d_model)));
}

template <typename Real> Tensor<Real> ComSLModel<Real>::Segment(int which, int64_t rows) {
  return Embedding(segment_, std::vector<int32_t>(rows, which));
}

template <typename Real>
Tensor<Real> ComSLModel<Real>::RunTextEncoder(const Tensor<Real> &x, const AttentionLayout &layout,
                                              Tensor<Real> *trace) {
  Tensor<Real> h = x;
  for (int i = 0; i < cfg_.text_enc_layers; ++i) {
    h = BlockForward(enc_blocks_[i], h, layout, cfg_.dropout_text, nullptr, nullptr);
    if (i + 1 == cfg_.erm_layer && trace != nullptr) *trace = h;
  }
  return LayerNorm(h, enc_ln_g_, enc_ln_b_);
}

template <typename Real>
void ComSLModel<Real>::CheckIds(const std::vector<int32_t> &ids,
                                const std::vector<int64_t> &lengths, int64_t max_len,
                                const char *what) const {
  if (lengths.empty()) throw TensorError(std::string(what) + ": empty batch");
  int64_t total = 0;
  for (int64_t l : lengths) {
    if (l < 1) throw TensorError(std::string(what) + ": empty sequence");
    if (l > max_len)
      throw TensorError(std::string(what) + ": sequence length " + std::to_string(l) +
                        " exceeds " + std::to_string(max_len));
    total += l;
  }
  if (total != static_cast<int64_t>(ids.size()))
    throw TensorError(std::string(what) + ": lengths do not cover the ids");
  for (int32_t id : ids)
    if (id < 0 || id >= cfg_.vocab_size)
      throw TensorError(std::string(what) + ": unknown token id " + std::to_string(id));
}

template <typename Real>
Packed<Real> ComSLModel<Real>::EncodeSpeech(const Tensor<Real> &frames,
                                            const std::vector<int64_t> &frame_lengths) {
  if (frame_lengths.empty()) throw TensorError("encode_speech: empty batch");
  int64_t total = 0;
  for (int64_t t : frame_lengths) {
    if (t < 1) throw TensorError("encode_speech: T = 0");
    if (t > cfg_.max_frames)
      throw TensorError("encode_speech: T = " + std::to_string(t) + " exceeds max_frames " +
                        std::to_string(cfg_.max_frames));
    total += t;
  }
  if (frames.rank() != 2 || frames.rows() != total || frames.cols() != cfg_.feat_dim)
    throw TensorError("encode_speech: frames shape " + ShapeToString(frames.shape()) +
                      " does not match lengths/feat_dim");
  Tensor<Real> x = comsl::Add(Linear(frames, speech_in_w_, speech_in_b_), Positions(frame_lengths));
  const AttentionLayout layout = AttentionLayout::Self(frame_lengths, false);
  for (const Block &b : speech_blocks_)
    x = BlockForward(b, x, layout, cfg_.dropout_speech, nullptr, nullptr);
  x = LayerNorm(x, speech_ln_g_, speech_ln_b_);
  std::vector<int64_t> lengths = frame_lengths;
  for (const AdapterLayer &a : adapter_) {
    Tensor<Real> h = LayerNorm(x, a.ln_g, a.ln_b);
    h = comsl::Add(x, Linear(Gelu(Linear(h, a.ff_w1, a.ff_b1)), a.ff_w2, a.ff_b2));
    x = Conv1dStride2(h, a.conv_k, a.conv_b, lengths);
    for (int64_t &l : lengths) l = (l + 1) / 2;
  }
  return {x, lengths};
}

template <typename Real>
Encoding<Real> ComSLModel<Real>::EncodeSpeechOnly(const Packed<Real> &speech) {
  Tensor<Real> x = comsl::Add(comsl::Add(speech.rows, Positions(speech.lengths)),
                              Segment(0, speech.rows.rows()));
  Encoding<Real> enc;
  enc.hidden.rows = RunTextEncoder(x, AttentionLayout::Self(speech.lengths, false), &enc.trace);
  enc.hidden.lengths = speech.lengths;
  return enc;
}

template <typename Real>
Encoding<Real> ComSLModel<Real>::EncodeText(const std::vector<int32_t> &ids,
                                            const std::vector<int64_t> &lengths) {
  CheckIds(ids, lengths, cfg_.max_tokens, "encode_text");
  Tensor<Real> x = comsl::Add(comsl::Add(TokenEmbedding(ids), Positions(lengths)),
                              Segment(1, static_cast<int64_t>(ids.size())));
  Encoding<Real> enc;
  enc.hidden.rows = RunTextEncoder(x, AttentionLayout::Self(lengths, false), &enc.trace);
  enc.hidden.lengths = lengths;
  return enc;
}

template <typename Real>
ConcatEncoding<Real> ComSLModel<Real>::EncodeConcat(const Packed<Real> &speech,
                                                    const std::vector<int32_t> &ids,
                                                    const std::vector<int64_t> &lengths,
                                                    bool block_diagonal) {
  CheckIds(ids, lengths, cfg_.max_tokens, "encode_concat");
  const size_t n = lengths.size();
  if (speech.lengths.size() != n) throw TensorError("encode_concat: batch sizes differ");
  const int64_t capacity = AdapterLength(cfg_.max_frames) + cfg_.max_tokens;
  for (size_t i = 0; i < n; ++i) {
    if (speech.lengths[i] < 1) throw TensorError("encode_concat: empty speech segment");
    if (speech.lengths[i] + lengths[i] > capacity)
      throw TensorError("encode_concat: combined length " +
                        std::to_string(speech.lengths[i] + lengths[i]) +
                        " exceeds position capacity " + std::to_string(capacity));
  }
  Tensor<Real> s_in = comsl::Add(comsl::Add(speech.rows, Positions(speech.lengths)),
                                 Segment(0, speech.rows.rows()));
  Tensor<Real> t_in = comsl::Add(comsl::Add(TokenEmbedding(ids), Positions(lengths)),
                                 Segment(1, static_cast<int64_t>(ids.size())));
  const std::vector<int64_t> s_off = Offsets(speech.lengths), t_off = Offsets(lengths);
  const int64_t s_total = s_off.back();

  // Interleave per example: [speech_i ; text_i].
  std::vector<int64_t> order, speech_rows, text_rows, joint;
  std::vector<int32_t> groups;
  for (size_t i = 0; i < n; ++i) {
    for (int64_t r = 0; r < speech.lengths[i]; ++r) {
      speech_rows.push_back(static_cast<int64_t>(order.size()));
      order.push_back(s_off[i] + r);
      groups.push_back(0);
    }
    for (int64_t r = 0; r < lengths[i]; ++r) {
      text_rows.push_back(static_cast<int64_t>(order.size()));
      order.push_back(s_total + t_off[i] + r);
      groups.push_back(1);
    }
    joint.push_back(speech.lengths[i] + lengths[i]);
  }
  AttentionLayout layout = AttentionLayout::Self(joint, false);
  if (block_diagonal) {
    layout.q_groups = groups;
    layout.k_groups = groups;
  }
  Tensor<Real> trace;
  Tensor<Real> out = RunTextEncoder(GatherRows(ConcatSeq(s_in, t_in), order), layout, &trace);

  ConcatEncoding<Real> enc;
  enc.speech.hidden = {GatherRows(out, speech_rows), speech.lengths};
  enc.speech.trace = GatherRows(trace, speech_rows);
  enc.text.hidden = {GatherRows(out, text_rows), lengths};
  enc.text.trace = GatherRows(trace, text_rows);
  return enc;
}

template <typename Real>
Tensor<Real> ComSLModel<Real>::DecodeLogits(const Packed<Real> &memory,
                                            const std::vector<int32_t> &prefixes,
                                            const std::vector<int64_t> &prefix_lengths,
                                            const std::vector<int64_t> &memory_index) {
  CheckIds(prefixes, prefix_lengths, cfg_.max_tokens + 2, "decode");
  const size_t n = prefix_lengths.size();
  if (!memory_index.empty() && memory_index.size() != n)
    throw TensorError("decode: memory_index size mismatch");
  if (memory_index.empty() && memory.lengths.size() != n)
    throw TensorError("decode: prefix and memory batch sizes differ");
  const std::vector<int64_t> m_off = Offsets(memory.lengths);
  AttentionLayout cross;
  int64_t q = 0;
  for (size_t i = 0; i < n; ++i) {
    const int64_t m = memory_index.empty() ? static_cast<int64_t>(i) : memory_index[i];
    if (m < 0 || m >= static_cast<int64_t>(memory.lengths.size()))
      throw TensorError("decode: memory index out of range");
    cross.q_offsets.push_back(q);
    cross.q_lengths.push_back(prefix_lengths[i]);
    cross.k_offsets.push_back(m_off[m]);
    cross.k_lengths.push_back(memory.lengths[m]);
    q += prefix_lengths[i];
  }
  const AttentionLayout self = AttentionLayout::Self(prefix_lengths, true);
  Tensor<Real> h = comsl::Add(TokenEmbedding(prefixes), Positions(prefix_lengths));
  for (const Block &b : dec_blocks_)
    h = BlockForward(b, h, self, cfg_.dropout_text, &memory.rows, &cross);
  h = LayerNorm(h, dec_ln_g_, dec_ln_b_);
  return MatMulNT(h, embed_);
}

template class ComSLModel<float>;
template class ComSLModel<double>;

}  // namespace comsl
