// comsl/model.h

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

// Speech encoder -> adapter -> shared text encoder -> text decoder.
//
// All forwards take packed batches: sequences are stacked row-wise with a
// per-sequence length vector and no padding rows.  Positions restart at 0 in
// every segment; the text encoder adds a learned segment embedding (0 for
// speech, 1 for text).  Decoder prefixes are [task tag, language tag, y...]
// and the output projection is tied to the token embedding.

#ifndef COMSL_MODEL_H_
#define COMSL_MODEL_H_

#include <cstdint>
#include <string>
#include <vector>

#include "comsl/config.h"
#include "comsl/ops.h"
#include "comsl/tensor.h"

namespace comsl {

enum class ParamGroup { kSpeech = 0, kAdapter, kTextEnc, kTextDec, kSharedEmbed };
const char *GroupName(ParamGroup g);

template <typename Real> struct NamedParam {
  std::string name;
  ParamGroup group;
  Tensor<Real> value;
};

/// ceil(ceil(T/2)/2): two stride-2 stages.
int64_t AdapterLength(int64_t frames);

template <typename Real> struct Packed {
  Tensor<Real> rows;             // sum(lengths) x d_model
  std::vector<int64_t> lengths;  // per sequence
};

template <typename Real> struct Encoding {
  Packed<Real> hidden;
  /// Residual stream after text-encoder block erm_layer, same rows as hidden.
  Tensor<Real> trace;
};

/// Encoder output of the concatenated speech + masked-text forward, already
/// split back into its two segments.
template <typename Real> struct ConcatEncoding {
  Encoding<Real> speech;
  Encoding<Real> text;
};


template <typename Real> class ComSLModel {
 public:
  /// Throws ConfigError listing every invalid field.
  ComSLModel(const ModelConfig &cfg, uint64_t seed);

  const ModelConfig &config() const { return cfg_; }
  std::vector<NamedParam<Real>> &params() { return params_; }
  const std::vector<NamedParam<Real>> &params() const { return params_; }
  Tensor<Real> &Param(const std::string &name);
  int64_t NumParameters() const;
  /// Copies parameter values from a model with the same config.
  void CopyParametersFrom(const ComSLModel &other);
  /// Dropout is active only while an RNG is installed.
  void SetDropoutRng(Rng *rng) { dropout_rng_ = rng; }

  /// frames: sum(T_i) x feat_dim.  Returns the adapter output e^s.
  Packed<Real> EncodeSpeech(const Tensor<Real> &frames, const std::vector<int64_t> &frame_lengths);
  /// Text encoder over e^s alone: z^s and its trace.
  Encoding<Real> EncodeSpeechOnly(const Packed<Real> &speech);
  /// Text encoder over token ids: z^x and its trace.
  Encoding<Real> EncodeText(const std::vector<int32_t> &ids, const std::vector<int64_t> &lengths);
  /// Text encoder over per-example [e^s_i ; emb(x'_i)].  block_diagonal keeps
  /// the two segments from attending to each other (diagnostic only).
  ConcatEncoding<Real> EncodeConcat(const Packed<Real> &speech, const std::vector<int32_t> &ids,
                                    const std::vector<int64_t> &lengths,
                                    bool block_diagonal = false);
  /// Next-token logits for every prefix position: sum(prefix_lengths) x |V|.
  /// Prefix i reads memory segment memory_index[i] (identity when empty).
  Tensor<Real> DecodeLogits(const Packed<Real> &memory, const std::vector<int32_t> &prefixes,
                            const std::vector<int64_t> &prefix_lengths,
                            const std::vector<int64_t> &memory_index = {});

 private:
  struct Attn {
    Tensor<Real> wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct Block {
    Tensor<Real> ln1_g, ln1_b;
    Attn self;
    Tensor<Real> lnc_g, lnc_b;  // decoder only
    Attn cross;                 // decoder only
    Tensor<Real> ln2_g, ln2_b, ff_w1, ff_b1, ff_w2, ff_b2;
  };
  struct AdapterLayer {
    Tensor<Real> ln_g, ln_b, ff_w1, ff_b1, ff_w2, ff_b2, conv_k, conv_b;
  };

  Tensor<Real> NewParam(const std::string &name, ParamGroup group, const Shape &shape, int init);
  Attn MakeAttn(const std::string &prefix, ParamGroup group);
  Block MakeBlock(const std::string &prefix, ParamGroup group, bool decoder);

  Tensor<Real> MaybeDropout(const Tensor<Real> &x, double p);
  Tensor<Real> AttnForward(const Attn &a, const Tensor<Real> &q_in, const Tensor<Real> &kv_in,
                           const AttentionLayout &layout);
  Tensor<Real> FeedForward(const Block &b, const Tensor<Real> &x);
  Tensor<Real> BlockForward(const Block &b, const Tensor<Real> &x, const AttentionLayout &self,
                            double dropout, const Tensor<Real> *memory,
                            const AttentionLayout *cross);
  /// Sinusoidal rows for positions restarting at each segment (no gradient).
  Tensor<Real> Positions(const std::vector<int64_t> &lengths) const;
  Tensor<Real> TokenEmbedding(const std::vector<int32_t> &ids) const;
  Tensor<Real> Segment(int which, int64_t rows);
  /// Runs the text-encoder stack; trace receives the stream after erm_layer.
  Tensor<Real> RunTextEncoder(const Tensor<Real> &x, const AttentionLayout &layout,
                              Tensor<Real> *trace);
  void CheckIds(const std::vector<int32_t> &ids, const std::vector<int64_t> &lengths,
                int64_t max_len, const char *what) const;

  ModelConfig cfg_;
  Rng init_rng_;
  std::vector<NamedParam<Real>> params_;
  Rng *dropout_rng_ = nullptr;

  Tensor<Real> speech_in_w_, speech_in_b_, speech_ln_g_, speech_ln_b_;
  std::vector<Block> speech_blocks_;
  std::vector<AdapterLayer> adapter_;
  Tensor<Real> embed_, segment_;
  std::vector<Block> enc_blocks_;
  Tensor<Real> enc_ln_g_, enc_ln_b_;
  std::vector<Block> dec_blocks_;
  Tensor<Real> dec_ln_g_, dec_ln_b_;
  Tensor<Real> pos_table_;
};

}  // namespace comsl

#endif  // COMSL_MODEL_H_
