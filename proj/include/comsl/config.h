// comsl/config.h

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

// Run configuration: model, loss, trainer and data settings, each addressable
// as "section.name" for key=value files and --set overrides.

#ifndef COMSL_CONFIG_H_
#define COMSL_CONFIG_H_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace comsl {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string &msg) : std::runtime_error(msg) {}
};

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int ffn_dim = 256;
  int speech_layers = 2;
  int text_enc_layers = 4;
  int text_dec_layers = 2;
  /// Text-encoder block whose output is matched by the representation loss.
  int erm_layer = 4;
  int feat_dim = 16;
  int max_frames = 256;
  /// Longest transcript or translation, excluding tags and EOS.
  int max_tokens = 16;
  int vocab_size = 62;
  double dropout_text = 0.1;
  double attn_dropout_text = 0.0;
  double dropout_speech = 0.0;

  /// One message per violated invariant; empty when valid.
  std::vector<std::string> Validate() const;
};

struct LossWeights {
  double w_asr = 0.35;
  double w_st = 0.35;
  double w_mt = 0.2;
  double w_cml = 0.1;
  double w_erm = 0.1;
  double lambda_s = 0.8;
  double lambda_t = 0.2;
  double p_mask = 0.3;

  std::vector<std::string> Validate() const;
};

struct TrainConfig {
  double lr_peak = 4e-3;
  int warmup_steps = 200;
  int total_steps = 3000;
  double freeze_fraction = 1.0 / 3.0;
  int batch_size = 32;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  double weight_decay = 0.1;
  double grad_clip = 1.0;  // global norm; 0 disables
  int validation_every = 500;
  /// Validation examples decoded at each check; 0 means all.
  int validation_limit = 0;
  int beam = 5;
  uint64_t seed = 1;
  // Text-only pre-finetuning stage.
  int pretrain_steps = 1500;
  double pretrain_lr = 2e-3;
  int pretrain_warmup = 100;

  std::vector<std::string> Validate() const;
};

struct DataConfig {
  int n_content = 50;
  int n_langs = 4;
  int n_examples = 8800;
  /// Relative share per source language, comma separated.
  std::string lang_weights = "4,2,1,1";
  double valid_fraction = 0.1;
  double noise_sigma = 0.1;
  double pause_prob = 0.1;
  int min_tokens = 3;
  int max_tokens = 12;
  uint64_t seed = 7;
  uint64_t acoustic_seed = 1234;
  /// Unlabeled pool size for self-training and the languages it covers.
  int pseudo_examples = 600;
  std::string pseudo_langs = "3";

  std::vector<double> LangWeights() const;
  std::vector<int> PseudoLangs() const;
  std::vector<std::string> Validate() const;
};

struct RunConfig {
  ModelConfig model;
  LossWeights loss;
  TrainConfig train;
  DataConfig data;
  std::string corpus_dir = "corpus";
  std::string checkpoint_dir = "checkpoints";
  std::string log_path = "train.log";

  /// Checks every section plus cross-section consistency (vocab size,
  /// feature width, lengths).  Throws ConfigError listing every problem.
  void Check() const;
};

/// Sets one "section.name" key; throws ConfigError naming the key when it
/// is unknown or the value does not parse.
void SetConfigKey(RunConfig &cfg, const std::string &key, const std::string &value);
/// Applies "key = value" lines; '#' starts a comment.
void ApplyConfigText(RunConfig &cfg, const std::string &text, const std::string &origin = "config");
/// Defaults, then the file (if path is nonempty), then overrides, then Check().
RunConfig ParseConfig(const std::string &path, const std::vector<std::string> &overrides);
/// Every key in registry order, one "key = value" line each.  Reading the
/// text back with ApplyConfigText reproduces the config exactly.
std::string ConfigToText(const RunConfig &cfg);
std::vector<std::string> ConfigKeys();

/// Model-only echo stored in checkpoints.
std::string ModelConfigToText(const ModelConfig &cfg);
ModelConfig ModelConfigFromText(const std::string &text);

}  // namespace comsl

#endif  // COMSL_CONFIG_H_
