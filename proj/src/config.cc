// src/config.cc

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

#include "comsl/config.h"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace comsl {

namespace {

std::string Trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename V> V ParseNumber(const std::string &key, const std::string &text) {
  V v{};
  const char *end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty())
    throw ConfigError(key + ": cannot parse '" + text + "'");
  return v;
}

std::string Format(int v) { return std::to_string(v); }
std::string Format(uint64_t v) { return std::to_string(v); }
std::string Format(const std::string &v) { return v; }
std::string Format(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void Assign(const std::string &key, const std::string &text, int &out) {
  out = ParseNumber<int>(key, text);
}
void Assign(const std::string &key, const std::string &text, uint64_t &out) {
  out = ParseNumber<uint64_t>(key, text);
}
void Assign(const std::string &key, const std::string &text, double &out) {
  out = ParseNumber<double>(key, text);
}
void Assign(const std::string &, const std::string &text, std::string &out) { out = text; }

struct Entry {
  std::string key;
  std::function<void(RunConfig &, const std::string &)> set;
  std::function<std::string(const RunConfig &)> get;
};

#define COMSL_KEY(section, field)                                                       \
  Entry {                                                                               \
    #section "." #field,                                                                \
        [](RunConfig &c, const std::string &v) { Assign(#section "." #field, v, c.section.field); }, \
        [](const RunConfig &c) { return Format(c.section.field); }                      \
  }
#define COMSL_PATH(field)                                                                \
  Entry {                                                                                \
    "path." #field, [](RunConfig &c, const std::string &v) { c.field = v; },            \
        [](const RunConfig &c) { return c.field; }                                       \
  }

const std::vector<Entry> &Registry() {
  static const std::vector<Entry> entries = {
      COMSL_KEY(model, d_model),          COMSL_KEY(model, n_heads),
      COMSL_KEY(model, ffn_dim),          COMSL_KEY(model, speech_layers),
      COMSL_KEY(model, text_enc_layers),  COMSL_KEY(model, text_dec_layers),
      COMSL_KEY(model, erm_layer),        COMSL_KEY(model, feat_dim),
      COMSL_KEY(model, max_frames),       COMSL_KEY(model, max_tokens),
      COMSL_KEY(model, vocab_size),       COMSL_KEY(model, dropout_text),
      COMSL_KEY(model, attn_dropout_text), COMSL_KEY(model, dropout_speech),
      COMSL_KEY(loss, w_asr),             COMSL_KEY(loss, w_st),
      COMSL_KEY(loss, w_mt),              COMSL_KEY(loss, w_cml),
      COMSL_KEY(loss, w_erm),             COMSL_KEY(loss, lambda_s),
      COMSL_KEY(loss, lambda_t),          COMSL_KEY(loss, p_mask),
      COMSL_KEY(train, lr_peak),          COMSL_KEY(train, warmup_steps),
      COMSL_KEY(train, total_steps),      COMSL_KEY(train, freeze_fraction),
      COMSL_KEY(train, batch_size),       COMSL_KEY(train, beta1),
      COMSL_KEY(train, beta2),            COMSL_KEY(train, adam_eps),
      COMSL_KEY(train, weight_decay),     COMSL_KEY(train, grad_clip),
      COMSL_KEY(train, validation_every), COMSL_KEY(train, validation_limit),
      COMSL_KEY(train, beam),             COMSL_KEY(train, seed),
      COMSL_KEY(train, pretrain_steps),   COMSL_KEY(train, pretrain_lr),
      COMSL_KEY(train, pretrain_warmup),  COMSL_KEY(data, n_content),
      COMSL_KEY(data, n_langs),           COMSL_KEY(data, n_examples),
      COMSL_KEY(data, lang_weights),      COMSL_KEY(data, valid_fraction),
      COMSL_KEY(data, noise_sigma),       COMSL_KEY(data, pause_prob),
      COMSL_KEY(data, min_tokens),        COMSL_KEY(data, max_tokens),
      COMSL_KEY(data, seed),              COMSL_KEY(data, acoustic_seed),
      COMSL_KEY(data, pseudo_examples),   COMSL_KEY(data, pseudo_langs),
      COMSL_PATH(corpus_dir),             COMSL_PATH(checkpoint_dir),
      COMSL_PATH(log_path),
  };
  return entries;
}

#undef COMSL_KEY
#undef COMSL_PATH

std::vector<std::string> SplitCommas(const std::string &s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(Trim(item));
  return out;
}

void Require(std::vector<std::string> &errs, bool ok, const std::string &msg) {
  if (!ok) errs.push_back(msg);
}

std::string JoinErrors(const std::vector<std::string> &errs) {
  std::string s;
  for (const auto &e : errs) s += (s.empty() ? "" : "; ") + e;
  return s;
}

}  // namespace

std::vector<std::string> ModelConfig::Validate() const {
  std::vector<std::string> e;
  Require(e, d_model > 0, "model.d_model must be positive");
  Require(e, n_heads > 0, "model.n_heads must be positive");
  if (d_model > 0 && n_heads > 0)
    Require(e, d_model % n_heads == 0, "model.d_model must be divisible by model.n_heads");
  Require(e, ffn_dim > 0, "model.ffn_dim must be positive");
  Require(e, speech_layers > 0, "model.speech_layers must be positive");
  Require(e, text_enc_layers > 0, "model.text_enc_layers must be positive");
  Require(e, text_dec_layers > 0, "model.text_dec_layers must be positive");
  Require(e, erm_layer >= 1 && erm_layer <= text_enc_layers,
          "model.erm_layer must be in [1, model.text_enc_layers]");
  Require(e, feat_dim > 0, "model.feat_dim must be positive");
  Require(e, max_frames >= 4, "model.max_frames must be >= 4");
  Require(e, max_tokens >= 1, "model.max_tokens must be >= 1");
  Require(e, vocab_size > 0, "model.vocab_size must be positive");
  Require(e, dropout_text >= 0 && dropout_text < 1, "model.dropout_text must be in [0,1)");
  Require(e, dropout_speech >= 0 && dropout_speech < 1, "model.dropout_speech must be in [0,1)");
  Require(e, attn_dropout_text == 0.0, "model.attn_dropout_text: only 0 is supported");
  return e;
}

std::vector<std::string> LossWeights::Validate() const {
  std::vector<std::string> e;
  Require(e, w_asr >= 0, "loss.w_asr must be >= 0");
  Require(e, w_st >= 0, "loss.w_st must be >= 0");
  Require(e, w_mt >= 0, "loss.w_mt must be >= 0");
  Require(e, w_cml >= 0, "loss.w_cml must be >= 0");
  Require(e, w_erm >= 0, "loss.w_erm must be >= 0");
  Require(e, lambda_s >= 0 && lambda_s <= 1, "loss.lambda_s must be in [0,1]");
  Require(e, lambda_t >= 0 && lambda_t <= 1, "loss.lambda_t must be in [0,1]");
  Require(e, p_mask >= 0 && p_mask < 1, "loss.p_mask must be in [0,1)");
  return e;
}

std::vector<std::string> TrainConfig::Validate() const {
  std::vector<std::string> e;
  Require(e, lr_peak > 0, "train.lr_peak must be positive");
  Require(e, total_steps > 0, "train.total_steps must be positive");
  Require(e, warmup_steps >= 0 && warmup_steps < total_steps,
          "train.warmup_steps must be in [0, train.total_steps)");
  Require(e, freeze_fraction >= 0 && freeze_fraction <= 1, "train.freeze_fraction must be in [0,1]");
  Require(e, batch_size > 0, "train.batch_size must be positive");
  Require(e, beta1 >= 0 && beta1 < 1, "train.beta1 must be in [0,1)");
  Require(e, beta2 >= 0 && beta2 < 1, "train.beta2 must be in [0,1)");
  Require(e, adam_eps > 0, "train.adam_eps must be positive");
  Require(e, weight_decay >= 0, "train.weight_decay must be >= 0");
  Require(e, grad_clip >= 0, "train.grad_clip must be >= 0");
  Require(e, validation_every > 0, "train.validation_every must be positive");
  Require(e, validation_limit >= 0, "train.validation_limit must be >= 0");
  Require(e, beam >= 1, "train.beam must be >= 1");
  Require(e, pretrain_steps >= 0, "train.pretrain_steps must be >= 0");
  Require(e, pretrain_lr > 0, "train.pretrain_lr must be positive");
  Require(e, pretrain_warmup >= 0, "train.pretrain_warmup must be >= 0");
  if (pretrain_steps > 0)
    Require(e, pretrain_warmup < pretrain_steps,
            "train.pretrain_warmup must be < train.pretrain_steps");
  return e;
}

std::vector<double> DataConfig::LangWeights() const {
  std::vector<double> w;
  for (const auto &s : SplitCommas(lang_weights)) w.push_back(ParseNumber<double>("data.lang_weights", s));
  return w;
}

std::vector<int> DataConfig::PseudoLangs() const {
  std::vector<int> out;
  if (Trim(pseudo_langs).empty()) return out;
  for (const auto &s : SplitCommas(pseudo_langs)) out.push_back(ParseNumber<int>("data.pseudo_langs", s));
  return out;
}

std::vector<std::string> DataConfig::Validate() const {
  std::vector<std::string> e;
  Require(e, n_content >= 2, "data.n_content must be >= 2");
  Require(e, n_content % 7 != 0, "data.n_content must be coprime to 7");
  Require(e, n_langs >= 1, "data.n_langs must be >= 1");
  Require(e, n_examples >= 2, "data.n_examples must be >= 2");
  try {
    auto w = LangWeights();
    Require(e, static_cast<int>(w.size()) == n_langs, "data.lang_weights needs one entry per language");
    for (double x : w) Require(e, x >= 0, "data.lang_weights entries must be >= 0");
  } catch (const ConfigError &err) {
    e.push_back(err.what());
  }
  try {
    for (int l : PseudoLangs()) Require(e, l >= 0 && l < n_langs, "data.pseudo_langs entry out of range");
  } catch (const ConfigError &err) {
    e.push_back(err.what());
  }
  Require(e, valid_fraction > 0 && valid_fraction < 1, "data.valid_fraction must be in (0,1)");
  Require(e, noise_sigma >= 0, "data.noise_sigma must be >= 0");
  Require(e, pause_prob >= 0 && pause_prob <= 1, "data.pause_prob must be in [0,1]");
  Require(e, min_tokens >= 1 && max_tokens >= min_tokens, "data.min_tokens/max_tokens out of order");
  Require(e, pseudo_examples >= 0, "data.pseudo_examples must be >= 0");
  return e;
}

void RunConfig::Check() const {
  std::vector<std::string> e = model.Validate();
  for (auto &&v : {loss.Validate(), train.Validate(), data.Validate()}) e.insert(e.end(), v.begin(), v.end());
  const int vocab = 8 + data.n_langs + data.n_content;
  Require(e, model.vocab_size == vocab,
          "model.vocab_size must equal 8 + data.n_langs + data.n_content = " + std::to_string(vocab));
  Require(e, model.max_tokens >= data.max_tokens, "model.max_tokens must be >= data.max_tokens");
  if (!e.empty()) throw ConfigError(JoinErrors(e));
}

void SetConfigKey(RunConfig &cfg, const std::string &key, const std::string &value) {
  for (const Entry &entry : Registry())
    if (entry.key == key) {
      entry.set(cfg, Trim(value));
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

void ApplyConfigText(RunConfig &cfg, const std::string &text, const std::string &origin) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = Trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    SetConfigKey(cfg, Trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

RunConfig ParseConfig(const std::string &path, const std::vector<std::string> &overrides) {
  RunConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    ApplyConfigText(cfg, ss.str(), path);
  }
  for (const std::string &o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    SetConfigKey(cfg, Trim(o.substr(0, eq)), o.substr(eq + 1));
  }
  cfg.Check();
  return cfg;
}

std::string ConfigToText(const RunConfig &cfg) {
  std::string out;
  for (const Entry &entry : Registry()) out += entry.key + " = " + entry.get(cfg) + "\n";
  return out;
}

std::vector<std::string> ConfigKeys() {
  std::vector<std::string> keys;
  for (const Entry &entry : Registry()) keys.push_back(entry.key);
  return keys;
}

std::string ModelConfigToText(const ModelConfig &m) {
  RunConfig cfg;
  cfg.model = m;
  std::string out;
  for (const Entry &entry : Registry())
    if (entry.key.rfind("model.", 0) == 0) out += entry.key + " = " + entry.get(cfg) + "\n";
  return out;
}

ModelConfig ModelConfigFromText(const std::string &text) {
  RunConfig cfg;
  ApplyConfigText(cfg, text, "model config");
  auto errs = cfg.model.Validate();
  if (!errs.empty()) throw ConfigError(JoinErrors(errs));
  return cfg.model;
}

}  // namespace comsl
