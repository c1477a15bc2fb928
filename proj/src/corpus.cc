// src/corpus.cc

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

#include "comsl/corpus.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "comsl/random.h"

namespace comsl {

static_assert(std::endian::native == std::endian::little,
              "corpus and checkpoint files are written as native little-endian");

Vocab::Vocab(int n_content, int n_langs, int max_size) : n_content_(n_content), n_langs_(n_langs) {
  if (n_content < 2) throw CorpusError("vocab: n_content must be >= 2");
  if (n_langs < 1) throw CorpusError("vocab: n_langs must be >= 1");
  if (max_size > 0 && size() > max_size)
    throw CorpusError("vocab: layout needs " + std::to_string(size()) + " ids, limit is " +
                      std::to_string(max_size));
}

Vocab BuildVocab(int n_content, int n_langs, int max_size) {
  return Vocab(n_content, n_langs, max_size);
}

int32_t Vocab::LangTag(int lang) const {
  if (lang < 0 || lang >= n_langs_) throw CorpusError("vocab: no language " + std::to_string(lang));
  return kNumSpecials + lang;
}

int32_t Vocab::ContentId(int index) const {
  if (index < 0 || index >= n_content_)
    throw CorpusError("vocab: content index " + std::to_string(index) + " out of range");
  return content_base() + index;
}

int Vocab::ContentIndex(int32_t id) const {
  if (!IsContent(id)) throw CorpusError("vocab: id " + std::to_string(id) + " is not content");
  return id - content_base();
}

int PairOffset(int src_lang, int tgt_lang, int n_content) {
  return (11 * src_lang + 5 * tgt_lang) % n_content;
}

std::vector<int32_t> TranslateReference(const Vocab &vocab, const std::vector<int32_t> &x,
                                        int src_lang, int tgt_lang) {
  const int n = vocab.n_content();
  const int offset = PairOffset(src_lang, tgt_lang, n);
  std::vector<int32_t> y;
  y.reserve(x.size());
  for (auto it = x.rbegin(); it != x.rend(); ++it) {
    int t = vocab.ContentIndex(*it);
    y.push_back(vocab.ContentId((7 * t + 3 + offset) % n));
  }
  return y;
}

namespace {

// Prototype frame for every content token plus one for silence (last row).
std::vector<float> MakePrototypes(const Vocab &vocab, const SynthConfig &cfg) {
  std::mt19937_64 rng(cfg.acoustic_seed);
  std::vector<float> protos(static_cast<size_t>(vocab.n_content() + 1) * cfg.feat_dim);
  for (float &v : protos) v = static_cast<float>(StandardNormal(rng));
  return protos;
}

void EmitFrames(std::vector<float> &frames, const float *proto, int count, int feat_dim,
                double sigma, std::mt19937_64 &rng) {
  for (int r = 0; r < count; ++r)
    for (int c = 0; c < feat_dim; ++c)
      frames.push_back(proto[c] + static_cast<float>(sigma * StandardNormal(rng)));
}

TripletExample SynthOne(const Vocab &vocab, const SynthConfig &cfg,
                        const std::vector<float> &protos, int src_lang, std::mt19937_64 &rng) {
  const int fd = cfg.feat_dim;
  const float *silence = protos.data() + static_cast<size_t>(vocab.n_content()) * fd;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    TripletExample ex;
    ex.feat_dim = fd;
    ex.src_lang = src_lang;
    ex.tgt_lang = cfg.tgt_lang;
    const int len = cfg.min_tokens + UniformInt(rng, cfg.max_tokens - cfg.min_tokens + 1);
    int prev = -1;
    for (int i = 0; i < len; ++i) {
      // No immediate repeats: two equal adjacent tokens would be acoustically
      // indistinguishable from one long token.
      int t;
      do t = UniformInt(rng, vocab.n_content());
      while (t == prev);
      prev = t;
      ex.x.push_back(vocab.ContentId(t));
    }
    ex.y = TranslateReference(vocab, ex.x, src_lang, cfg.tgt_lang);
    EmitFrames(ex.frames, silence, 2 + UniformInt(rng, 3), fd, cfg.noise_sigma, rng);
    for (int i = 0; i < len; ++i) {
      if (i > 0 && UniformReal(rng) < cfg.pause_prob)
        EmitFrames(ex.frames, silence, 2 + UniformInt(rng, 3), fd, cfg.noise_sigma, rng);
      const float *proto = protos.data() + static_cast<size_t>(vocab.ContentIndex(ex.x[i])) * fd;
      EmitFrames(ex.frames, proto, 2 + UniformInt(rng, 3), fd, cfg.noise_sigma, rng);
    }
    EmitFrames(ex.frames, silence, 2 + UniformInt(rng, 3), fd, cfg.noise_sigma, rng);
    ex.num_frames = static_cast<int32_t>(ex.frames.size() / fd);
    if (ex.num_frames <= cfg.max_frames) return ex;  // too long: regenerate
  }
  throw CorpusError("synth: could not generate an utterance within max_frames=" +
                    std::to_string(cfg.max_frames));
}

}  // namespace

std::vector<TripletExample> SynthCorpus(const Vocab &vocab, int n_examples, uint64_t seed,
                                        const std::vector<double> &lang_weights,
                                        const SynthConfig &cfg) {
  if (n_examples < 0) throw CorpusError("synth: negative example count");
  if (static_cast<int>(lang_weights.size()) != vocab.n_langs())
    throw CorpusError("synth: language profile has " + std::to_string(lang_weights.size()) +
                      " entries for " + std::to_string(vocab.n_langs()) + " languages");
  if (cfg.min_tokens < 1 || cfg.max_tokens < cfg.min_tokens)
    throw CorpusError("synth: bad transcript length range");
  if (cfg.tgt_lang < 0 || cfg.tgt_lang >= vocab.n_langs())
    throw CorpusError("synth: target language out of range");
  double total_w = 0;
  for (double w : lang_weights) {
    if (w < 0) throw CorpusError("synth: negative language weight");
    total_w += w;
  }
  if (n_examples > 0 && total_w <= 0) throw CorpusError("synth: language weights sum to zero");

  // Largest-remainder allocation of examples to languages.
  const int nl = vocab.n_langs();
  std::vector<int> counts(nl, 0);
  std::vector<std::pair<double, int>> rema;
  int assigned = 0;
  for (int l = 0; l < nl; ++l) {
    double share = total_w > 0 ? n_examples * lang_weights[l] / total_w : 0.0;
    counts[l] = static_cast<int>(std::floor(share));
    assigned += counts[l];
    rema.push_back({-(share - counts[l]), l});
  }
  std::sort(rema.begin(), rema.end());
  for (int i = 0; assigned < n_examples; ++i, ++assigned) ++counts[rema[i % nl].second];

  const std::vector<float> protos = MakePrototypes(vocab, cfg);
  std::vector<TripletExample> out;
  out.reserve(n_examples);
  // One independently seeded shard per language, concatenated in order.
  for (int l = 0; l < nl; ++l) {
    std::mt19937_64 rng(DeriveSeed(seed, static_cast<uint64_t>(l)));
    for (int i = 0; i < counts[l]; ++i) out.push_back(SynthOne(vocab, cfg, protos, l, rng));
  }
  for (size_t i = 0; i < out.size(); ++i) out[i].id = static_cast<int64_t>(i);
  return out;
}

std::vector<UnlabeledPair> SynthUnlabeled(const Vocab &vocab, int n_examples, uint64_t seed,
                                          const std::vector<double> &lang_weights,
                                          const SynthConfig &cfg) {
  std::vector<UnlabeledPair> out;
  for (TripletExample &ex : SynthCorpus(vocab, n_examples, seed, lang_weights, cfg)) {
    UnlabeledPair u;
    u.frames = std::move(ex.frames);
    u.num_frames = ex.num_frames;
    u.feat_dim = ex.feat_dim;
    u.x = std::move(ex.x);
    u.src_lang = ex.src_lang;
    u.tgt_lang = ex.tgt_lang;
    out.push_back(std::move(u));
  }
  return out;
}

std::vector<TripletExample> PseudoLabel(const std::vector<UnlabeledPair> &unlabeled,
                                        const Translator &teacher,
                                        const std::vector<TripletExample> &existing,
                                        int64_t first_id, PseudoLabelStats *stats) {
  PseudoLabelStats local;
  PseudoLabelStats &st = stats ? *stats : local;
  st = {};
  std::set<std::vector<int32_t>> gold, seen;
  for (const TripletExample &ex : existing) gold.insert(ex.x);
  std::vector<TripletExample> out;
  for (const UnlabeledPair &u : unlabeled) {
    if (gold.count(u.x)) {
      ++st.in_existing;
      continue;
    }
    if (!seen.insert(u.x).second) {
      ++st.duplicates;
      continue;
    }
    std::vector<int32_t> y = teacher(u.x, u.src_lang, u.tgt_lang);
    if (y.empty()) {
      ++st.empty_output;
      continue;
    }
    TripletExample ex;
    ex.id = first_id + static_cast<int64_t>(out.size());
    ex.frames = u.frames;
    ex.num_frames = u.num_frames;
    ex.feat_dim = u.feat_dim;
    ex.x = u.x;
    ex.y = std::move(y);
    ex.src_lang = u.src_lang;
    ex.tgt_lang = u.tgt_lang;
    ex.is_pseudo = true;
    out.push_back(std::move(ex));
    ++st.kept;
  }
  return out;
}

std::pair<std::vector<int32_t>, std::vector<int32_t>> MaskTranscript(
    const Vocab &vocab, const std::vector<int32_t> &x, double p_mask, std::mt19937_64 &rng) {
  if (p_mask < 0.0 || p_mask >= 1.0) throw CorpusError("mask: p_mask must be in [0,1)");
  std::vector<int32_t> masked = x;
  std::vector<int32_t> positions;
  for (size_t i = 0; i < x.size(); ++i) {
    if (!vocab.IsContent(x[i])) continue;
    if (UniformReal(rng) < p_mask) {
      masked[i] = Vocab::kMask;
      positions.push_back(static_cast<int32_t>(i));
    }
  }
  return {masked, positions};
}

std::pair<std::vector<int32_t>, std::vector<int32_t>> MaskAll(const Vocab &vocab,
                                                              const std::vector<int32_t> &x) {
  std::vector<int32_t> masked = x;
  std::vector<int32_t> positions;
  for (size_t i = 0; i < x.size(); ++i)
    if (vocab.IsContent(x[i])) {
      masked[i] = Vocab::kMask;
      positions.push_back(static_cast<int32_t>(i));
    }
  return {masked, positions};
}

std::vector<int32_t> Batch::X(int b) const {
  return {x.begin() + b * max_x, x.begin() + b * max_x + x_lengths[b]};
}
std::vector<int32_t> Batch::XMasked(int b) const {
  return {x_masked.begin() + b * max_x, x_masked.begin() + b * max_x + x_lengths[b]};
}
std::vector<int32_t> Batch::Y(int b) const {
  return {y.begin() + b * max_y, y.begin() + b * max_y + y_lengths[b]};
}

Batch CollateBatch(const std::vector<const TripletExample *> &examples, const Vocab &vocab,
                   double p_mask, uint64_t seed) {
  if (examples.empty()) throw CorpusError("collate: empty example list");
  Batch b;
  b.batch_size = static_cast<int>(examples.size());
  b.feat_dim = examples[0]->feat_dim;
  for (const TripletExample *ex : examples) {
    if (ex->feat_dim != b.feat_dim)
      throw CorpusError("collate: mixed feat_dim " + std::to_string(ex->feat_dim) + " vs " +
                        std::to_string(b.feat_dim));
    if (ex->x.empty() || ex->y.empty()) throw CorpusError("collate: empty transcript or translation");
    b.max_frames = std::max(b.max_frames, ex->num_frames);
    b.max_x = std::max(b.max_x, static_cast<int>(ex->x.size()));
    b.max_y = std::max(b.max_y, static_cast<int>(ex->y.size()));
  }
  const int fd = b.feat_dim;
  b.frames.assign(static_cast<size_t>(b.batch_size) * b.max_frames * fd, 0.0f);
  b.x.assign(static_cast<size_t>(b.batch_size) * b.max_x, Vocab::kPad);
  b.x_masked = b.x;
  b.y.assign(static_cast<size_t>(b.batch_size) * b.max_y, Vocab::kPad);
  std::mt19937_64 rng(seed);
  for (int i = 0; i < b.batch_size; ++i) {
    const TripletExample &ex = *examples[i];
    std::copy(ex.frames.begin(), ex.frames.end(),
              b.frames.begin() + static_cast<size_t>(i) * b.max_frames * fd);
    b.frame_lengths.push_back(ex.num_frames);
    std::copy(ex.x.begin(), ex.x.end(), b.x.begin() + i * b.max_x);
    std::copy(ex.y.begin(), ex.y.end(), b.y.begin() + i * b.max_y);
    b.x_lengths.push_back(static_cast<int32_t>(ex.x.size()));
    b.y_lengths.push_back(static_cast<int32_t>(ex.y.size()));
    auto [masked, positions] = MaskTranscript(vocab, ex.x, p_mask, rng);
    std::copy(masked.begin(), masked.end(), b.x_masked.begin() + i * b.max_x);
    b.mask_positions.push_back(std::move(positions));
    b.src_lang.push_back(ex.src_lang);
    b.tgt_lang.push_back(ex.tgt_lang);
  }
  return b;
}

namespace {

std::string JoinIds(const std::vector<int32_t> &ids) {
  std::string s;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(ids[i]);
  }
  return s;
}

std::vector<int32_t> ParseIds(const std::string &s, int line_no) {
  std::vector<int32_t> ids;
  std::istringstream is(s);
  long v;
  while (is >> v) ids.push_back(static_cast<int32_t>(v));
  if (!is.eof()) throw CorpusError("manifest line " + std::to_string(line_no) + ": bad token list");
  return ids;
}

}  // namespace

void WriteCorpus(const std::filesystem::path &dir, const std::vector<TripletExample> &examples) {
  std::filesystem::create_directories(dir);
  const int fd = examples.empty() ? 0 : examples[0].feat_dim;
  std::ofstream manifest(dir / "manifest.tsv", std::ios::binary);
  std::ofstream frames(dir / "frames.bin", std::ios::binary);
  if (!manifest || !frames) throw CorpusError("cannot write corpus in " + dir.string());
  manifest << "# comsl-corpus v1 feat_dim=" << fd << '\n';
  int64_t offset = 0;
  for (const TripletExample &ex : examples) {
    if (ex.feat_dim != fd) throw CorpusError("write: mixed feat_dim");
    manifest << ex.id << '\t' << ex.src_lang << '\t' << ex.tgt_lang << '\t'
             << (ex.is_pseudo ? 1 : 0) << '\t' << JoinIds(ex.x) << '\t' << JoinIds(ex.y) << '\t'
             << offset << '\t' << ex.num_frames << '\n';
    frames.write(reinterpret_cast<const char *>(ex.frames.data()),
                 static_cast<std::streamsize>(ex.frames.size() * sizeof(float)));
    offset += ex.num_frames;
  }
  if (!manifest || !frames) throw CorpusError("I/O error writing corpus in " + dir.string());
}

std::vector<TripletExample> ReadCorpus(const std::filesystem::path &dir) {
  std::ifstream manifest(dir / "manifest.tsv", std::ios::binary);
  std::ifstream frames(dir / "frames.bin", std::ios::binary);
  if (!manifest || !frames) throw CorpusError("cannot read corpus in " + dir.string());
  std::string line;
  if (!std::getline(manifest, line) || line.rfind("# comsl-corpus v1 feat_dim=", 0) != 0)
    throw CorpusError("manifest: missing header");
  const int fd = std::stoi(line.substr(line.find('=') + 1));
  if (fd < 0) throw CorpusError("manifest: negative feat_dim");
  const auto bytes = static_cast<size_t>(std::filesystem::file_size(dir / "frames.bin"));
  if (bytes % sizeof(float) != 0) throw CorpusError("frames.bin: truncated");
  std::vector<float> all(bytes / sizeof(float));
  frames.read(reinterpret_cast<char *>(all.data()), static_cast<std::streamsize>(bytes));

  std::vector<TripletExample> out;
  int line_no = 1;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream is(line);
    std::string field;
    while (std::getline(is, field, '\t')) f.push_back(field);
    if (f.size() != 8)
      throw CorpusError("manifest line " + std::to_string(line_no) + ": expected 8 fields");
    TripletExample ex;
    ex.id = std::stoll(f[0]);
    ex.src_lang = std::stoi(f[1]);
    ex.tgt_lang = std::stoi(f[2]);
    ex.is_pseudo = f[3] == "1";
    ex.x = ParseIds(f[4], line_no);
    ex.y = ParseIds(f[5], line_no);
    const int64_t off = std::stoll(f[6]);
    ex.num_frames = std::stoi(f[7]);
    ex.feat_dim = fd;
    if (fd == 0) throw CorpusError("manifest: feat_dim=0 with examples");
    const size_t begin = static_cast<size_t>(off) * fd;
    const size_t count = static_cast<size_t>(ex.num_frames) * fd;
    if (begin + count > all.size())
      throw CorpusError("manifest line " + std::to_string(line_no) + ": frames out of range");
    ex.frames.assign(all.begin() + begin, all.begin() + begin + count);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace comsl
