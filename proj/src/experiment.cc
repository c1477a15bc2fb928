// src/experiment.cc

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

#include "comsl/experiment.h"

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "comsl/decode.h"
#include "comsl/random.h"

namespace comsl {

SynthConfig SynthFromConfig(const RunConfig &cfg) {
  SynthConfig s;
  s.feat_dim = cfg.model.feat_dim;
  s.max_frames = cfg.model.max_frames;
  s.min_tokens = cfg.data.min_tokens;
  s.max_tokens = cfg.data.max_tokens;
  s.noise_sigma = cfg.data.noise_sigma;
  s.pause_prob = cfg.data.pause_prob;
  s.acoustic_seed = cfg.data.acoustic_seed;
  return s;
}

Vocab VocabFromConfig(const RunConfig &cfg) {
  return Vocab(cfg.data.n_content, cfg.data.n_langs, cfg.model.vocab_size);
}

std::vector<TripletExample> MakeCorpus(const RunConfig &cfg) {
  return SynthCorpus(VocabFromConfig(cfg), cfg.data.n_examples, cfg.data.seed,
                     cfg.data.LangWeights(), SynthFromConfig(cfg));
}

EvalResult Evaluate(Model &model, const std::vector<TripletExample> &examples, const Vocab &vocab,
                    int beam) {
  EvalResult r;
  if (examples.empty()) return r;
  std::vector<std::vector<int32_t>> refs, xs;
  for (const auto &ex : examples) {
    refs.push_back(ex.y);
    xs.push_back(ex.x);
  }
  const auto st = Translate(model, examples, vocab, beam, false);
  r.st_bleu = CorpusBleu(st, refs);
  r.mt_bleu = CorpusBleu(Translate(model, examples, vocab, beam, true), refs);
  const auto asr = Transcribe(model, examples, vocab, beam);
  int64_t edits = 0, words = 0;
  auto content = [&vocab](const std::vector<int32_t> &s) {
    std::vector<int32_t> out;
    for (int32_t t : s)
      if (vocab.IsContent(t)) out.push_back(t);
    return out;
  };
  for (size_t i = 0; i < examples.size(); ++i) {
    const auto ref = content(xs[i]);
    edits += EditDistance(content(asr[i]), ref);
    words += static_cast<int64_t>(ref.size());
  }
  r.asr_wer = words > 0 ? static_cast<double>(edits) / static_cast<double>(words) : 0.0;
  std::map<int, std::pair<std::vector<std::vector<int32_t>>, std::vector<std::vector<int32_t>>>>
      by_lang;
  for (size_t i = 0; i < examples.size(); ++i) {
    by_lang[examples[i].src_lang].first.push_back(st[i]);
    by_lang[examples[i].src_lang].second.push_back(refs[i]);
  }
  for (const auto &[lang, hr] : by_lang) r.st_bleu_by_lang[lang] = CorpusBleu(hr.first, hr.second);
  return r;
}

PretrainedModel Pretrain(const RunConfig &cfg, const std::vector<TripletExample> &train,
                         std::ostream *log) {
  PretrainedModel p;
  p.live = std::make_unique<Model>(cfg.model, cfg.train.seed);
  if (cfg.train.pretrain_steps > 0) {
    p.frozen = PretrainMt(*p.live, train, cfg, [log](int64_t s, double loss) {
      if (log && (s % 100 == 0)) *log << "pretrain step=" << s << " mt=" << loss << '\n';
    });
  } else {
    p.frozen = std::make_unique<Model>(cfg.model, cfg.train.seed);
    p.frozen->CopyParametersFrom(*p.live);
    for (auto &param : p.frozen->params()) param.value.set_requires_grad(false);
  }
  return p;
}

std::vector<TripletExample> MakePseudoData(const RunConfig &cfg, Model &teacher,
                                           const std::vector<TripletExample> &existing,
                                           PseudoLabelStats *stats) {
  const Vocab vocab = VocabFromConfig(cfg);
  std::vector<double> weights(cfg.data.n_langs, 0.0);
  for (int l : cfg.data.PseudoLangs()) weights.at(l) = 1.0;
  const auto pool = SynthUnlabeled(vocab, cfg.data.pseudo_examples,
                                   DeriveSeed(cfg.data.seed, 0x95e0d0ULL), weights,
                                   SynthFromConfig(cfg));
  // Decode the whole pool in batches up front; the translator then looks up.
  std::vector<TripletExample> as_text;
  for (const auto &u : pool) {
    TripletExample ex;
    ex.x = u.x;
    ex.src_lang = u.src_lang;
    ex.tgt_lang = u.tgt_lang;
    as_text.push_back(std::move(ex));
  }
  const auto outputs = Translate(teacher, as_text, vocab, cfg.train.beam, true);
  std::map<std::pair<std::vector<int32_t>, int>, std::vector<int32_t>> table;
  for (size_t i = 0; i < pool.size(); ++i) table[{pool[i].x, pool[i].src_lang}] = outputs[i];
  Translator lookup = [&table](const std::vector<int32_t> &x, int src, int) {
    auto it = table.find({x, src});
    return it == table.end() ? std::vector<int32_t>{} : it->second;
  };
  int64_t first_id = 0;
  for (const auto &ex : existing) first_id = std::max(first_id, ex.id + 1);
  return PseudoLabel(pool, lookup, existing, first_id, stats);
}

std::vector<AblationStage> LadderStages(const RunConfig &base) {
  const LossWeights &b = base.loss;
  std::vector<AblationStage> out;
  AblationStage s;
  s.loss = LossWeights{0, b.w_st, 0, 0, 0, 0, 0, b.p_mask};
  s.name = "st";
  out.push_back(s);
  s.name = "+mt";
  s.loss.w_mt = b.w_mt;
  out.push_back(s);
  s.name = "+ddm";
  s.loss.lambda_s = b.lambda_s;
  out.push_back(s);
  s.name = "+asr";
  s.loss.w_asr = b.w_asr;
  out.push_back(s);
  s.name = "+freeze";
  s.freeze_fraction = base.train.freeze_fraction;
  out.push_back(s);
  s.name = "+mt_reg";
  s.loss.lambda_t = b.lambda_t;
  out.push_back(s);
  s.name = "+cml";
  s.loss.w_cml = b.w_cml;
  s.loss.w_erm = b.w_erm;
  out.push_back(s);
  s.name = "+pseudo";
  s.pseudo = true;
  out.push_back(s);
  return out;
}

namespace {

std::vector<TripletExample> OfLangs(const std::vector<TripletExample> &examples,
                                    const std::vector<int> &langs) {
  std::vector<TripletExample> out;
  for (const auto &ex : examples)
    if (std::find(langs.begin(), langs.end(), ex.src_lang) != langs.end()) out.push_back(ex);
  return out;
}

}  // namespace

std::vector<AblationRow> RunAblation(const RunConfig &base, const std::vector<AblationStage> &stages,
                                     const std::vector<uint64_t> &seeds, std::ostream *out,
                                     std::ostream *log) {
  if (seeds.empty()) throw TrainError("ablation: no seeds");
  const Vocab vocab = VocabFromConfig(base);
  std::vector<TripletExample> train, valid;
  SplitCorpus(MakeCorpus(base), base.data.valid_fraction, base.data.seed, &train, &valid);
  const auto low_valid = OfLangs(valid, base.data.PseudoLangs());
  std::vector<AblationRow> rows;
  for (uint64_t seed : seeds) {
    RunConfig seed_cfg = base;
    seed_cfg.train.seed = seed;
    PretrainedModel pre = Pretrain(seed_cfg, train, log);
    std::vector<TripletExample> pseudo;
    bool have_pseudo = false;
    for (const AblationStage &stage : stages) {
      AblationRow row;
      row.stage = stage.name;
      row.seed = seed;
      try {
        RunConfig cfg = seed_cfg;
        cfg.loss = stage.loss;
        cfg.train.freeze_fraction = stage.freeze_fraction;
        cfg.checkpoint_dir = (std::filesystem::path(base.checkpoint_dir) /
                              (stage.name + "_s" + std::to_string(seed)))
                                 .string();
        std::vector<TripletExample> stage_train = train;
        if (stage.pseudo) {
          if (!have_pseudo) {
            PseudoLabelStats stats;
            pseudo = MakePseudoData(cfg, *pre.frozen, train, &stats);
            have_pseudo = true;
            if (log)
              *log << "pseudo kept=" << stats.kept << " in_existing=" << stats.in_existing
                   << " duplicates=" << stats.duplicates << " empty=" << stats.empty_output
                   << '\n';
          }
          stage_train.insert(stage_train.end(), pseudo.begin(), pseudo.end());
        }
        auto live = std::make_unique<Model>(cfg.model, seed);
        live->CopyParametersFrom(*pre.live);
        auto teacher = std::make_unique<Model>(cfg.model, seed);
        teacher->CopyParametersFrom(*pre.frozen);
        Trainer trainer(cfg, std::move(live), std::move(teacher));
        FitResult fit = Fit(trainer, stage_train, valid, log);
        auto best = LoadModel(fit.best_checkpoint);
        const EvalResult ev = Evaluate(*best, valid, vocab, cfg.train.beam);
        row.st_bleu = ev.st_bleu;
        row.mt_bleu = ev.mt_bleu;
        std::vector<std::vector<int32_t>> refs;
        for (const auto &ex : low_valid) refs.push_back(ex.y);
        row.low_resource_bleu =
            low_valid.empty() ? 0.0
                              : CorpusBleu(Translate(*best, low_valid, vocab, cfg.train.beam, false), refs);
      } catch (const std::exception &e) {
        row.failed = true;
        row.error = e.what();
      }
      if (out) *out << FormatAblationRow(row) << '\n' << std::flush;
      rows.push_back(row);
    }
  }
  return rows;
}

std::string FormatAblationRow(const AblationRow &row) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << "stage=" << row.stage << " seed=" << row.seed
     << " st_bleu=" << row.st_bleu << " mt_bleu=" << row.mt_bleu
     << " low_bleu=" << row.low_resource_bleu;
  if (row.failed) {
    std::string msg = row.error;
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    os << " error=" << msg;
  }
  return os.str();
}

double Median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string AblationSummary(const std::vector<AblationRow> &rows,
                            const std::vector<AblationStage> &stages) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  double prev = 0;
  bool first = true;
  for (const AblationStage &stage : stages) {
    std::vector<double> bleu;
    for (const auto &r : rows)
      if (r.stage == stage.name && !r.failed) bleu.push_back(r.st_bleu);
    const double mean =
        bleu.empty() ? 0.0 : std::accumulate(bleu.begin(), bleu.end(), 0.0) / bleu.size();
    os << "summary stage=" << stage.name << " runs=" << bleu.size() << " mean=" << mean
       << " median=" << Median(bleu);
    if (!first) os << " delta=" << mean - prev;
    os << '\n';
    prev = mean;
    first = false;
  }
  return os.str();
}

}  // namespace comsl
