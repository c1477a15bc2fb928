// tools/comsl.cc

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

// Command-line driver: gen-data, pretrain-mt, train, eval, ablate, export-sim.
// Exit status: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "comsl/config.h"
#include "comsl/corpus.h"
#include "comsl/decode.h"
#include "comsl/experiment.h"
#include "comsl/trainer.h"

namespace fs = std::filesystem;
using namespace comsl;

namespace {

struct Options {
  std::string config;
  std::vector<std::string> sets;
  int64_t seed = -1;
  std::string checkpoint;
  std::string out;
  std::string examples;
  std::string seeds = "1,2,3";
  std::string stages;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Paths created by the running command; removed if it fails.
std::vector<fs::path> g_outputs;

fs::path Output(const fs::path &p) {
  const bool existed = fs::exists(p);
  if (!existed) g_outputs.push_back(p);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  return p;
}

RunConfig Resolve(const Options &o, bool seed_is_data) {
  std::vector<std::string> sets = o.sets;
  if (o.seed >= 0) sets.push_back((seed_is_data ? "data.seed=" : "train.seed=") + std::to_string(o.seed));
  return ParseConfig(o.config, sets);
}

std::unique_ptr<std::ofstream> OpenLog(const RunConfig &cfg) {
  if (cfg.log_path.empty()) return nullptr;
  auto log = std::make_unique<std::ofstream>(Output(cfg.log_path), std::ios::app);
  if (!*log) throw std::runtime_error("cannot open log " + cfg.log_path);
  *log << "# resolved config\n" << ConfigToText(cfg) << std::flush;
  return log;
}

std::vector<TripletExample> LoadCorpus(const RunConfig &cfg) {
  if (!fs::exists(fs::path(cfg.corpus_dir) / "manifest.tsv"))
    throw std::runtime_error("no corpus in " + cfg.corpus_dir + " (run gen-data first)");
  return ReadCorpus(cfg.corpus_dir);
}

void Split(const RunConfig &cfg, std::vector<TripletExample> *train,
           std::vector<TripletExample> *valid) {
  SplitCorpus(LoadCorpus(cfg), cfg.data.valid_fraction, cfg.data.seed, train, valid);
}

int GenData(const Options &o) {
  const RunConfig cfg = Resolve(o, true);
  const fs::path dir = o.out.empty() ? fs::path(cfg.corpus_dir) : fs::path(o.out);
  const auto corpus = MakeCorpus(cfg);
  if (!fs::exists(dir)) g_outputs.push_back(dir);
  WriteCorpus(dir, corpus);
  std::cout << "wrote " << corpus.size() << " examples to " << dir.string() << '\n';
  return 0;
}

int PretrainCmd(const Options &o) {
  const RunConfig cfg = Resolve(o, false);
  auto log = OpenLog(cfg);
  std::vector<TripletExample> train, valid;
  Split(cfg, &train, &valid);
  PretrainedModel p = Pretrain(cfg, train, log.get());
  const fs::path out = o.out.empty() ? fs::path(cfg.checkpoint_dir) / "pretrain.ckpt" : fs::path(o.out);
  Trainer(cfg, std::move(p.live), std::move(p.frozen)).Save(Output(out));
  std::cout << "wrote " << out.string() << '\n';
  return 0;
}

int TrainCmd(const Options &o) {
  const RunConfig cfg = Resolve(o, false);
  auto log = OpenLog(cfg);
  std::vector<TripletExample> train, valid;
  Split(cfg, &train, &valid);
  std::unique_ptr<Model> live, teacher;
  if (!o.checkpoint.empty()) {
    auto init = Trainer::Load(o.checkpoint);
    live = std::make_unique<Model>(cfg.model, cfg.train.seed);
    live->CopyParametersFrom(init->model());
    if (init->teacher()) {
      teacher = std::make_unique<Model>(cfg.model, cfg.train.seed);
      teacher->CopyParametersFrom(*init->teacher());
    }
  } else {
    PretrainedModel p = Pretrain(cfg, train, log.get());
    live = std::move(p.live);
    teacher = std::move(p.frozen);
  }
  Trainer trainer(cfg, std::move(live), std::move(teacher));
  Output(fs::path(cfg.checkpoint_dir) / "best.ckpt");
  const FitResult fit = Fit(trainer, train, valid, log.get());
  std::cout << std::fixed << std::setprecision(4) << "best_bleu=" << fit.best_bleu
            << " best_step=" << fit.best_step << " seconds=" << fit.seconds
            << " checkpoint=" << fit.best_checkpoint.string() << '\n';
  return 0;
}

int EvalCmd(const Options &o) {
  if (o.checkpoint.empty()) throw UsageError("eval needs --checkpoint");
  RunConfig cfg = CheckpointConfig(o.checkpoint);
  for (const std::string &s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + s + "' is not key=value");
    SetConfigKey(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  cfg.Check();
  auto model = LoadModel(o.checkpoint);
  std::vector<TripletExample> train, valid;
  Split(cfg, &train, &valid);
  const EvalResult r = Evaluate(*model, valid, VocabFromConfig(cfg), cfg.train.beam);
  std::cout << std::fixed << std::setprecision(4) << "st_bleu=" << r.st_bleu
            << " mt_bleu=" << r.mt_bleu << " asr_wer=" << r.asr_wer << '\n';
  for (const auto &[lang, bleu] : r.st_bleu_by_lang)
    std::cout << "lang=" << lang << " st_bleu=" << bleu << '\n';
  return 0;
}

std::vector<uint64_t> ParseIds(const std::string &text) {
  std::vector<uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      size_t used = 0;
      out.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception &) {
      throw UsageError("bad id '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("empty id list");
  return out;
}

int AblateCmd(const Options &o) {
  const RunConfig cfg = Resolve(o, false);
  auto log = OpenLog(cfg);
  const auto seeds = ParseIds(o.seeds);
  auto stages = LadderStages(cfg);
  if (!o.stages.empty()) {
    std::vector<std::string> names;
    std::stringstream ss(o.stages);
    for (std::string name; std::getline(ss, name, ',');) names.push_back(name);
    for (const auto &name : names)
      if (std::none_of(stages.begin(), stages.end(), [&](const auto &s) { return s.name == name; }))
        throw UsageError("unknown stage '" + name + "'");
    std::erase_if(stages, [&](const auto &s) {
      return std::find(names.begin(), names.end(), s.name) == names.end();
    });
  }
  std::unique_ptr<std::ofstream> file;
  std::ostream *out = &std::cout;
  if (!o.out.empty()) {
    file = std::make_unique<std::ofstream>(Output(o.out));
    out = file.get();
  }
  const auto rows = RunAblation(cfg, stages, seeds, out, log.get());
  *out << AblationSummary(rows, stages);
  return 0;
}

int ExportSimCmd(const Options &o) {
  if (o.checkpoint.empty()) throw UsageError("export-sim needs --checkpoint");
  if (o.examples.empty()) throw UsageError("export-sim needs --examples");
  RunConfig cfg = CheckpointConfig(o.checkpoint);
  for (const std::string &s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + s + "' is not key=value");
    SetConfigKey(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  const auto ids = ParseIds(o.examples);
  auto model = LoadModel(o.checkpoint);
  const auto corpus = LoadCorpus(cfg);
  const fs::path dir = o.out.empty() ? fs::path("similarity") : fs::path(o.out);
  if (!fs::exists(dir)) g_outputs.push_back(dir);
  fs::create_directories(dir);
  for (uint64_t id : ids) {
    auto it = std::find_if(corpus.begin(), corpus.end(),
                           [id](const TripletExample &ex) { return ex.id == static_cast<int64_t>(id); });
    if (it == corpus.end()) throw std::runtime_error("example id " + std::to_string(id) + " not found");
    for (bool cml : {true, false}) {
      const fs::path path = dir / ("sim_" + std::to_string(id) + (cml ? "_cml.txt" : "_speech.txt"));
      std::ofstream f(path);
      f << FormatSimilarity(ComputeSimilarity(*model, *it, cml));
      if (!f) throw std::runtime_error("cannot write " + path.string());
      std::cout << "wrote " << path.string() << '\n';
    }
  }
  return 0;
}

void AddCommon(CLI::App *cmd, Options &o) {
  cmd->add_option("--config", o.config, "key = value config file");
  cmd->add_option("--set", o.sets, "KEY=VALUE override (repeatable)")->take_all();
  cmd->add_option("--seed", o.seed, "seed (data.seed for gen-data, train.seed otherwise)");
  cmd->add_option("--out", o.out, "output path");
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Toy speech translation with cross-modality training"};
  app.require_subcommand(1);
  Options o;
  auto *gen = app.add_subcommand("gen-data", "synthesize the corpus");
  auto *pre = app.add_subcommand("pretrain-mt", "text-only pre-finetuning");
  auto *train = app.add_subcommand("train", "full multi-task training");
  auto *eval = app.add_subcommand("eval", "ST BLEU, MT BLEU and ASR WER on the validation split");
  auto *ablate = app.add_subcommand("ablate", "cumulative ablation ladder");
  auto *sim = app.add_subcommand("export-sim", "similarity grids for chosen examples");
  for (CLI::App *cmd : {gen, pre, train, eval, ablate, sim}) AddCommon(cmd, o);
  for (CLI::App *cmd : {train, eval, sim})
    cmd->add_option("--checkpoint", o.checkpoint, "checkpoint path");
  sim->add_option("--examples", o.examples, "comma separated example ids");
  ablate->add_option("--seeds", o.seeds, "comma separated training seeds");
  ablate->add_option("--stages", o.stages, "comma separated subset of the ladder (default: all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  try {
    if (*gen) return GenData(o);
    if (*pre) return PretrainCmd(o);
    if (*train) return TrainCmd(o);
    if (*eval) return EvalCmd(o);
    if (*ablate) return AblateCmd(o);
    return ExportSimCmd(o);
  } catch (const UsageError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError &e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    std::error_code ec;
    for (const fs::path &p : g_outputs) fs::remove_all(p, ec);
    return 2;
  }
}
