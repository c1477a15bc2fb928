// tests/config_test.cc

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

#include <filesystem>
#include <fstream>
#include <functional>

#include "comsl/config.h"
#include "doctest.h"

using namespace comsl;
namespace fs = std::filesystem;

namespace {

fs::path WriteFile(const std::string &name, const std::string &text) {
  const fs::path p = fs::temp_directory_path() / ("comsl_config_test_" + name);
  std::ofstream(p) << text;
  return p;
}

std::string ErrorOf(const std::function<void()> &f) {
  try {
    f();
  } catch (const ConfigError &e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("empty file yields the defaults") {
  const RunConfig cfg = ParseConfig(WriteFile("empty", "").string(), {});
  CHECK(cfg.loss.w_asr == 0.35);
  CHECK(cfg.loss.w_st == 0.35);
  CHECK(cfg.loss.w_mt == 0.2);
  CHECK(cfg.loss.w_cml == 0.1);
  CHECK(cfg.loss.w_erm == 0.1);
  CHECK(cfg.loss.lambda_s == 0.8);
  CHECK(cfg.loss.lambda_t == 0.2);
  CHECK(cfg.model.erm_layer == 4);
  CHECK(cfg.train.beta1 == 0.9);
  CHECK(cfg.train.beta2 == 0.98);
  CHECK(cfg.train.weight_decay == 0.1);
  CHECK(cfg.train.freeze_fraction == 1.0 / 3.0);
  CHECK(cfg.train.beam == 5);
  CHECK(ConfigToText(cfg) == ConfigToText(RunConfig{}));
}

TEST_CASE("file values, then overrides") {
  const auto path = WriteFile("layered",
                              "# comment line\n"
                              "loss.lambda_s = 0.5   # trailing comment\n"
                              "train.batch_size=16\n"
                              "\n"
                              "path.corpus_dir = data/toy\n");
  const RunConfig cfg = ParseConfig(path.string(), {"loss.lambda_s=0", "train.seed=9"});
  CHECK(cfg.loss.lambda_s == 0.0);
  CHECK(cfg.train.batch_size == 16);
  CHECK(cfg.train.seed == 9);
  CHECK(cfg.corpus_dir == "data/toy");
}

TEST_CASE("errors name the offending key") {
  CHECK(ErrorOf([] { ParseConfig("", {"loss.w_xyz=1"}); }).find("loss.w_xyz") != std::string::npos);
  CHECK(ErrorOf([] { ParseConfig("", {"train.batch_size=abc"}); }).find("train.batch_size") !=
        std::string::npos);
  CHECK(ErrorOf([] { ParseConfig("", {"loss.lambda_s=1.5"}); }).find("lambda_s") != std::string::npos);
  CHECK(ErrorOf([] { ParseConfig("", {"loss.w_asr=-1"}); }).find("w_asr") != std::string::npos);
  CHECK(ErrorOf([] { ParseConfig("", {"loss.p_mask=1"}); }).find("p_mask") != std::string::npos);
  CHECK(ErrorOf([] { ParseConfig("", {"train.warmup_steps=5000"}); }).find("warmup_steps") !=
        std::string::npos);
  CHECK(ErrorOf([] { ParseConfig("", {"data.n_content=51"}); }).find("vocab_size") != std::string::npos);
  CHECK(ErrorOf([] { ParseConfig("", {"model.erm_layer=9"}); }).find("erm_layer") != std::string::npos);
  CHECK(ErrorOf([] { ParseConfig("", {"noequals"}); }).find("noequals") != std::string::npos);
  CHECK(ErrorOf([] { ParseConfig("/nonexistent/cfg.txt", {}); }).find("/nonexistent/cfg.txt") !=
        std::string::npos);
  const auto bad_line = WriteFile("badline", "model.d_model 64\n");
  CHECK_FALSE(ErrorOf([&] { ParseConfig(bad_line.string(), {}); }).empty());
}

TEST_CASE("text echo round-trips exactly") {
  RunConfig cfg;
  cfg.train.lr_peak = 1.0 / 3.0;
  cfg.loss.lambda_t = 0.1 + 0.2;
  cfg.train.seed = 18446744073709551615ULL;
  cfg.data.lang_weights = "3,1,1,0.5";
  RunConfig back;
  ApplyConfigText(back, ConfigToText(cfg));
  CHECK(ConfigToText(back) == ConfigToText(cfg));
  CHECK(back.train.lr_peak == cfg.train.lr_peak);
  CHECK(back.loss.lambda_t == cfg.loss.lambda_t);
  CHECK(back.train.seed == cfg.train.seed);
  for (const std::string &key : ConfigKeys())
    CHECK(ConfigToText(cfg).find(key + " = ") != std::string::npos);
}

TEST_CASE("resolution is a pure function of its inputs") {
  const auto path = WriteFile("pure", "model.d_model = 32\nmodel.ffn_dim = 128\n");
  const RunConfig a = ParseConfig(path.string(), {"train.total_steps=100", "train.warmup_steps=10"});
  const RunConfig b = ParseConfig(path.string(), {"train.total_steps=100", "train.warmup_steps=10"});
  CHECK(ConfigToText(a) == ConfigToText(b));
}

TEST_CASE("language lists parse") {
  RunConfig cfg;
  CHECK(cfg.data.LangWeights() == std::vector<double>{4, 2, 1, 1});
  CHECK(cfg.data.PseudoLangs() == std::vector<int>{3});
  CHECK_THROWS_AS(ParseConfig("", {"data.lang_weights=1,2"}), ConfigError);
  CHECK_THROWS_AS(ParseConfig("", {"data.pseudo_langs=7"}), ConfigError);
}
