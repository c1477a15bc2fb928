// src/trainer.cc

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

#include "comsl/trainer.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "comsl/checkpoint.h"
#include "comsl/decode.h"
#include "comsl/random.h"

namespace comsl {

double LearningRate(int64_t s, double peak, int64_t warmup, int64_t total) {
  if (s <= 0) return 0.0;
  if (s >= total) return 0.0;
  if (s < warmup) return peak * static_cast<double>(s) / static_cast<double>(warmup);
  return peak * static_cast<double>(total - s) / static_cast<double>(total - warmup);
}

int64_t FreezeSteps(double freeze_fraction, int64_t total_steps) {
  return static_cast<int64_t>(std::floor(freeze_fraction * static_cast<double>(total_steps)));
}

void SplitCorpus(const std::vector<TripletExample> &corpus, double valid_fraction, uint64_t seed,
                 std::vector<TripletExample> *train, std::vector<TripletExample> *valid) {
  std::map<int, std::vector<size_t>> by_lang;
  for (size_t i = 0; i < corpus.size(); ++i) by_lang[corpus[i].src_lang].push_back(i);
  std::vector<size_t> train_idx, valid_idx;
  for (auto &[lang, idx] : by_lang) {
    Rng rng(DeriveSeed(seed, static_cast<uint64_t>(lang)));
    for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[UniformInt(rng, static_cast<int>(i))]);
    int64_t n_valid = std::llround(valid_fraction * static_cast<double>(idx.size()));
    if (idx.size() >= 2) n_valid = std::clamp<int64_t>(n_valid, 1, static_cast<int64_t>(idx.size()) - 1);
    valid_idx.insert(valid_idx.end(), idx.begin(), idx.begin() + n_valid);
    train_idx.insert(train_idx.end(), idx.begin() + n_valid, idx.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(valid_idx.begin(), valid_idx.end());
  train->clear();
  valid->clear();
  for (size_t i : train_idx) train->push_back(corpus[i]);
  for (size_t i : valid_idx) valid->push_back(corpus[i]);
}

namespace {

template <typename Real> struct DecodeJob {
  const DecoderBatch *batch;
  int memory;
};

// All decoder passes of a step in one call: memories are stacked and each
// job's prefixes point at their own memory segments.
template <typename Real>
std::vector<Tensor<Real>> RunDecodeJobs(ComSLModel<Real> &model,
                                        const std::vector<const Packed<Real> *> &memories,
                                        const std::vector<DecodeJob<Real>> &jobs) {
  Packed<Real> stacked;
  std::vector<int64_t> base;
  for (const Packed<Real> *m : memories) {
    base.push_back(static_cast<int64_t>(stacked.lengths.size()));
    stacked.rows = stacked.lengths.empty() ? m->rows : ConcatSeq(stacked.rows, m->rows);
    stacked.lengths.insert(stacked.lengths.end(), m->lengths.begin(), m->lengths.end());
  }
  std::vector<int32_t> prefixes;
  std::vector<int64_t> lengths, index;
  for (const DecodeJob<Real> &job : jobs) {
    prefixes.insert(prefixes.end(), job.batch->prefixes.begin(), job.batch->prefixes.end());
    for (size_t i = 0; i < job.batch->prefix_lengths.size(); ++i) {
      lengths.push_back(job.batch->prefix_lengths[i]);
      index.push_back(base[job.memory] + static_cast<int64_t>(i));
    }
  }
  Tensor<Real> logits = model.DecodeLogits(stacked, prefixes, lengths, index);
  if (jobs.size() == 1) return {logits};
  std::vector<Tensor<Real>> out;
  int64_t row = 0;
  for (const DecodeJob<Real> &job : jobs) {
    std::vector<int64_t> rows(job.batch->rows());
    std::iota(rows.begin(), rows.end(), row);
    row += job.batch->rows();
    out.push_back(GatherRows(logits, rows));
  }
  return out;
}

template <typename Real> double Value(const Tensor<Real> &t) {
  return t.numel() == 0 ? 0.0 : static_cast<double>(t.item());
}

}  // namespace

template <typename Real>
StepOutput<Real> ForwardLosses(ComSLModel<Real> &model, ComSLModel<Real> *frozen,
                               const Batch &batch, const Vocab &vocab, const LossWeights &w) {
  const int n = batch.batch_size;
  std::vector<std::vector<int32_t>> xs, ys;
  std::vector<int32_t> tags, x_flat, xm_flat;
  std::vector<int64_t> x_len;
  for (int i = 0; i < n; ++i) {
    xs.push_back(batch.X(i));
    ys.push_back(batch.Y(i));
    tags.push_back(vocab.LangTag(batch.src_lang[i]));
    x_flat.insert(x_flat.end(), xs.back().begin(), xs.back().end());
    auto xm = batch.XMasked(i);
    xm_flat.insert(xm_flat.end(), xm.begin(), xm.end());
    x_len.push_back(static_cast<int64_t>(xs.back().size()));
  }
  const DecoderBatch mt_b = MakeDecoderBatch(ys, tags, Vocab::kMt);
  const DecoderBatch st_b = MakeDecoderBatch(ys, tags, Vocab::kSt);
  const DecoderBatch asr_b = MakeDecoderBatch(xs, tags, Vocab::kAsr);

  const bool use_asr = w.w_asr > 0, use_st = w.w_st > 0, use_mt = w.w_mt > 0;
  const bool use_ddm = use_st && w.lambda_s > 0;
  const bool use_cml = w.w_cml > 0;
  const bool use_erm = use_cml && w.w_erm > 0;
  const bool need_text = use_mt || use_ddm;
  const bool need_speech_only = use_asr || use_st || use_erm;

  std::vector<const Packed<Real> *> memories;
  std::vector<DecodeJob<Real>> jobs;
  Encoding<Real> zx, zs;
  ConcatEncoding<Real> cc;
  int job_mt = -1, job_asr = -1, job_st = -1, job_mtp = -1, job_src = -1, job_tgt = -1;

  if (need_text) {
    zx = model.EncodeText(x_flat, x_len);
    memories.push_back(&zx.hidden);
    job_mt = static_cast<int>(jobs.size());
    jobs.push_back({&mt_b, static_cast<int>(memories.size()) - 1});
  }
  Packed<Real> es;
  if (need_speech_only || use_cml) {
    std::vector<int64_t> frame_lengths;
    Tensor<Real> frames;
    {
      int64_t total = 0;
      for (int i = 0; i < n; ++i) total += batch.frame_lengths[i];
      frames = Tensor<Real>(Shape{total, static_cast<int64_t>(batch.feat_dim)});
      auto dst = frames.mutable_data();
      size_t pos = 0;
      for (int i = 0; i < n; ++i) {
        const size_t base = static_cast<size_t>(i) * batch.max_frames * batch.feat_dim;
        const size_t count = static_cast<size_t>(batch.frame_lengths[i]) * batch.feat_dim;
        for (size_t k = 0; k < count; ++k) dst[pos++] = static_cast<Real>(batch.frames[base + k]);
        frame_lengths.push_back(batch.frame_lengths[i]);
      }
    }
    es = model.EncodeSpeech(frames, frame_lengths);
  }
  if (need_speech_only) {
    zs = model.EncodeSpeechOnly(es);
    if (use_asr || use_st) memories.push_back(&zs.hidden);
    if (use_asr) {
      job_asr = static_cast<int>(jobs.size());
      jobs.push_back({&asr_b, static_cast<int>(memories.size()) - 1});
    }
    if (use_st) {
      job_st = static_cast<int>(jobs.size());
      jobs.push_back({&st_b, static_cast<int>(memories.size()) - 1});
    }
  }
  if (use_cml) {
    cc = model.EncodeConcat(es, xm_flat, x_len);
    memories.push_back(&cc.text.hidden);
    job_mtp = static_cast<int>(jobs.size());
    jobs.push_back({&asr_b, static_cast<int>(memories.size()) - 1});
    memories.push_back(&cc.speech.hidden);
    job_src = static_cast<int>(jobs.size());
    jobs.push_back({&asr_b, static_cast<int>(memories.size()) - 1});
    job_tgt = static_cast<int>(jobs.size());
    jobs.push_back({&st_b, static_cast<int>(memories.size()) - 1});
  }

  std::vector<Tensor<Real>> logits;
  if (!jobs.empty()) logits = RunDecodeJobs(model, memories, jobs);

  Tensor<Real> asr, st, mt, cml;
  LossReport r;
  if (use_mt) {
    Tensor<Real> teacher;
    if (w.lambda_t > 0) {
      if (frozen == nullptr) throw TensorError("mt regularization: frozen teacher missing");
      NoGradScope<Real> no_grad;
      Encoding<Real> tz = frozen->EncodeText(x_flat, x_len);
      teacher = frozen->DecodeLogits(tz.hidden, mt_b.prefixes, mt_b.prefix_lengths);
    }
    mt = LossMtReg(logits[job_mt], teacher, mt_b, w.lambda_t);
  }
  if (use_asr) asr = LossAsr(logits[job_asr], asr_b);
  if (use_st) {
    Tensor<Real> teacher = use_ddm ? Detach(logits[job_mt]) : Tensor<Real>();
    st = LossStDdm(logits[job_st], teacher, st_b, use_ddm ? w.lambda_s : 0.0);
  }
  if (use_cml) {
    Tensor<Real> mtp = LossMtp(logits[job_mtp], asr_b, batch.mask_positions);
    StmLosses<Real> stm = LossStm(logits[job_src], asr_b, logits[job_tgt], st_b);
    Tensor<Real> erm = use_erm ? LossErm(cc.speech.trace, zs.trace, es.lengths)
                               : Tensor<Real>::Scalar(Real(0));
    cml = LossCml(stm.src, stm.tgt, mtp, erm, w.w_erm);
    r.mtp = Value(mtp);
    r.stm_src = Value(stm.src);
    r.stm_tgt = Value(stm.tgt);
    r.erm = Value(erm);
    r.cml = Value(cml);
  }
  StepOutput<Real> out;
  out.total = LossTotal(asr, st, mt, cml, w);
  r.asr = Value(asr);
  r.st = Value(st);
  r.mt = Value(mt);
  r.total = Value(out.total);
  out.report = r;
  return out;
}

template <typename Real>
AdamW<Real>::AdamW(const std::vector<NamedParam<Real>> &params, double beta1, double beta2,
                   double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  for (const auto &p : params) {
    m_.emplace_back(p.value.numel(), Real(0));
    v_.emplace_back(p.value.numel(), Real(0));
  }
  steps_.assign(params.size(), 0);
}

template <typename Real>
void AdamW<Real>::Step(std::vector<NamedParam<Real>> &params, const std::vector<bool> &update,
                       double lr) {
  if (params.size() != m_.size() || update.size() != params.size())
    throw TrainError("adam: parameter list does not match optimizer state");
  for (size_t i = 0; i < params.size(); ++i) {
    if (!update[i]) continue;
    Tensor<Real> &p = params[i].value;
    auto data = p.mutable_data();
    const bool has_grad = p.has_grad();
    auto grad = p.grad();
    const int64_t t = ++steps_[i];
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t));
    const double decay = p.rank() >= 2 ? weight_decay_ : 0.0;
    auto &m = m_[i];
    auto &v = v_[i];
    for (size_t k = 0; k < data.size(); ++k) {
      const double g = has_grad ? static_cast<double>(grad[k]) : 0.0;
      const double mk = beta1_ * m[k] + (1.0 - beta1_) * g;
      const double vk = beta2_ * v[k] + (1.0 - beta2_) * g * g;
      m[k] = static_cast<Real>(mk);
      v[k] = static_cast<Real>(vk);
      double x = static_cast<double>(data[k]) * (1.0 - lr * decay);
      x -= lr * (mk / bc1) / (std::sqrt(vk / bc2) + eps_);
      data[k] = static_cast<Real>(x);
    }
  }
}

template <typename Real>
double ClipGradients(std::vector<NamedParam<Real>> &params, const std::vector<bool> &update,
                     double max_norm) {
  double sq = 0;
  for (size_t i = 0; i < params.size(); ++i) {
    if (!update[i] || !params[i].value.has_grad()) continue;
    for (Real g : params[i].value.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const Real scale = static_cast<Real>(max_norm / norm);
    for (size_t i = 0; i < params.size(); ++i) {
      if (!update[i] || !params[i].value.has_grad()) continue;
      for (Real &g : params[i].value.mutable_grad()) g *= scale;
    }
  }
  return norm;
}

template <typename Real> uint64_t ParamChecksum(const std::vector<NamedParam<Real>> &params) {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void *data, size_t n) {
    const auto *b = static_cast<const unsigned char *>(data);
    for (size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ULL;
  };
  for (const auto &p : params) {
    mix(p.name.data(), p.name.size());
    mix(p.value.data().data(), p.value.data().size() * sizeof(Real));
  }
  return h;
}

template class AdamW<float>;
template class AdamW<double>;
template StepOutput<float> ForwardLosses(ComSLModel<float> &, ComSLModel<float> *, const Batch &,
                                         const Vocab &, const LossWeights &);
template StepOutput<double> ForwardLosses(ComSLModel<double> &, ComSLModel<double> *,
                                          const Batch &, const Vocab &, const LossWeights &);
template double ClipGradients(std::vector<NamedParam<float>> &, const std::vector<bool> &, double);
template double ClipGradients(std::vector<NamedParam<double>> &, const std::vector<bool> &, double);
template uint64_t ParamChecksum(const std::vector<NamedParam<float>> &);
template uint64_t ParamChecksum(const std::vector<NamedParam<double>> &);

Trainer::Trainer(const RunConfig &cfg, std::unique_ptr<Model> model, std::unique_ptr<Model> teacher)
    : cfg_(cfg),
      vocab_(cfg.data.n_content, cfg.data.n_langs, cfg.model.vocab_size),
      model_(std::move(model)),
      teacher_(std::move(teacher)),
      adam_(model_->params(), cfg.train.beta1, cfg.train.beta2, cfg.train.adam_eps,
            cfg.train.weight_decay) {
  if (teacher_)
    for (auto &p : teacher_->params()) p.value.set_requires_grad(false);
}

StepRecord Trainer::TrainStep(const Batch &batch) {
  auto &params = model_->params();
  for (auto &p : params) p.value.ZeroGrad();
  const int64_t s = step_ + 1;
  StepRecord rec;
  rec.step = s;
  {
    Tape<float> tape;
    TapeScope<float> scope(tape);
    Rng dropout(DeriveSeed(cfg_.train.seed, 0x5eed0000ULL + static_cast<uint64_t>(s)));
    model_->SetDropoutRng(&dropout);
    StepOutput<float> out;
    try {
      out = ForwardLosses(*model_, teacher_.get(), batch, vocab_, cfg_.loss);
    } catch (...) {
      model_->SetDropoutRng(nullptr);
      throw;
    }
    model_->SetDropoutRng(nullptr);
    rec.report = out.report;
    if (!std::isfinite(out.report.total) || out.report.total > 1e4)
      throw TrainError("divergence at step " + std::to_string(s) + ": " + out.report.ToString());
    if (out.total.requires_grad()) tape.Backward(out.total);
  }
  rec.lr = LearningRate(s, cfg_.train.lr_peak, cfg_.train.warmup_steps, cfg_.train.total_steps);
  rec.frozen = s <= FreezeSteps(cfg_.train.freeze_fraction, cfg_.train.total_steps);
  std::vector<bool> update(params.size());
  for (size_t i = 0; i < params.size(); ++i)
    update[i] = !(rec.frozen && params[i].group == ParamGroup::kSpeech);
  ClipGradients(params, update, cfg_.train.grad_clip);
  adam_.Step(params, update, rec.lr);
  for (auto &p : params) p.value.ZeroGrad();
  step_ = s;
  return rec;
}

namespace {

std::vector<uint32_t> Dims(const Shape &shape) {
  std::vector<uint32_t> d;
  for (int64_t x : shape) d.push_back(static_cast<uint32_t>(x));
  return d;
}

std::vector<float> Floats(const Tensor<float> &t) { return {t.data().begin(), t.data().end()}; }

void Restore(const ArchiveArray &a, const Shape &shape, std::span<float> dst) {
  if (a.dtype != 0 || a.dims != Dims(shape) || a.f32.size() != dst.size())
    throw CheckpointError("array " + a.name + " does not match the model");
  std::copy(a.f32.begin(), a.f32.end(), dst.begin());
}

RunConfig ConfigFromArchive(const Archive &archive) {
  RunConfig cfg;
  ApplyConfigText(cfg, archive.config_text, "checkpoint config");
  cfg.Check();
  return cfg;
}

}  // namespace

void Trainer::Save(const std::filesystem::path &path) const {
  Archive a;
  const auto &params = model_->params();
  for (const auto &p : params)
    a.arrays.push_back(ArchiveArray::F32("param/" + p.name, Dims(p.value.shape()), Floats(p.value)));
  if (teacher_)
    for (const auto &p : teacher_->params())
      a.arrays.push_back(
          ArchiveArray::F32("teacher/" + p.name, Dims(p.value.shape()), Floats(p.value)));
  for (size_t i = 0; i < params.size(); ++i) {
    const auto dims = Dims(params[i].value.shape());
    a.arrays.push_back(ArchiveArray::F32("adam_m/" + params[i].name, dims, adam_.m()[i]));
    a.arrays.push_back(ArchiveArray::F32("adam_v/" + params[i].name, dims, adam_.v()[i]));
    a.arrays.push_back(ArchiveArray::F64("adam_step/" + params[i].name, {1},
                                         {static_cast<double>(adam_.steps()[i])}));
  }
  a.arrays.push_back(ArchiveArray::F64("state/step", {1}, {static_cast<double>(step_)}));
  a.config_text = ConfigToText(cfg_);
  WriteArchive(path, a);
}

std::unique_ptr<Trainer> Trainer::Load(const std::filesystem::path &path) {
  const Archive a = ReadArchive(path);
  const RunConfig cfg = ConfigFromArchive(a);
  auto model = std::make_unique<Model>(cfg.model, 0);
  std::unique_ptr<Model> teacher;
  for (const auto &arr : a.arrays)
    if (arr.name.rfind("teacher/", 0) == 0) {
      teacher = std::make_unique<Model>(cfg.model, 0);
      break;
    }
  std::map<std::string, std::pair<Tensor<float>, int>> by_name;  // value, param index
  auto &params = model->params();
  for (size_t i = 0; i < params.size(); ++i)
    by_name["param/" + params[i].name] = {params[i].value, static_cast<int>(i)};
  if (teacher)
    for (auto &p : teacher->params()) by_name["teacher/" + p.name] = {p.value, -1};

  auto trainer = std::make_unique<Trainer>(cfg, std::move(model), std::move(teacher));
  auto &tparams = trainer->model_->params();
  std::map<std::string, size_t> index;
  for (size_t i = 0; i < tparams.size(); ++i) index[tparams[i].name] = i;
  size_t restored = 0;
  for (const ArchiveArray &arr : a.arrays) {
    const auto slash = arr.name.find('/');
    const std::string kind = arr.name.substr(0, slash), rest = arr.name.substr(slash + 1);
    if (kind == "param" || kind == "teacher") {
      auto it = by_name.find(arr.name);
      if (it == by_name.end()) throw CheckpointError("unknown array name " + arr.name);
      Tensor<float> t = it->second.first;
      Restore(arr, t.shape(), t.mutable_data());
      ++restored;
    } else if (kind == "adam_m" || kind == "adam_v" || kind == "adam_step") {
      auto it = index.find(rest);
      if (it == index.end()) throw CheckpointError("unknown array name " + arr.name);
      const size_t i = it->second;
      if (kind == "adam_step") {
        if (arr.dtype != 1 || arr.f64.size() != 1) throw CheckpointError("bad " + arr.name);
        trainer->adam_.steps()[i] = static_cast<int64_t>(arr.f64[0]);
      } else {
        auto &dst = kind == "adam_m" ? trainer->adam_.m()[i] : trainer->adam_.v()[i];
        Restore(arr, tparams[i].value.shape(), dst);
      }
    } else if (arr.name == "state/step") {
      if (arr.dtype != 1 || arr.f64.size() != 1) throw CheckpointError("bad state/step");
      trainer->step_ = static_cast<int64_t>(arr.f64[0]);
    } else {
      throw CheckpointError("unknown array name " + arr.name);
    }
  }
  if (restored != by_name.size()) throw CheckpointError(path.string() + ": missing parameters");
  return trainer;
}

RunConfig CheckpointConfig(const std::filesystem::path &path) {
  return ConfigFromArchive(ReadArchive(path));
}

std::unique_ptr<Model> LoadModel(const std::filesystem::path &path) {
  auto trainer = Trainer::Load(path);
  auto model = std::make_unique<Model>(trainer->config().model, 0);
  model->CopyParametersFrom(trainer->model());
  return model;
}

BatchSchedule::BatchSchedule(size_t n_examples, int batch_size, uint64_t seed)
    : n_(n_examples), batch_size_(batch_size), seed_(seed) {
  if (n_examples == 0) throw TrainError("batch schedule: empty training set");
  if (batch_size < 1) throw TrainError("batch schedule: batch_size must be >= 1");
}

std::vector<size_t> BatchSchedule::Indices(int64_t step) {
  const size_t bs = std::min<size_t>(batch_size_, n_);
  const int64_t per_epoch = static_cast<int64_t>(n_ / bs);
  const int64_t epoch = (step - 1) / per_epoch, k = (step - 1) % per_epoch;
  if (epoch != cached_epoch_) {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), 0);
    Rng rng(DeriveSeed(seed_, static_cast<uint64_t>(epoch)));
    for (size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[UniformInt(rng, static_cast<int>(i))]);
    cached_epoch_ = epoch;
  }
  return {order_.begin() + k * bs, order_.begin() + (k + 1) * bs};
}

std::unique_ptr<Model> PretrainMt(Model &model, const std::vector<TripletExample> &train,
                                  const RunConfig &cfg,
                                  const std::function<void(int64_t, double)> &on_step) {
  if (train.empty()) throw TrainError("pretrain: empty corpus");
  const Vocab vocab(cfg.data.n_content, cfg.data.n_langs, cfg.model.vocab_size);
  auto &params = model.params();
  std::vector<bool> update(params.size());
  for (size_t i = 0; i < params.size(); ++i)
    update[i] = params[i].group == ParamGroup::kTextEnc || params[i].group == ParamGroup::kTextDec ||
                params[i].group == ParamGroup::kSharedEmbed;
  AdamW<float> adam(params, cfg.train.beta1, cfg.train.beta2, cfg.train.adam_eps,
                    cfg.train.weight_decay);
  BatchSchedule schedule(train.size(), cfg.train.batch_size, DeriveSeed(cfg.train.seed, 0x9e7));
  for (int64_t s = 1; s <= cfg.train.pretrain_steps; ++s) {
    std::vector<std::vector<int32_t>> ys;
    std::vector<int32_t> tags, x_flat;
    std::vector<int64_t> x_len;
    for (size_t i : schedule.Indices(s)) {
      const TripletExample &ex = train[i];
      ys.push_back(ex.y);
      tags.push_back(vocab.LangTag(ex.src_lang));
      x_flat.insert(x_flat.end(), ex.x.begin(), ex.x.end());
      x_len.push_back(static_cast<int64_t>(ex.x.size()));
    }
    const DecoderBatch mt_b = MakeDecoderBatch(ys, tags, Vocab::kMt);
    for (auto &p : params) p.value.ZeroGrad();
    double loss_value;
    {
      Tape<float> tape;
      TapeScope<float> scope(tape);
      Rng dropout(DeriveSeed(cfg.train.seed, 0x9e70000ULL + static_cast<uint64_t>(s)));
      model.SetDropoutRng(&dropout);
      Encoding<float> z = model.EncodeText(x_flat, x_len);
      Tensor<float> loss = LossAsr(model.DecodeLogits(z.hidden, mt_b.prefixes, mt_b.prefix_lengths), mt_b);
      model.SetDropoutRng(nullptr);
      loss_value = loss.item();
      if (!std::isfinite(loss_value)) throw TrainError("pretrain: non-finite loss at step " + std::to_string(s));
      tape.Backward(loss);
    }
    ClipGradients(params, update, cfg.train.grad_clip);
    adam.Step(params, update,
              LearningRate(s, cfg.train.pretrain_lr, cfg.train.pretrain_warmup, cfg.train.pretrain_steps));
    if (on_step) on_step(s, loss_value);
  }
  for (auto &p : params) p.value.ZeroGrad();
  auto frozen = std::make_unique<Model>(cfg.model, 0);
  frozen->CopyParametersFrom(model);
  for (auto &p : frozen->params()) p.value.set_requires_grad(false);
  return frozen;
}

double ValidationBleu(Model &model, const std::vector<TripletExample> &valid, const Vocab &vocab,
                      int beam, int limit) {
  // A limited subset is spread evenly over the split so every language is seen.
  std::vector<TripletExample> subset;
  if (limit > 0 && static_cast<size_t>(limit) < valid.size()) {
    for (size_t i = 0; i < static_cast<size_t>(limit); ++i)
      subset.push_back(valid[i * valid.size() / limit]);
  } else {
    subset = valid;
  }
  std::vector<std::vector<int32_t>> refs;
  for (const auto &ex : subset) refs.push_back(ex.y);
  return CorpusBleu(Translate(model, subset, vocab, beam, false), refs);
}

std::string FormatRecord(const StepRecord &r) {
  std::ostringstream os;
  os.precision(6);
  os << "step=" << r.step << " lr=" << r.lr << " frozen=" << (r.frozen ? 1 : 0) << ' '
     << r.report.ToString();
  if (r.bleu >= 0) os << " bleu=" << r.bleu;
  return os.str();
}

FitResult Fit(Trainer &trainer, const std::vector<TripletExample> &train,
              const std::vector<TripletExample> &valid, std::ostream *log) {
  const RunConfig &cfg = trainer.config();
  const auto start = std::chrono::steady_clock::now();
  FitResult result;
  result.best_checkpoint = std::filesystem::path(cfg.checkpoint_dir) / "best.ckpt";
  BatchSchedule schedule(train.size(), cfg.train.batch_size, DeriveSeed(cfg.train.seed, 0xba7c4));
  while (trainer.step() < cfg.train.total_steps) {
    const int64_t s = trainer.step() + 1;
    std::vector<const TripletExample *> examples;
    for (size_t i : schedule.Indices(s)) examples.push_back(&train[i]);
    const Batch batch = CollateBatch(examples, trainer.vocab(), cfg.loss.p_mask,
                                     DeriveSeed(cfg.train.seed, 0xa5c0000ULL + static_cast<uint64_t>(s)));
    StepRecord rec = trainer.TrainStep(batch);
    if (s % cfg.train.validation_every == 0 || s == cfg.train.total_steps) {
      rec.bleu = ValidationBleu(trainer.model(), valid, trainer.vocab(), cfg.train.beam,
                                cfg.train.validation_limit);
      if (rec.bleu > result.best_bleu) {
        result.best_bleu = rec.bleu;
        result.best_step = s;
        trainer.Save(result.best_checkpoint);
      }
    }
    if (log) *log << FormatRecord(rec) << '\n' << std::flush;
    result.log.push_back(rec);
  }
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace comsl
