// src/grad_check.cc

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

#include "comsl/grad_check.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "comsl/ops.h"

namespace comsl {

namespace {

double EvalNoTape(const std::function<Tensor<double>(const Tensor<double> &)> &f,
                  const Tensor<double> &x) {
  NoGradScope<double> no_grad;
  Tensor<double> y = f(x);
  if (y.numel() != 1) throw TensorError("grad_check: f must be scalar-valued");
  double v = y.item();
  if (!std::isfinite(v)) throw TensorError("grad_check: f(x) is not finite");
  return v;
}

}  // namespace

std::vector<double> TapeGradient(const std::function<Tensor<double>(const Tensor<double> &)> &f,
                                 Tensor<double> x) {
  const bool saved = x.requires_grad();
  x.ZeroGrad();
  x.set_requires_grad(true);
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> y = f(x);
    if (y.numel() != 1) throw TensorError("grad_check: f must be scalar-valued");
    if (!std::isfinite(y.item())) throw TensorError("grad_check: f(x) is not finite");
    if (y.requires_grad()) tape.Backward(y);
  }
  std::vector<double> g(x.numel(), 0.0);
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), g.begin());
  x.ZeroGrad();
  x.set_requires_grad(saved);
  return g;
}

double GradCheck(const std::function<Tensor<double>(const Tensor<double> &)> &f,
                 Tensor<double> x, const GradCheckOptions &opts) {
  if (!(opts.eps > 0.0)) throw TensorError("grad_check: eps must be positive");
  const uint64_t draws_before = DropoutDraws();
  std::vector<double> analytic = TapeGradient(f, x);
  if (DropoutDraws() != draws_before)
    throw TensorError("grad_check: f applies dropout (non-deterministic)");

  std::vector<int64_t> coords(x.numel());
  std::iota(coords.begin(), coords.end(), 0);
  if (opts.max_coords > 0 && opts.max_coords < x.numel()) {
    std::mt19937_64 rng(opts.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(opts.max_coords);
  }
  double worst = 0.0;
  auto data = x.mutable_data();
  for (int64_t i : coords) {
    const double orig = data[i];
    data[i] = orig + opts.eps;
    const double up = EvalNoTape(f, x);
    data[i] = orig - opts.eps;
    const double down = EvalNoTape(f, x);
    data[i] = orig;
    const double numeric = (up - down) / (2.0 * opts.eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace comsl
