// comsl/grad_check.h

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

#ifndef COMSL_GRAD_CHECK_H_
#define COMSL_GRAD_CHECK_H_

#include <cstdint>
#include <functional>
#include <vector>

#include "comsl/tensor.h"

namespace comsl {

struct GradCheckOptions {
  double eps = 1e-5;
  /// When > 0, check only this many coordinates of x (chosen by `seed`).
  int64_t max_coords = 0;
  uint64_t seed = 0;
};

/// Compares the tape gradient of scalar f at x against central differences.
/// Returns max over checked coordinates of |analytic - numeric| / max(1, |analytic|).
/// x is perturbed in place and restored, so f may read x through shared
/// storage (e.g. x is a model parameter).  Rejects f that draws dropout masks
/// or produces a non-finite value.
double GradCheck(const std::function<Tensor<double>(const Tensor<double> &)> &f,
                 Tensor<double> x, const GradCheckOptions &opts = {});

/// Tape gradient of scalar f with respect to x (zeros where nothing flows).
/// Stop-gradient contracts are checked by asserting this is exactly zero.
std::vector<double> TapeGradient(const std::function<Tensor<double>(const Tensor<double> &)> &f,
                                 Tensor<double> x);

}  // namespace comsl

#endif  // COMSL_GRAD_CHECK_H_
