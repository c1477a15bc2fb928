// src/tensor.cc

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

#include "comsl/tensor.h"

#include <sstream>

namespace comsl {

std::string ShapeToString(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

int64_t NumElements(const Shape &shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw TensorError("negative dimension in shape " + ShapeToString(shape));
    n *= d;
  }
  return n;
}

template <typename Real>
Tensor<Real>::Tensor() : Tensor(Shape{0}) {}

template <typename Real>
Tensor<Real>::Tensor(const Shape &shape, Real fill)
    : impl_(std::make_shared<internal::TensorStorage<Real>>()) {
  impl_->shape = shape;
  impl_->data.assign(NumElements(shape), fill);
}

template <typename Real>
Tensor<Real>::Tensor(const Shape &shape, std::vector<Real> values)
    : impl_(std::make_shared<internal::TensorStorage<Real>>()) {
  if (static_cast<int64_t>(values.size()) != NumElements(shape))
    throw TensorError("data length " + std::to_string(values.size()) +
                      " does not match shape " + ShapeToString(shape));
  impl_->shape = shape;
  impl_->data = std::move(values);
}

template <typename Real>
int64_t Tensor<Real>::dim(int64_t i) const {
  if (i < 0 || i >= rank())
    throw TensorError("dim index " + std::to_string(i) + " out of range for " +
                      ShapeToString(shape()));
  return impl_->shape[i];
}

template <typename Real>
int64_t Tensor<Real>::rows() const {
  if (rank() != 2) throw TensorError("expected a matrix, got " + ShapeToString(shape()));
  return impl_->shape[0];
}

template <typename Real>
int64_t Tensor<Real>::cols() const {
  if (rank() != 2) throw TensorError("expected a matrix, got " + ShapeToString(shape()));
  return impl_->shape[1];
}

template <typename Real>
Real Tensor<Real>::item() const {
  if (numel() != 1)
    throw TensorError("item() on non-scalar " + ShapeToString(shape()));
  return impl_->data[0];
}

template <typename Real>
Tensor<Real> Tensor<Real>::Clone() const {
  return Tensor(impl_->shape, impl_->data);
}

template <typename Real>
void Tape<Real>::Record(const Tensor<Real> &output, BackwardFn fn) {
  auto &st = output.storage();
  st->tape = this;
  st->tape_epoch = epoch_;
  st->node = static_cast<int64_t>(nodes_.size());
  nodes_.push_back({st, std::move(fn)});
}

template <typename Real>
void Tape<Real>::Backward(const Tensor<Real> &loss) {
  if (loss.numel() != 1)
    throw TensorError("backward requires a scalar loss, got " + ShapeToString(loss.shape()));
  const auto &st = loss.storage();
  if (st->tape != this || st->tape_epoch != epoch_ || st->node < 0)
    throw TensorError(
        "loss was not produced on the active tape (double backward is not supported)");
  st->EnsureGrad()[0] += Real(1);
  for (int64_t i = st->node; i >= 0; --i) {
    Node &n = nodes_[i];
    if (n.output->grad.empty()) continue;  // not on a path to the loss
    n.backward();
  }
  Clear();
}

template <typename Real>
void Tape<Real>::Clear() {
  nodes_.clear();
  ++epoch_;
}

template <typename Real>
Tape<Real> *&ActiveTape() {
  thread_local Tape<Real> *tape = nullptr;
  return tape;
}

template <typename Real>
void Backward(const Tensor<Real> &loss) {
  Tape<Real> *tape = ActiveTape<Real>();
  if (tape == nullptr) throw TensorError("backward called with no active tape");
  tape->Backward(loss);
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template Tape<float> *&ActiveTape<float>();
template Tape<double> *&ActiveTape<double>();
template void Backward(const Tensor<float> &);
template void Backward(const Tensor<double> &);

}  // namespace comsl
