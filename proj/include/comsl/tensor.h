// comsl/tensor.h

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

#ifndef COMSL_TENSOR_H_
#define COMSL_TENSOR_H_

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace comsl {

using Shape = std::vector<int64_t>;

std::string ShapeToString(const Shape &shape);
int64_t NumElements(const Shape &shape);

/// Thrown for any violated precondition on tensor operations (shape
/// mismatch, empty reduction, misuse of the tape).
class TensorError : public std::runtime_error {
 public:
  explicit TensorError(const std::string &msg) : std::runtime_error(msg) {}
};

template <typename Real> class Tape;

namespace internal {

template <typename Real>
struct TensorStorage {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until first accumulation
  bool requires_grad = false;
  // Producer on a tape; valid only while tape_epoch matches the tape's epoch.
  const Tape<Real> *tape = nullptr;
  uint64_t tape_epoch = 0;
  int64_t node = -1;

  Real *EnsureGrad() {
    if (grad.empty()) grad.assign(data.size(), Real(0));
    return grad.data();
  }
};

template <typename Real>
using StoragePtr = std::shared_ptr<TensorStorage<Real>>;

}  // namespace internal

/// Shaped, row-major real array.  Copies are shallow: two Tensor handles may
/// refer to the same storage (this is how parameters are shared between the
/// model and the optimizer).  Use Clone() for a deep copy.
template <typename Real>
class Tensor {
 public:
  Tensor();
  explicit Tensor(const Shape &shape, Real fill = Real(0));
  Tensor(const Shape &shape, std::vector<Real> values);

  static Tensor Scalar(Real value) { return Tensor(Shape{}, {value}); }

  const Shape &shape() const { return impl_->shape; }
  int64_t rank() const { return static_cast<int64_t>(impl_->shape.size()); }
  int64_t dim(int64_t i) const;
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }
  /// Rows/cols of a rank-2 tensor; throws otherwise.
  int64_t rows() const;
  int64_t cols() const;

  std::span<const Real> data() const { return impl_->data; }
  std::span<Real> mutable_data() { return impl_->data; }
  Real item() const;
  Real at(int64_t r, int64_t c) const { return impl_->data[r * cols() + c]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient view; empty span when no gradient has been accumulated.
  std::span<const Real> grad() const { return impl_->grad; }
  std::span<Real> mutable_grad() { return {impl_->EnsureGrad(), impl_->data.size()}; }
  void ZeroGrad() { impl_->grad.clear(); }

  /// Deep copy of data (not grad, not tape linkage).
  Tensor Clone() const;
  /// Same storage identity?
  bool SameStorage(const Tensor &other) const { return impl_ == other.impl_; }

  const internal::StoragePtr<Real> &storage() const { return impl_; }
  explicit Tensor(internal::StoragePtr<Real> impl) : impl_(std::move(impl)) {}

 private:
  internal::StoragePtr<Real> impl_;
};

/// Ordered record of differentiable operations.  Nodes are appended in
/// execution order, so the record is topological by construction.
template <typename Real>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  /// Appends a node producing `output`; `fn` reads output's grad and
  /// accumulates into the inputs it captured.
  void Record(const Tensor<Real> &output, BackwardFn fn);

  /// Seeds d(loss)/d(loss) = 1 and replays recorded nodes in reverse.
  /// Gradients accumulate into every requires_grad tensor reached.  The tape
  /// is cleared afterwards, so a second call on the same loss throws.
  void Backward(const Tensor<Real> &loss);

  void Clear();
  size_t size() const { return nodes_.size(); }
  uint64_t epoch() const { return epoch_; }

 private:
  struct Node {
    internal::StoragePtr<Real> output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  uint64_t epoch_ = 1;
};

/// Tape that ops record onto in the current thread; nullptr means ops only
/// compute forward values.
template <typename Real>
Tape<Real> *&ActiveTape();

/// Makes `tape` the active tape for the lifetime of the scope.
template <typename Real>
class TapeScope {
 public:
  explicit TapeScope(Tape<Real> &tape) : saved_(ActiveTape<Real>()) {
    ActiveTape<Real>() = &tape;
  }
  ~TapeScope() { ActiveTape<Real>() = saved_; }
  TapeScope(const TapeScope &) = delete;
  TapeScope &operator=(const TapeScope &) = delete;

 private:
  Tape<Real> *saved_;
};

/// Suspends recording; everything computed inside is a constant.
template <typename Real>
class NoGradScope {
 public:
  NoGradScope() : saved_(ActiveTape<Real>()) { ActiveTape<Real>() = nullptr; }
  ~NoGradScope() { ActiveTape<Real>() = saved_; }
  NoGradScope(const NoGradScope &) = delete;
  NoGradScope &operator=(const NoGradScope &) = delete;

 private:
  Tape<Real> *saved_;
};

/// Runs backward on the active tape.
template <typename Real>
void Backward(const Tensor<Real> &loss);

}  // namespace comsl

#endif  // COMSL_TENSOR_H_
