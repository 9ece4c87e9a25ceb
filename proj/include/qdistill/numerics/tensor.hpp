// Copyright 2026 The qdistill Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qdistill/error.hpp"

namespace qdistill {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until the first gradient contribution
  bool requires_grad = false;

  std::vector<T>& ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), T(0));
    return grad;
  }
};

}  // namespace detail

// Dense row-major array. Copies share storage (handle semantics); use
// detach() for an independent copy. T is float for training and inference;
// double exists for finite-difference gradient checks.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using Node = detail::TensorNode<T>;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape);
  BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static BasicTensor scalar(T value);
  static BasicTensor filled(Shape shape, T value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node().values.size(); }

  std::span<const T> values() const { return node().values; }
  std::span<T> mutable_values() { return node().values; }
  T operator[](std::size_t i) const { return node().values[i]; }
  // The single value of a one-element tensor.
  T item() const;

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool on) { node().requires_grad = on; }
  bool has_grad() const { return !node().grad.empty(); }
  std::span<const T> grad() const { return node().grad; }
  std::span<T> mutable_grad() { return node().ensure_grad(); }
  void zero_grad() { node().grad.clear(); }

  BasicTensor detach() const;

  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  Node& node() const;
  std::shared_ptr<Node> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Converts element precision; the result does not require gradients.
template <typename To, typename From>
BasicTensor<To> cast(const BasicTensor<From>& t) {
  std::vector<To> out(t.values().begin(), t.values().end());
  return BasicTensor<To>(t.shape(), std::move(out));
}

// Ordered record of differentiable primitive applications on this thread.
// While a tape is alive, every primitive whose inputs require gradients is
// appended to it; backward() replays the record in reverse and clears it.
// Without an active tape nothing is recorded and tensors are plain values.
template <typename T>
class GradTape {
 public:
  using Node = detail::TensorNode<T>;
  using BackwardFn = std::function<void(const Node& output)>;

  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active() { return active_; }

  // Suspends recording on this thread for its lifetime.
  class Pause {
   public:
    Pause() : saved_(active_) { active_ = nullptr; }
    ~Pause() { active_ = saved_; }
    Pause(const Pause&) = delete;
    Pause& operator=(const Pause&) = delete;

   private:
    GradTape* saved_;
  };

  void record(std::shared_ptr<Node> output, BackwardFn fn);
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  // Seeds d(loss)/d(loss) = 1, propagates to every requires_grad tensor
  // reachable on the tape, then clears the tape. Gradients accumulate into
  // existing leaf gradients.
  void backward(const BasicTensor<T>& loss);

 private:
  struct Entry {
    std::shared_ptr<Node> output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  GradTape* previous_ = nullptr;
  static thread_local GradTape* active_;
};

template <typename T>
inline thread_local GradTape<T>* GradTape<T>::active_ = nullptr;

// backward() on the innermost active tape; ContractError without one.
template <typename T>
void backward(const BasicTensor<T>& loss);

}  // namespace qdistill
