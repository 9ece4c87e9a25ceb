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

#include "qdistill/numerics/tensor.hpp"

#include <sstream>

namespace qdistill {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape)
    : node_(std::make_shared<Node>()) {
  node_->values.assign(shape_numel(shape), T(0));
  node_->shape = std::move(shape);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values,
                            bool requires_grad)
    : node_(std::make_shared<Node>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value) {
  return BasicTensor(Shape{}, std::vector<T>{value});
}

template <typename T>
BasicTensor<T> BasicTensor<T>::filled(Shape shape, T value) {
  std::vector<T> values(shape_numel(shape), value);
  return BasicTensor(std::move(shape), std::move(values));
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ContractError("axis " + std::to_string(axis) +
                        " out of bounds for shape " + shape_str(shape()));
  }
  return node().shape[axis];
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_str(shape()));
  }
  return node().values[0];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return BasicTensor(node().shape, node().values);
}

template <typename T>
typename BasicTensor<T>::Node& BasicTensor<T>::node() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return *node_;
}

template <typename T>
GradTape<T>::GradTape() : previous_(active_) {
  active_ = this;
}

template <typename T>
GradTape<T>::~GradTape() {
  active_ = previous_;
}

template <typename T>
void GradTape<T>::record(std::shared_ptr<Node> output, BackwardFn fn) {
  entries_.push_back(Entry{std::move(output), std::move(fn)});
}

template <typename T>
void GradTape<T>::backward(const BasicTensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    entries_.clear();
    return;
  }
  auto& seed = loss.node_ptr()->ensure_grad();
  seed[0] += T(1);
  // Entries were appended in execution order, which is a topological order
  // of the graph; walking it backwards visits consumers before producers.
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    const Node& out = *it->output;
    if (out.grad.empty()) continue;
    it->fn(out);
  }
  entries_.clear();
}

template <typename T>
void backward(const BasicTensor<T>& loss) {
  GradTape<T>* tape = GradTape<T>::active();
  if (tape == nullptr) {
    throw ContractError("backward() called without an active GradTape");
  }
  tape->backward(loss);
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template class GradTape<float>;
template class GradTape<double>;
template void backward(const BasicTensor<float>&);
template void backward(const BasicTensor<double>&);

}  // namespace qdistill
