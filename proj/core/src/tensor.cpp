/*
 * Copyright 2026 The fimpp Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "fimpp/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "fimpp/errors.hpp"

namespace fimpp {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor() : shape_{0}, values_(std::make_shared<const std::vector<double>>()) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  if (shape_size(shape_) != values.size()) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericalError("tensor constructed with a non-finite value");
  }
  values_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return matrix(n, n, std::move(v));
}

std::size_t Tensor::rows() const { return shape_.size() == 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const { return shape_.empty() ? 1 : shape_.back(); }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape_));
  return (*values_)[0];
}

Tensor Tensor::detach() const {
  Tensor out = *this;
  out.tape_ = nullptr;
  out.node_ = 0;
  return out;
}

Mask Mask::all(Shape shape) {
  Mask m;
  m.keep.assign(shape_size(shape), 1);
  m.shape = std::move(shape);
  return m;
}

Mask Mask::causal(std::size_t n) {
  Mask m;
  m.shape = {n, n};
  m.keep.assign(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) m.keep[i * n + j] = 1;
  }
  return m;
}

Tensor Tape::variable(const Tensor& value) {
  Tensor out = value.detach();
  out.tape_ = this;
  out.node_ = nodes_.size();
  nodes_.push_back(Node{{}, value.size(), nullptr});
  grads_.emplace_back();
  return out;
}

Tensor Tape::record(Shape shape, std::vector<double> values, std::span<const Tensor> inputs,
                    Backward backward) {
  Tensor out(std::move(shape), std::move(values));
  Node node;
  node.size = out.size();
  node.backward = std::move(backward);
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.tracked() && in.tape() != this) {
      throw ContractError("operation mixes tensors from different tapes");
    }
    node.inputs.push_back(in.tracked() ? in.node() : kUntracked);
  }
  out.tape_ = this;
  out.node_ = nodes_.size();
  nodes_.push_back(std::move(node));
  grads_.emplace_back();
  return out;
}

void Tape::backward(const Tensor& root) {
  if (root.tape() != this) throw ContractError("backward root was not recorded on this tape");
  if (root.size() != 1) {
    throw ContractError("backward root must be scalar, got shape " + shape_string(root.shape()));
  }
  for (auto& g : grads_) g.clear();
  grads_[root.node()].assign(1, 1.0);

  std::vector<std::vector<double>*> grad_in;
  for (std::size_t id = root.node() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (grads_[id].empty() || !node.backward) continue;
    grad_in.assign(node.inputs.size(), nullptr);
    bool any = false;
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const auto in = node.inputs[i];
      if (in == kUntracked) continue;
      auto& buf = grads_[in];
      if (buf.empty()) buf.assign(nodes_[in].size, 0.0);
      grad_in[i] = &buf;
      any = true;
    }
    if (any) node.backward(grads_[id], grad_in);
    // Interior gradients are no longer needed once propagated.
    grads_[id].clear();
    grads_[id].shrink_to_fit();
  }
}

std::vector<double> Tape::gradient(const Tensor& tensor) const {
  if (tensor.tape() != this) throw ContractError("gradient requested for an untracked tensor");
  const auto& g = grads_[tensor.node()];
  if (g.empty()) return std::vector<double>(tensor.size(), 0.0);
  return g;
}

void Tape::clear() {
  nodes_.clear();
  grads_.clear();
}

}  // namespace fimpp
