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

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fimpp {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tape;

/// Immutable dense tensor of 64-bit reals in row-major order. A tensor
/// created by an operation on a tracked input carries a handle into the
/// tape that recorded it.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_->size(); }
  /// Leading extent for rank-2 tensors, 1 otherwise.
  std::size_t rows() const;
  /// Trailing extent (1 for scalars).
  std::size_t cols() const;

  std::span<const double> values() const { return *values_; }
  const std::shared_ptr<const std::vector<double>>& shared_values() const { return values_; }
  double operator[](std::size_t i) const { return (*values_)[i]; }
  double at(std::size_t row, std::size_t col) const { return (*values_)[row * cols() + col]; }
  double item() const;

  Tape* tape() const { return tape_; }
  std::size_t node() const { return node_; }
  bool tracked() const { return tape_ != nullptr; }

  /// Same values without the tape handle.
  Tensor detach() const;

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> values_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

/// Boolean mask; true marks an entry that participates.
struct Mask {
  Shape shape;
  std::vector<unsigned char> keep;

  static Mask all(Shape shape);
  static Mask causal(std::size_t n);
  bool operator()(std::size_t row, std::size_t col) const { return keep[row * shape.back() + col] != 0; }
};

/// Reverse-mode gradient tape. Nodes are appended in evaluation order, so the
/// node list is already topologically sorted and backward() walks it once in
/// reverse. A tape is single-threaded; use one tape per thread.
class Tape {
 public:
  /// grad_out is dL/d(output); grad_in[i] points at the accumulator of input
  /// i, or is null when that input does not need a gradient.
  using Backward = std::function<void(std::span<const double> grad_out,
                                      std::span<std::vector<double>* const> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a leaf and returns a tracked copy of it.
  Tensor variable(const Tensor& value);

  /// Records an operation output. Untracked inputs are allowed and receive a
  /// null accumulator during backward.
  Tensor record(Shape shape, std::vector<double> values, std::span<const Tensor> inputs,
                Backward backward);

  /// Accumulates d(root)/d(node) for every node reachable from root.
  void backward(const Tensor& root);

  /// Gradient accumulated for a tracked tensor; zeros if it was not reached.
  std::vector<double> gradient(const Tensor& tensor) const;

  std::size_t node_count() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    std::vector<std::size_t> inputs;  // node ids, or kUntracked
    std::size_t size = 0;
    Backward backward;
  };
  static constexpr std::size_t kUntracked = static_cast<std::size_t>(-1);

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
};

}  // namespace fimpp
