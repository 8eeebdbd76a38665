// Copyright 2026 The dpfl-lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPFL_MODEL_TENSOR_H_
#define DPFL_MODEL_TENSOR_H_

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace dpfl::model {

// Dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : Tensor(std::vector<std::size_t>{rows, cols}, fill) {}

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }

  bool all_finite() const;
  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Named tensors with a fixed, ordered key set. Parameters, gradients, model
// deltas and noise all share this structure.
class TensorMap {
 public:
  using Map = std::map<std::string, Tensor>;

  TensorMap() = default;
  explicit TensorMap(Map tensors) : tensors_(std::move(tensors)) {}

  static TensorMap zeros_like(const TensorMap& other);

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.count(name) > 0; }
  void insert(std::string name, Tensor t) { tensors_.insert_or_assign(std::move(name), std::move(t)); }

  Map::iterator begin() { return tensors_.begin(); }
  Map::iterator end() { return tensors_.end(); }
  Map::const_iterator begin() const { return tensors_.begin(); }
  Map::const_iterator end() const { return tensors_.end(); }
  std::size_t count() const { return tensors_.size(); }

  std::size_t num_elements() const;
  bool congruent(const TensorMap& other) const;
  bool all_finite() const;
  // Name of the first tensor with a non-finite entry, or empty.
  std::string first_non_finite() const;

  // this += scale * other
  void add_scaled(const TensorMap& other, double scale);
  void scale(double factor);
  void set_zero();
  double squared_norm() const;
  double norm() const;

  friend bool operator==(const TensorMap&, const TensorMap&) = default;

 private:
  Map tensors_;
};

TensorMap operator-(const TensorMap& a, const TensorMap& b);
TensorMap operator+(const TensorMap& a, const TensorMap& b);

using GradSet = TensorMap;

}  // namespace dpfl::model

#endif  // DPFL_MODEL_TENSOR_H_
