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

#include "dpfl/model/tensor.h"

#include <cmath>
#include <functional>
#include <numeric>

#include "dpfl/common/error.h"

namespace dpfl::model {

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  std::size_t n = 1;
  for (auto d : shape_) {
    if (d == 0) throw ValidationError("shape", "dimensions must be positive");
    n *= d;
  }
  data_.assign(n, fill);
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

TensorMap TensorMap::zeros_like(const TensorMap& other) {
  TensorMap out;
  for (const auto& [name, t] : other) out.insert(name, Tensor(t.shape(), 0.0));
  return out;
}

Tensor& TensorMap::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ValidationError("tensor", "no tensor named '" + name + "'");
  return it->second;
}

const Tensor& TensorMap::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ValidationError("tensor", "no tensor named '" + name + "'");
  return it->second;
}

std::size_t TensorMap::num_elements() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.size();
  return n;
}

bool TensorMap::congruent(const TensorMap& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  auto a = tensors_.begin();
  auto b = other.tensors_.begin();
  for (; a != tensors_.end(); ++a, ++b) {
    if (a->first != b->first || a->second.shape() != b->second.shape()) return false;
  }
  return true;
}

bool TensorMap::all_finite() const { return first_non_finite().empty(); }

std::string TensorMap::first_non_finite() const {
  for (const auto& [name, t] : tensors_) {
    if (!t.all_finite()) return name;
  }
  return {};
}

void TensorMap::add_scaled(const TensorMap& other, double scale) {
  if (!congruent(other)) throw ValidationError("tensor_map", "shape mismatch in add_scaled");
  auto b = other.tensors_.begin();
  for (auto a = tensors_.begin(); a != tensors_.end(); ++a, ++b) {
    auto& x = a->second.values();
    const auto& y = b->second.values();
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += scale * y[i];
  }
}

void TensorMap::scale(double factor) {
  for (auto& [name, t] : tensors_) {
    for (double& v : t.values()) v *= factor;
  }
}

void TensorMap::set_zero() {
  for (auto& [name, t] : tensors_) std::fill(t.values().begin(), t.values().end(), 0.0);
}

double TensorMap::squared_norm() const {
  double s = 0.0;
  for (const auto& [name, t] : tensors_) {
    for (double v : t.values()) s += v * v;
  }
  return s;
}

double TensorMap::norm() const { return std::sqrt(squared_norm()); }

TensorMap operator-(const TensorMap& a, const TensorMap& b) {
  TensorMap out = a;
  out.add_scaled(b, -1.0);
  return out;
}

TensorMap operator+(const TensorMap& a, const TensorMap& b) {
  TensorMap out = a;
  out.add_scaled(b, 1.0);
  return out;
}

}  // namespace dpfl::model
