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

#ifndef DPFL_SRC_MODEL_TAPE_H_
#define DPFL_SRC_MODEL_TAPE_H_

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "dpfl/model/lm.h"
#include "dpfl/model/tensor.h"

// Reverse-mode differentiation over dense matrices. Internal to the model
// library; the public surface is forward/backward in lm.h.
namespace dpfl::model::detail {

struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
  const double* row(std::size_t r) const { return v.data() + r * cols; }
  double* row(std::size_t r) { return v.data() + r * cols; }
};

using Var = std::size_t;

class Tape {
 public:
  Var constant(Mat m);
  // Leaf whose gradient is collected; 1-D tensors are viewed as one row.
  Var parameter(const Tensor& t);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var add_row(Var a, Var row);
  Var mul(Var a, Var b);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var slice_cols(Var a, std::size_t begin, std::size_t end);
  Var gather_rows(Var table, std::vector<int> ids);
  // steps[t] is (batch x d); output row b * steps.size() + t holds steps[t] row b.
  Var stack_steps(const std::vector<Var>& steps);
  // Rows laid out as b * len + t; position t attends to positions <= t of the
  // same sequence.
  Var causal_attention(Var q, Var k, Var v, std::size_t batch, std::size_t len);

  // Sum over rows of weight_r * (-log softmax(logits_r)[target_r]).
  Var cross_entropy(Var logits, std::vector<int> targets, std::vector<double> weights);
  // Sum over rows of weight_r * (-sum_i p_T(i) log softmax(logits_r / t)[i]),
  // p_T = softmax of the stored teacher logits / t over the stored ids.
  Var distill_cross_entropy(Var logits, std::vector<const TopK*> teacher,
                            std::vector<double> weights, double temperature);
  Var scaled_sum(std::vector<std::pair<double, Var>> terms);

  const Mat& value(Var v) const { return nodes_[v].value; }
  const Mat& grad(Var v) const { return nodes_[v].grad; }
  void backward(Var root);

 private:
  using BackFn = std::function<void(Tape&, Var)>;
  struct Node {
    Mat value;
    Mat grad;
    BackFn back;
    bool needs_grad = false;
  };

  Var push(Mat value, bool needs_grad, BackFn back);
  bool needs(Var v) const { return nodes_[v].needs_grad; }
  Mat& g(Var v);

  std::vector<Node> nodes_;
};

}  // namespace dpfl::model::detail

#endif  // DPFL_SRC_MODEL_TAPE_H_
