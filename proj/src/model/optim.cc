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

#include "dpfl/model/optim.h"

#include <cmath>

#include "dpfl/common/error.h"

namespace dpfl::model {

void adam_step(TensorMap& params, const TensorMap& grads, AdamState& state, double lr) {
  if (!params.congruent(grads)) throw ValidationError("grads", "not congruent with params");
  if (state.step == 0 || !state.m.congruent(params)) {
    state.m = TensorMap::zeros_like(params);
    state.v = TensorMap::zeros_like(params);
    state.step = 0;
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    Tensor& m = state.m.at(name);
    Tensor& v = state.v.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
  }
}

void sgd_step(TensorMap& params, const TensorMap& grads, double lr) {
  if (!params.congruent(grads)) throw ValidationError("grads", "not congruent with params");
  params.add_scaled(grads, -lr);
}

}  // namespace dpfl::model
