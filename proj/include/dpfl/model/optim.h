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

#ifndef DPFL_MODEL_OPTIM_H_
#define DPFL_MODEL_OPTIM_H_

#include <cstdint>

#include "dpfl/model/tensor.h"

namespace dpfl::model {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  TensorMap m;
  TensorMap v;
};

// Moments are allocated on the first call.
void adam_step(TensorMap& params, const TensorMap& grads, AdamState& state, double lr);
void sgd_step(TensorMap& params, const TensorMap& grads, double lr);

}  // namespace dpfl::model

#endif  // DPFL_MODEL_OPTIM_H_
