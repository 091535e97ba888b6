// Copyright 2026 The FLMD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FLMD_DIFFKERNEL_ADAM_HPP
#define FLMD_DIFFKERNEL_ADAM_HPP

#include <cstdint>
#include <map>
#include <string>

#include "flmd/diffkernel/tensor.hpp"

namespace flmd::dk {

struct AdamHyper {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct OptState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;

  bool operator==(const OptState& o) const {
    return step == o.step && m == o.m && v == o.v;
  }
};

// One Adam update with bias correction. Decoupled weight decay runs first:
// theta <- theta * (1 - lr * wd). Throws StateError if no backward pass has
// filled the gradients since the last zero_grad.
void adam_step(ParamStore& params, OptState& opt);

}  // namespace flmd::dk

#endif  // FLMD_DIFFKERNEL_ADAM_HPP
