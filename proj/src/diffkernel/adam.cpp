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

#include "flmd/diffkernel/adam.hpp"

#include <cmath>

#include "flmd/error.hpp"

namespace flmd::dk {

void adam_step(ParamStore& params, OptState& opt) {
  if (!params.grads_ready()) throw StateError("adam_step called before backward");
  const AdamHyper& h = opt.hyper;
  ++opt.step;
  const double t = static_cast<double>(opt.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  const double decay = 1.0 - h.lr * h.weight_decay;

  for (const auto& name : params.names()) {
    Tensor& theta = params.value(name);
    const Tensor& g = params.grad(name);
    auto [mit, m_new] = opt.m.try_emplace(name, Tensor(theta.shape()));
    auto [vit, v_new] = opt.v.try_emplace(name, Tensor(theta.shape()));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      theta[i] *= decay;
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
      theta[i] -= h.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + h.eps);
    }
    if (!theta.all_finite()) throw NumericError("adam_step produced non-finite '" + name + "'");
  }
}

}  // namespace flmd::dk
