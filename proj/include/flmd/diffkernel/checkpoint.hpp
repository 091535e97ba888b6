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

#ifndef FLMD_DIFFKERNEL_CHECKPOINT_HPP
#define FLMD_DIFFKERNEL_CHECKPOINT_HPP

#include <filesystem>
#include <optional>

#include <json.hpp>

#include "flmd/diffkernel/adam.hpp"
#include "flmd/diffkernel/tensor.hpp"

namespace flmd::dk {

// {"version": 1, "tensors": {name: {"shape": [...], "data": [...]}},
//  "opt": {...}, "meta": {...}}. Doubles are written in shortest
// round-trip form, so load(save(x)) == x bit for bit.
struct Checkpoint {
  ParamStore params;
  std::optional<OptState> opt;
  nlohmann::json meta = nlohmann::json::object();
};

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace flmd::dk

#endif  // FLMD_DIFFKERNEL_CHECKPOINT_HPP
