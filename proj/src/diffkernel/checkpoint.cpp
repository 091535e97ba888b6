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

#include "flmd/diffkernel/checkpoint.hpp"

#include <fstream>

#include "flmd/error.hpp"

namespace flmd::dk {

using nlohmann::json;

namespace {

json tensors_to_json(const std::map<std::string, Tensor>& tensors) {
  json out = json::object();
  for (const auto& [name, t] : tensors) {
    out[name] = {{"shape", t.shape()}, {"data", t.storage()}};
  }
  return out;
}

std::map<std::string, Tensor> tensors_from_json(const json& j) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, t] : j.items()) {
    out.emplace(name, Tensor(t.at("shape").get<std::vector<std::size_t>>(),
                             t.at("data").get<std::vector<double>>()));
  }
  return out;
}

}  // namespace

json checkpoint_to_json(const Checkpoint& ckpt) {
  json j = {{"version", 1}, {"tensors", tensors_to_json(ckpt.params.values())}};
  if (ckpt.opt) {
    const auto& o = *ckpt.opt;
    j["opt"] = {{"step", o.step},
                {"lr", o.hyper.lr},
                {"beta1", o.hyper.beta1},
                {"beta2", o.hyper.beta2},
                {"eps", o.hyper.eps},
                {"weight_decay", o.hyper.weight_decay},
                {"m", tensors_to_json(o.m)},
                {"v", tensors_to_json(o.v)}};
  }
  j["meta"] = ckpt.meta;
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  Checkpoint c;
  try {
    if (j.at("version").get<int>() != 1) throw ParseError("unsupported checkpoint version");
    for (auto& [name, t] : tensors_from_json(j.at("tensors"))) c.params.add(name, std::move(t));
    if (j.contains("opt")) {
      const auto& o = j.at("opt");
      OptState s;
      s.step = o.at("step").get<std::uint64_t>();
      s.hyper.lr = o.at("lr").get<double>();
      s.hyper.beta1 = o.at("beta1").get<double>();
      s.hyper.beta2 = o.at("beta2").get<double>();
      s.hyper.eps = o.at("eps").get<double>();
      s.hyper.weight_decay = o.at("weight_decay").get<double>();
      s.m = tensors_from_json(o.at("m"));
      s.v = tensors_from_json(o.at("v"));
      c.opt = std::move(s);
    }
    if (j.contains("meta")) c.meta = j.at("meta");
  } catch (const json::exception& ex) {
    throw ParseError(std::string("malformed checkpoint: ") + ex.what());
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(ckpt).dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  try {
    return checkpoint_from_json(json::parse(in));
  } catch (const json::parse_error& ex) {
    throw ParseError(path.string() + ": " + ex.what());
  }
}

}  // namespace flmd::dk
