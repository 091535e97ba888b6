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

#include "flmd/diffkernel/tape.hpp"

#include <cstdint>

#include "flmd/error.hpp"

namespace flmd::dk {

const Tensor& Var::value() const {
  if (tape == nullptr) throw GraphError("detached variable");
  return tape->value(id);
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite constant");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::param(ParamStore& store, const std::string& name) {
  const std::string key = std::to_string(reinterpret_cast<std::uintptr_t>(&store)) + "/" + name;
  if (auto it = param_ids_.find(key); it != param_ids_.end()) return {this, it->second};
  Node n;
  n.external = &store.value(name);
  n.requires_grad = true;
  n.store = &store;
  n.param_name = name;
  nodes_.push_back(std::move(n));
  param_ids_[key] = nodes_.size() - 1;
  return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, Backward backward,
                 const char* op_name) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op_name);
  }
  Node n;
  n.value = std::move(value);
  for (auto p : parents) {
    if (p >= nodes_.size()) throw GraphError(std::string(op_name) + ": parent not on this tape");
    n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  }
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external ? *n.external : n.value;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(value(id).shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw GraphError("loss variable belongs to another tape");
  if (consumed_) throw GraphError("backward already run on this tape");
  if (value(loss.id).size() != 1) {
    throw GraphError("backward needs a scalar loss, got " + value(loss.id).shape_string());
  }
  consumed_ = true;
  grad_buffer(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.store != nullptr) {
      Tensor& g = n.store->grad(n.param_name);
      auto dst = g.data();
      auto src = n.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      n.store->mark_grads_ready();
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
  // Parameters that the loss never reached still count as processed.
  for (auto& n : nodes_) {
    if (n.store != nullptr) n.store->mark_grads_ready();
  }
}

}  // namespace flmd::dk
