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

#ifndef FLMD_DIFFKERNEL_TAPE_HPP
#define FLMD_DIFFKERNEL_TAPE_HPP

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "flmd/diffkernel/tensor.hpp"

namespace flmd::dk {

class Tape;

// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

// Append-only record of one forward computation. Nodes are created in
// topological order, so the graph is acyclic by construction and backward
// is a single reverse sweep.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf bound to a stored parameter. The tensor is referenced, not copied,
  // so the store must outlive the tape and stay unmodified until backward.
  Var param(ParamStore& store, const std::string& name);

  // Records an op node. `backward` is skipped when no parent needs a gradient.
  Var record(Tensor value, std::vector<std::size_t> parents, Backward backward,
             const char* op_name);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  // Gradient buffer of a node, zero-initialized on first access.
  Tensor& grad_buffer(std::size_t id);

  // Reverse sweep from a 1 x 1 loss; parameter gradients are added into
  // their ParamStore.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    std::vector<std::size_t> parents;
    Backward backward;
    bool requires_grad = false;
    ParamStore* store = nullptr;
    std::string param_name;
  };
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_ids_;
  bool consumed_ = false;
};

}  // namespace flmd::dk

#endif  // FLMD_DIFFKERNEL_TAPE_HPP
