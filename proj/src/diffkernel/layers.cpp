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

#include "flmd/diffkernel/layers.hpp"

#include <cmath>

#include "flmd/error.hpp"

namespace flmd::dk {

namespace {

Tensor glorot(std::size_t in, std::size_t out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor w = Tensor::zeros(in, out);
  for (auto& v : w.storage()) v = u(rng);
  return w;
}

}  // namespace

void init_affine(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                 Rng& rng) {
  store.add(prefix + ".W", glorot(in, out, rng));
  store.add(prefix + ".b", Tensor::zeros(1, out));
}

Var affine(Tape& tape, ParamStore& store, const std::string& prefix, Var x) {
  return affine(x, tape.param(store, prefix + ".W"), tape.param(store, prefix + ".b"));
}

void init_lstm(ParamStore& store, const std::string& prefix, std::size_t in,
               std::size_t hidden, Rng& rng) {
  store.add(prefix + ".W", glorot(in + hidden, 4 * hidden, rng));
  Tensor b = Tensor::zeros(1, 4 * hidden);
  for (std::size_t k = hidden; k < 2 * hidden; ++k) b[k] = 1.0;
  store.add(prefix + ".b", std::move(b));
}

LstmState lstm_cell(Var x, Var h, Var c, Var w, Var b) {
  const std::size_t H = h.cols();
  if (c.cols() != H || w.cols() != 4 * H || w.rows() != x.cols() + H) {
    throw ShapeError("lstm_cell: weight " + w.value().shape_string() + " does not fit input " +
                     x.value().shape_string() + " and state " + h.value().shape_string());
  }
  const Var gates = affine(concat_cols({x, h}), w, b);
  const Var i = sigmoid(slice_cols(gates, 0, H));
  const Var f = sigmoid(slice_cols(gates, H, 2 * H));
  const Var o = sigmoid(slice_cols(gates, 2 * H, 3 * H));
  const Var g = tanh(slice_cols(gates, 3 * H, 4 * H));
  const Var c_next = add(mul(f, c), mul(i, g));
  const Var h_next = mul(o, tanh(c_next));
  return {h_next, c_next};
}

LstmState lstm_cell(Tape& tape, ParamStore& store, const std::string& prefix, Var x, Var h,
                    Var c) {
  return lstm_cell(x, h, c, tape.param(store, prefix + ".W"), tape.param(store, prefix + ".b"));
}

void init_attention(ParamStore& store, const std::string& prefix, std::size_t d_model,
                    Rng& rng) {
  for (const char* p : {".q", ".k", ".v", ".o"}) init_affine(store, prefix + p, d_model, d_model, rng);
}

AttentionVars AttentionVars::bind(Tape& tape, ParamStore& store, const std::string& prefix) {
  const auto P = [&](const char* s) { return tape.param(store, prefix + s); };
  return {P(".q.W"), P(".q.b"), P(".k.W"), P(".k.b"), P(".v.W"), P(".v.b"), P(".o.W"), P(".o.b")};
}

Var multi_head_attention(Var tokens, const AttentionVars& p, std::size_t heads,
                         std::size_t group) {
  const Var q = affine(tokens, p.wq, p.bq);
  const Var k = affine(tokens, p.wk, p.bk);
  const Var v = affine(tokens, p.wv, p.bv);
  return affine(grouped_attention(q, k, v, heads, group), p.wo, p.bo);
}

}  // namespace flmd::dk
