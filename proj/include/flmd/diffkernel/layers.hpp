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

#ifndef FLMD_DIFFKERNEL_LAYERS_HPP
#define FLMD_DIFFKERNEL_LAYERS_HPP

#include <string>

#include "flmd/diffkernel/ops.hpp"
#include "flmd/random.hpp"

namespace flmd::dk {

// Glorot-uniform weight `<prefix>.W` [in x out] and zero bias `<prefix>.b`.
void init_affine(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                 Rng& rng);
Var affine(Tape& tape, ParamStore& store, const std::string& prefix, Var x);

// LSTM cell with stacked gate weights `<prefix>.W` [(in + hidden) x 4 hidden]
// in gate order input, forget, output, candidate. Forget bias starts at 1.
void init_lstm(ParamStore& store, const std::string& prefix, std::size_t in,
               std::size_t hidden, Rng& rng);

struct LstmState {
  Var h;
  Var c;
};

// c' = sig(f) c + sig(i) tanh(g);  h' = sig(o) tanh(c')
LstmState lstm_cell(Var x, Var h, Var c, Var w, Var b);
LstmState lstm_cell(Tape& tape, ParamStore& store, const std::string& prefix, Var x, Var h,
                    Var c);

// Query/key/value/output projections `<prefix>.{q,k,v,o}.{W,b}`.
void init_attention(ParamStore& store, const std::string& prefix, std::size_t d_model,
                    Rng& rng);

struct AttentionVars {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
  static AttentionVars bind(Tape& tape, ParamStore& store, const std::string& prefix);
};

// Multi-head self-attention within consecutive groups of `group` tokens;
// a single sequence is group = tokens.rows().
Var multi_head_attention(Var tokens, const AttentionVars& p, std::size_t heads,
                         std::size_t group);

}  // namespace flmd::dk

#endif  // FLMD_DIFFKERNEL_LAYERS_HPP
