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

#ifndef FLMD_STAGE2_HPP
#define FLMD_STAGE2_HPP

// Attention classifier over three tokens per encounter: demographics d,
// Stage-1 latent z^t and features x^t. Each token is a projection plus a
// learned slot embedding; a stack of residual attention + feed-forward
// blocks runs over the three tokens, then mean-pool -> affine -> sigmoid.
//
// Training minimizes
//   mean BCE(p(d, z, x), y) + lambda * mean BCE(p(d_cf, z, x), y) + lambda2 ||Theta_2||^2
// where d_cf has the configured sensitive bits flipped.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flmd/diffkernel/adam.hpp"
#include "flmd/diffkernel/layers.hpp"
#include "flmd/ehr_data.hpp"
#include "flmd/metrics.hpp"
#include "flmd/stage1.hpp"

namespace flmd::stage2 {

enum class FlipMode { kAll, kRandomSubset };

struct Stage2Config {
  double lambda = 1.0;          // counterfactual weight
  double weight_decay = 1e-7;   // lambda_2
  double lr = 1e-5;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::vector<std::string> sensitive_fields = {"race", "gender", "insurance"};
  FlipMode flip_mode = FlipMode::kAll;

  void validate() const;
  nlohmann::json to_json() const;
  static Stage2Config from_json(const nlohmann::json& j);
};

struct Stage2Model {
  Stage2Config cfg;
  std::size_t d_dim = 0;
  std::size_t z_dim = 0;
  std::size_t F = 0;
  dk::ParamStore params;
};

// `zero` leaves every parameter at zero.
Stage2Model init_stage2(const Stage2Config& cfg, std::size_t d_dim, std::size_t z_dim,
                        std::size_t F, bool zero = false);

// Flips the named sensitive bits; throws SchemaError on an unknown name.
data::Demographics counterfactual_demographics(const data::Demographics& d,
                                               const std::vector<std::string>& fields,
                                               const data::Schema& schema);

// Rows are items. Returns [3B x d_model] tokens, item b at rows 3b..3b+2 in
// the order (d, z, x).
dk::Var build_tokens(dk::Tape& tape, Stage2Model& m, dk::Var d, dk::Var z, dk::Var x);
// Attention stack + pooled head on prepared tokens; returns probabilities [B x 1].
dk::Var forward_tokens(dk::Tape& tape, Stage2Model& m, dk::Var tokens);
dk::Var predict(dk::Tape& tape, Stage2Model& m, dk::Var d, dk::Var z, dk::Var x);
// Non-graph convenience, one item per row.
std::vector<double> predict(Stage2Model& m, const dk::Tensor& d, const dk::Tensor& z,
                            const dk::Tensor& x);

// One encounter with its latent attached.
struct Item {
  const data::PatientRecord* patient = nullptr;
  std::size_t t = 0;  // 1-based
  std::vector<double> z;
};

// Every encounter of ds in dataset order; AlignmentError when a latent is
// missing.
std::vector<Item> collect_items(const data::Dataset& ds, const stage1::LatentTrace& trace);

struct Batch {
  dk::Tensor d, d_cf, z, x, y;
};

Batch make_batch(const std::vector<const Item*>& items, const Stage2Config& cfg,
                 const data::Schema& schema, Rng* rng);

struct LossParts {
  dk::Var total;
  double factual = 0.0;
  double counterfactual = 0.0;
  double l2 = 0.0;
};

LossParts stage2_loss(dk::Tape& tape, Stage2Model& m, const Batch& batch);

struct Stage2Epoch {
  double loss = 0.0;
  double factual = 0.0;
  double counterfactual = 0.0;
  double val_auc = 0.0;  // NaN when validation AUC is undefined
  std::size_t steps = 0;
};

struct Stage2History {
  std::vector<Stage2Epoch> epochs;
  std::size_t best_epoch = 0;
};

struct Stage2Result {
  Stage2Model model;
  Stage2History history;
};

// Adam over every encounter of train; keeps the parameters from the epoch
// with the best validation AUC (the last epoch when validation AUC is
// undefined).
Stage2Result train_stage2(const data::Dataset& train, const data::Dataset& val,
                          const stage1::LatentTrace& trace, const Stage2Config& cfg);

std::vector<metrics::Prediction> predict_dataset(Stage2Model& m, const data::Dataset& ds,
                                                 const stage1::LatentTrace& trace,
                                                 bool counterfactual = false);

// Mean over encounters of |p(d) - p(d_cf)| with every configured bit flipped.
double cf_gap(Stage2Model& m, const data::Dataset& ds, const stage1::LatentTrace& trace);

// CSV `patient_id,t,prob,y,group_bits`; group bits are written as a 0/1 string.
void save_predictions_csv(const std::vector<metrics::Prediction>& preds,
                          const std::filesystem::path& path);

}  // namespace flmd::stage2

#endif  // FLMD_STAGE2_HPP
