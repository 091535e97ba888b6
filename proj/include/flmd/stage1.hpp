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

#ifndef FLMD_STAGE1_HPP
#define FLMD_STAGE1_HPP

// Variational recurrent latent-factor model: learns a per-encounter latent
// z^t and recurrent state h^t by reconstructing the next encounter.
//
//   [mu; logvar] = phi(h^{t-1}, x^{t-1}, d),  sigma = exp(logvar / 2)
//   z^t          = mu + sigma * eps
//   xhat_j       = chi_j(z^t, d)             one small MLP per feature
//   (h^t, c^t)   = LSTM([z^t; x^t], (h^{t-1}, c^{t-1}))
//
// with trainable x^0 and h^0 feeding the first step.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "flmd/diffkernel/adam.hpp"
#include "flmd/diffkernel/layers.hpp"
#include "flmd/ehr_data.hpp"
#include "flmd/synth_scm.hpp"

namespace flmd::stage1 {

enum class Likelihood { kGaussian, kBernoulli };

struct Stage1Config {
  std::size_t z_dim = 256;
  std::size_t h_dim = 128;
  std::size_t phi_hidden = 512;
  std::size_t chi_hidden = 16;
  std::size_t L = 1;  // Monte-Carlo samples of z per step
  double lr = 1e-5;
  double weight_decay = 1e-7;  // lambda_1, the L2 weight in the loss
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  // Empty means every feature is gaussian.
  std::vector<Likelihood> feature_likelihoods;
  // Train on train + val + test features (unsupervised); false restricts
  // Stage 1 to the training split.
  bool whole_dataset = true;
  // Record reconstruction MSE after every epoch.
  bool track_mse = true;

  void validate() const;
  nlohmann::json to_json() const;
  static Stage1Config from_json(const nlohmann::json& j);
};

struct Stage1Model {
  Stage1Config cfg;
  std::size_t F = 0;
  std::size_t d_dim = 0;
  dk::ParamStore params;

  std::vector<bool> bernoulli_mask() const;
};

// Fresh parameters. `zero` leaves every weight at zero (x^0, h^0 included).
Stage1Model init_stage1(const Stage1Config& cfg, std::size_t F, std::size_t d_dim,
                        bool zero = false);

struct Posterior {
  dk::Var mu;
  dk::Var sigma;
};

// phi([h_prev; x_prev; d]) -> (mu, sigma), rows are patients.
Posterior encode(dk::Tape& tape, Stage1Model& m, dk::Var h_prev, dk::Var x_prev, dk::Var d);
// Draws eps ~ N(0, I) from rng.
dk::Var sample_latent(dk::Tape& tape, Posterior q, Rng& rng);
// Raw decoder outputs [rows x F]; bernoulli features are logits here.
dk::Var decode_raw(dk::Tape& tape, Stage1Model& m, dk::Var z, dk::Var d);
// Decoder outputs with bernoulli features passed through the sigmoid.
dk::Tensor decode(Stage1Model& m, const dk::Tensor& z, const dk::Tensor& d);
dk::LstmState recur(dk::Tape& tape, Stage1Model& m, dk::Var z, dk::Var x, dk::Var h_prev,
                    dk::Var c_prev);

// Breakdown of the minimized objective for a set of patients.
struct LossTerms {
  dk::Var total;
  double kl = 0.0;     // mean per-patient averaged KL
  double nll = 0.0;    // mean per-patient averaged reconstruction NLL
  double l2 = 0.0;     // lambda_1 * ||Theta_1||^2
  std::size_t patients = 0;  // patients with T >= 2 that contributed
};

// Mean over patients with T >= 2 of
//   sum_{t=0}^{T-2} [KL(q(z^{t+1}) || N(0,I)) - (1/L) sum_l ln p(x^{t+1} | z^{t+1,l}, d)] / (T-1)
// plus lambda_1 ||Theta_1||^2. Term t predicts encounter t+1 (1-based) from
// (h^t, x^t); t = 0 uses the trainable x^0, h^0.
LossTerms stage1_batch_loss(dk::Tape& tape, Stage1Model& m,
                            std::span<const data::PatientRecord* const> batch, Rng& rng);
// Single-patient objective; throws DataError when T < 2.
dk::Var stage1_loss(dk::Tape& tape, Stage1Model& m, const data::PatientRecord& p, Rng& rng);

struct EpochStats {
  double loss = 0.0;
  double kl = 0.0;
  double nll = 0.0;
  double mse = 0.0;  // reconstruction MSE at epoch end (0 when not tracked)
  std::size_t steps = 0;
};

struct TrainingHistory {
  std::vector<EpochStats> epochs;
  double initial_mse = 0.0;
  std::size_t total_steps = 0;
};

// Reconstruction MSE over all targets with z set to the posterior mean.
double reconstruction_mse(Stage1Model& m, const data::Dataset& ds);

struct Stage1Result {
  Stage1Model model;
  TrainingHistory history;
};

Stage1Result train_stage1(const data::Dataset& ds, const Stage1Config& cfg);

struct LatentEntry {
  std::string id;
  std::size_t t = 0;  // 1-based encounter index
  std::vector<double> z;
  std::vector<double> h;

  bool operator==(const LatentEntry&) const = default;
};

class LatentTrace {
 public:
  LatentTrace() = default;
  LatentTrace(std::size_t z_dim, std::size_t h_dim) : z_dim_(z_dim), h_dim_(h_dim) {}

  void add(LatentEntry e);
  // Throws AlignmentError when (id, t) is missing.
  const LatentEntry& at(const std::string& id, std::size_t t) const;
  bool contains(const std::string& id, std::size_t t) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t z_dim() const { return z_dim_; }
  std::size_t h_dim() const { return h_dim_; }
  const std::vector<LatentEntry>& entries() const { return entries_; }

  bool operator==(const LatentTrace& o) const { return entries_ == o.entries_; }

 private:
  std::size_t z_dim_ = 0, h_dim_ = 0;
  std::vector<LatentEntry> entries_;
  std::unordered_map<std::string, std::vector<std::size_t>> index_;
};

// Deterministic pass (z^t = mu^t) covering every (patient, t), t = 1..T.
LatentTrace extract_latents(const data::Dataset& ds, Stage1Model& m);

void save_latents(const LatentTrace& trace, const std::filesystem::path& path);
LatentTrace load_latents(const std::filesystem::path& path);

// Linear probe from per-patient mean z to the hidden f_depe bit: logistic
// regression trained with Adam on a 70/30 patient split; returns held-out AUC.
double probe_confounder(const LatentTrace& trace, const scm::GroundTruth& gt,
                        std::uint64_t seed);

}  // namespace flmd::stage1

#endif  // FLMD_STAGE1_HPP
