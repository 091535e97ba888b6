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

#ifndef FLMD_SYNTH_SCM_HPP
#define FLMD_SYNTH_SCM_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "flmd/ehr_data.hpp"

namespace flmd::scm {

inline constexpr const char* kFinancialDependency = "f_depe";

// Structural causal model for synthetic longitudinal records.
//
// Per patient: sensitive bits d ~ Bernoulli(1/2), hidden confounder
// f_depe ~ Bernoulli(1/2), encounter count ~ U{min, max}. Per encounter t,
// starting from h = 0:
//
//   z^t = A h^{t-1} + N(0, I)
//   x^t = W z^t + confounder_strength * v (2f - 1)
//             + demographic_effect * U (2d - 1) + feature_noise * N(0, I)
//   y^t ~ Bernoulli(sigmoid(w_z.z^t + demographic_effect * w_d.(2d - 1)
//                           + confounder_strength * w_f (2f - 1) + w_x.x^t / F))
//   h^t = tanh(B [h^{t-1}; z^t])
//
// All mixing weights are drawn once from `seed`; patient i draws from its
// own stream derive_seed(seed, i), so output does not depend on visit order.
struct ScmConfig {
  std::size_t num_patients = 1000;
  std::size_t F = 16;
  std::size_t z_true_dim = 4;
  std::size_t h_true_dim = 4;
  std::size_t encounter_min = 2;
  std::size_t encounter_max = 6;
  double confounder_strength = 1.0;
  double demographic_effect = 0.5;
  double feature_noise = 0.5;
  // Bernoulli rate of the first sensitive bit; the rest are fair coins.
  double group_rate = 0.5;
  std::vector<std::string> sensitive_names = {"race", "gender", "insurance"};
  bool observe_f_depe = true;
  std::uint64_t seed = 0;

  // Throws ConfigError on invalid values.
  void validate() const;
};

struct SynthesisParams {
  std::vector<double> m1, m2, b1, b2;  // length F
  double m3 = 1.0, m4 = 1.0, b3 = 0.2, b4 = -0.2;
  std::uint64_t label_seed = 0;

  // Defaults: m1 = 1.5, m2 = 0.5, b1 = +0.5, b2 = -0.5 on every feature.
  static SynthesisParams defaults(std::size_t F);
  static SynthesisParams identity(std::size_t F);
  void validate(std::size_t F) const;
};

struct EncounterTruth {
  std::vector<double> z_true;
  std::vector<double> h_true;
  double y_prob = 0.5;  // Bernoulli rate the label was drawn from

  bool operator==(const EncounterTruth&) const = default;
};

struct PatientTruth {
  std::string id;
  int f_depe = 0;
  std::vector<EncounterTruth> encounters;

  bool operator==(const PatientTruth&) const = default;
};

struct GroundTruth {
  std::vector<PatientTruth> patients;

  bool operator==(const GroundTruth&) const = default;
};

std::pair<data::Dataset, GroundTruth> generate_scm_dataset(const ScmConfig& cfg);

// Throws AlignmentError unless gt matches ds patient-by-patient and
// encounter-by-encounter.
void check_alignment(const data::Dataset& ds, const GroundTruth& gt);

// Amplifies the hidden confounder: features go through x * m + b and the
// label rate through clamp(m * p + b, 0, 1), with (m1, b1, m3, b3) when
// f_depe = 1 and (m2, b2, m4, b4) otherwise. Labels are redrawn from the
// clamped rate with a stream keyed by the patient id.
data::Dataset apply_semisynthetic(const data::Dataset& ds, const GroundTruth& gt,
                                  const SynthesisParams& params);

// Drops an observed extra demographic field from schema and records.
data::Dataset hide_confounder(const data::Dataset& ds, const std::string& field);

// Resamples the listed sensitive bits of every patient as fair coins.
data::Dataset disturb_demographics(const data::Dataset& ds,
                                   const std::vector<std::string>& fields, std::uint64_t seed);

// Index-paired mixture: ceil(p * N) patients keep their original record,
// the rest take the disturbed one.
data::Dataset mix_training(const data::Dataset& original, const data::Dataset& disturbed,
                           double proportion_original, std::uint64_t seed);

// Resamples so that (#attr=1) : (#attr=0) = ratio_a : ratio_b with
// target_size patients in total; the attr=1 count is rounded up. Duplicated
// patients get a "#r<k>" id suffix so ids stay unique.
data::Dataset rebalance_by_attribute(const data::Dataset& ds, const std::string& attr,
                                     double ratio_a, double ratio_b, std::size_t target_size,
                                     std::uint64_t seed);

void save_ground_truth(const GroundTruth& gt, const std::filesystem::path& path);
GroundTruth load_ground_truth(const std::filesystem::path& path);

}  // namespace flmd::scm

#endif  // FLMD_SYNTH_SCM_HPP
