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

#ifndef FLMD_TESTS_FIXTURES_HPP
#define FLMD_TESTS_FIXTURES_HPP

#include "flmd/ehr_data.hpp"
#include "flmd/stage1.hpp"
#include "flmd/synth_scm.hpp"

namespace flmd::testkit {

// Normalized SCM cohort with a fixed encounter count.
inline data::Dataset scm_fixture(std::size_t patients, std::size_t encounters, std::size_t F,
                                 std::uint64_t seed = 2024) {
  scm::ScmConfig c;
  c.num_patients = patients;
  c.F = F;
  c.encounter_min = c.encounter_max = encounters;
  c.seed = seed;
  const auto ds = scm::generate_scm_dataset(c).first;
  return data::apply_normalizer(ds, data::fit_normalizer(ds));
}

// The 5-patient, 3-encounter, F = 8 overfitting fixture.
inline data::Dataset overfit_fixture() { return scm_fixture(5, 3, 8); }

inline stage1::Stage1Config tiny_stage1(std::size_t z = 3, std::size_t h = 4) {
  stage1::Stage1Config c;
  c.z_dim = z;
  c.h_dim = h;
  c.phi_hidden = 6;
  c.chi_hidden = 3;
  c.lr = 1e-2;
  c.epochs = 2;
  c.batch_size = 4;
  return c;
}

}  // namespace flmd::testkit

#endif  // FLMD_TESTS_FIXTURES_HPP
