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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>
#include <tuple>

#include "flmd/error.hpp"
#include "flmd/synth_scm.hpp"

using namespace flmd;
using namespace flmd::scm;

namespace {

double abs_corr(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return std::abs(sab / std::sqrt(saa * sbb));
}

ScmConfig small(std::size_t n) {
  ScmConfig c;
  c.num_patients = n;
  c.F = 6;
  c.seed = 42;
  return c;
}

}  // namespace

TEST(Generate, DeterministicAndAligned) {
  const auto a = generate_scm_dataset(small(50));
  const auto b = generate_scm_dataset(small(50));
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_NO_THROW(data::validate(a.first));
  EXPECT_NO_THROW(check_alignment(a.first, a.second));
  auto other = small(50);
  other.seed = 43;
  EXPECT_NE(generate_scm_dataset(other).first, a.first);
}

TEST(Generate, PrefixStableAcrossPatientCounts) {
  // Patient i draws from its own stream, so a larger cohort extends a smaller one.
  const auto a = generate_scm_dataset(small(10));
  const auto b = generate_scm_dataset(small(20));
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(a.first.patients[i], b.first.patients[i]);
}

TEST(Generate, EncounterCountRange) {
  auto c = small(40);
  c.encounter_min = c.encounter_max = 3;
  for (const auto& p : generate_scm_dataset(c).first.patients) EXPECT_EQ(p.encounters.size(), 3u);
  c.encounter_min = 2;
  c.encounter_max = 5;
  for (const auto& p : generate_scm_dataset(c).first.patients) {
    EXPECT_GE(p.encounters.size(), 2u);
    EXPECT_LE(p.encounters.size(), 5u);
  }
}

TEST(Generate, ObservedConfounderIsExtraField) {
  const auto [ds, gt] = generate_scm_dataset(small(30));
  ASSERT_EQ(ds.schema.extra_names, std::vector<std::string>{kFinancialDependency});
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(ds.patients[i].d.extra.at(0), static_cast<double>(gt.patients[i].f_depe));
  }
  auto c = small(5);
  c.observe_f_depe = false;
  EXPECT_TRUE(generate_scm_dataset(c).first.schema.extra_names.empty());
}

TEST(Generate, NoConfoundingMeansNoCorrelation) {
  auto c = small(2000);
  c.F = 8;
  c.confounder_strength = 0.0;
  c.demographic_effect = 0.0;
  const auto [ds, gt] = generate_scm_dataset(c);
  for (std::size_t j = 0; j < c.F; ++j) {
    std::vector<double> xs, fs;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      for (const auto& e : ds.patients[i].encounters) {
        xs.push_back(e.x[j]);
        fs.push_back(gt.patients[i].f_depe);
      }
    }
    EXPECT_LT(abs_corr(xs, fs), 0.1) << "feature " << j;
  }
}

TEST(Generate, ConfoundingShowsUpInFeatures) {
  auto c = small(1000);
  c.confounder_strength = 2.0;
  const auto [ds, gt] = generate_scm_dataset(c);
  double best = 0.0;
  for (std::size_t j = 0; j < c.F; ++j) {
    std::vector<double> xs, fs;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      for (const auto& e : ds.patients[i].encounters) {
        xs.push_back(e.x[j]);
        fs.push_back(gt.patients[i].f_depe);
      }
    }
    best = std::max(best, abs_corr(xs, fs));
  }
  EXPECT_GT(best, 0.3);
}

TEST(Generate, InvalidConfig) {
  auto c = small(10);
  c.encounter_min = 4;
  c.encounter_max = 3;
  EXPECT_THROW(generate_scm_dataset(c), ConfigError);
  c = small(0);
  EXPECT_THROW(generate_scm_dataset(c), ConfigError);
  c = small(10);
  c.group_rate = 1.0;
  EXPECT_THROW(generate_scm_dataset(c), ConfigError);
}

TEST(Semisynthetic, IdentityKeepsFeatures) {
  const auto [ds, gt] = generate_scm_dataset(small(40));
  const auto out = apply_semisynthetic(ds, gt, SynthesisParams::identity(6));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t t = 0; t < ds.patients[i].encounters.size(); ++t) {
      EXPECT_EQ(out.patients[i].encounters[t].x, ds.patients[i].encounters[t].x);
    }
  }
}

TEST(Semisynthetic, IdentityKeepsLabelRate) {
  auto c = small(3000);
  const auto [ds, gt] = generate_scm_dataset(c);
  const auto out = apply_semisynthetic(ds, gt, SynthesisParams::identity(6));
  double before = 0, after = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t t = 0; t < ds.patients[i].encounters.size(); ++t) {
      before += ds.patients[i].encounters[t].y;
      after += out.patients[i].encounters[t].y;
    }
  }
  const double n = static_cast<double>(ds.total_encounters());
  // Two independent Bernoulli draws per encounter: sd of the rate gap <= sqrt(2 * 0.25 / n).
  EXPECT_LT(std::abs(before - after) / n, 3.0 * std::sqrt(0.5 / n));
}

TEST(Semisynthetic, ScalesDependentPatients) {
  const auto [ds, gt] = generate_scm_dataset(small(30));
  auto p = SynthesisParams::identity(6);
  p.m1.assign(6, 2.0);
  const auto out = apply_semisynthetic(ds, gt, p);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double m = gt.patients[i].f_depe == 1 ? 2.0 : 1.0;
    for (std::size_t t = 0; t < ds.patients[i].encounters.size(); ++t) {
      for (std::size_t j = 0; j < 6; ++j) {
        EXPECT_EQ(out.patients[i].encounters[t].x[j], m * ds.patients[i].encounters[t].x[j]);
      }
    }
  }
}

TEST(Semisynthetic, LabelShiftSeparatesGroups) {
  const auto [ds, gt] = generate_scm_dataset(small(2000));
  auto p = SynthesisParams::identity(6);
  p.b3 = 0.3;
  p.b4 = -0.3;
  const auto out = apply_semisynthetic(ds, gt, p);
  double pos[2] = {0, 0}, cnt[2] = {0, 0};
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (const auto& e : out.patients[i].encounters) {
      pos[gt.patients[i].f_depe] += e.y;
      cnt[gt.patients[i].f_depe] += 1;
    }
  }
  EXPECT_GT(pos[1] / cnt[1] - pos[0] / cnt[0], 0.3);
}

TEST(Semisynthetic, MisalignedTruthIsRejected) {
  auto [ds, gt] = generate_scm_dataset(small(5));
  gt.patients.pop_back();
  EXPECT_THROW(apply_semisynthetic(ds, gt, SynthesisParams::defaults(6)), AlignmentError);
  EXPECT_THROW(apply_semisynthetic(ds, generate_scm_dataset(small(4)).second, SynthesisParams::defaults(5)),
               AlignmentError);
}

TEST(HideConfounder, DropsOnlyThatField) {
  const auto [ds, gt] = generate_scm_dataset(small(10));
  const auto hidden = hide_confounder(ds, kFinancialDependency);
  EXPECT_EQ(hidden.schema.demographic_dim(), ds.schema.demographic_dim() - 1);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(hidden.patients[i].encounters, ds.patients[i].encounters);
    EXPECT_EQ(hidden.patients[i].d.sensitive_bits, ds.patients[i].d.sensitive_bits);
    EXPECT_TRUE(hidden.patients[i].d.extra.empty());
  }
  EXPECT_THROW(hide_confounder(hidden, kFinancialDependency), SchemaError);
}

TEST(Disturb, TouchesOnlyListedBits) {
  const auto [ds, gt] = generate_scm_dataset(small(200));
  EXPECT_EQ(disturb_demographics(ds, {}, 1), ds);
  const auto out = disturb_demographics(ds, {"race"}, 1);
  EXPECT_EQ(out, disturb_demographics(ds, {"race"}, 1));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(out.patients[i].encounters, ds.patients[i].encounters);
    EXPECT_EQ(out.patients[i].d.sensitive_bits[1], ds.patients[i].d.sensitive_bits[1]);
    EXPECT_EQ(out.patients[i].d.sensitive_bits[2], ds.patients[i].d.sensitive_bits[2]);
  }
  EXPECT_THROW(disturb_demographics(ds, {"age"}, 1), SchemaError);
}

TEST(Disturb, HalfTheBitsChange) {
  const auto [ds, gt] = generate_scm_dataset(small(10000));
  const auto out = disturb_demographics(ds, {"race", "gender", "insurance"}, 5);
  double flips = 0, n = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      flips += out.patients[i].d.sensitive_bits[k] != ds.patients[i].d.sensitive_bits[k];
      n += 1;
    }
  }
  EXPECT_LT(std::abs(flips / n - 0.5), 3.0 * std::sqrt(0.25 / n));
}

TEST(Mix, EndpointsAndCounts) {
  const auto [ds, gt] = generate_scm_dataset(small(10));
  const auto dist = disturb_demographics(ds, {"race", "gender", "insurance"}, 9);
  EXPECT_EQ(mix_training(ds, dist, 1.0, 3), ds);
  EXPECT_EQ(mix_training(ds, dist, 0.0, 3), dist);
  const auto mixed = mix_training(ds, dist, 0.6, 3);
  std::size_t from_orig = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const bool o = mixed.patients[i] == ds.patients[i];
    const bool d = mixed.patients[i] == dist.patients[i];
    EXPECT_TRUE(o || d);
    // Patients the disturbance happened to leave unchanged count as original.
    from_orig += o;
  }
  EXPECT_GE(from_orig, 6u);
  EXPECT_THROW(mix_training(ds, dist, 1.5, 3), ConfigError);
}

TEST(Rebalance, ExactGroupCounts) {
  const auto [ds, gt] = generate_scm_dataset(small(300));
  for (const auto& [a, b, want_a] : std::vector<std::tuple<double, double, std::size_t>>{
           {1, 1, 50}, {1, 4, 20}, {1, 2, 34}}) {
    const auto out = rebalance_by_attribute(ds, "race", a, b, 100, 7);
    std::size_t n_a = 0;
    std::set<std::string> ids;
    for (const auto& p : out.patients) {
      n_a += p.d.sensitive_bits[0];
      ids.insert(p.id);
    }
    EXPECT_EQ(out.size(), 100u);
    EXPECT_EQ(n_a, want_a) << a << ":" << b;
    EXPECT_EQ(ids.size(), 100u);
  }
  EXPECT_EQ(rebalance_by_attribute(ds, "race", 1, 4, 100, 7), rebalance_by_attribute(ds, "race", 1, 4, 100, 7));
  // Oversampling a small group duplicates records under fresh ids.
  const auto big = rebalance_by_attribute(ds, "race", 9, 1, 600, 7);
  std::set<std::string> ids;
  for (const auto& p : big.patients) ids.insert(p.id);
  EXPECT_EQ(ids.size(), 600u);
  EXPECT_THROW(rebalance_by_attribute(ds, "race", 0, 0, 10, 7), ConfigError);
}

TEST(GroundTruthIo, RoundTrip) {
  const auto [ds, gt] = generate_scm_dataset(small(12));
  const auto path = std::filesystem::temp_directory_path() / "flmd_gt.jsonl";
  save_ground_truth(gt, path);
  EXPECT_EQ(load_ground_truth(path), gt);
}
