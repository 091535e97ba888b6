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

#include "flmd/error.hpp"
#include "flmd/metrics.hpp"
#include "support/oracles.hpp"

using namespace flmd;
using namespace flmd::metrics;

TEST(Auc, WorkedExample) {
  EXPECT_DOUBLE_EQ(auc(std::vector<double>{0.9, 0.8, 0.4, 0.2}, std::vector<int>{1, 0, 1, 0}), 0.75);
  EXPECT_DOUBLE_EQ(auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(auc(std::vector<double>{0.5, 0.5, 0.5}, std::vector<int>{0, 1, 1}), 0.5);
}

TEST(Auc, SingleClassIsUndefined) {
  EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), MetricError);
  EXPECT_THROW(auc(std::vector<double>{0.1}, std::vector<int>{2}), DomainError);
  EXPECT_THROW(auc(std::vector<double>{0.1}, std::vector<int>{1, 0}), ShapeError);
}

TEST(Auc, MatchesPairwiseOracleExactly) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto r = testkit::random_scored(rng, 1 + trial % 150);
    EXPECT_EQ(auc(r.scores, r.labels), testkit::brute_auc(r.scores, r.labels));
  }
}

TEST(Auc, InvariantUnderMonotoneTransform) {
  Rng rng(2);
  const auto r = testkit::random_scored(rng, 100);
  std::vector<double> t;
  for (double s : r.scores) t.push_back(std::exp(3.0 * s) - 7.0);
  EXPECT_EQ(auc(t, r.labels), auc(r.scores, r.labels));
}

TEST(Auc, NegatedScoresComplementWithoutTies) {
  Rng rng(3);
  std::vector<double> s;
  std::vector<int> y;
  for (int i = 0; i < 80; ++i) {
    s.push_back(uniform01(rng));
    y.push_back(i % 3 == 0);
  }
  std::vector<double> neg;
  for (double v : s) neg.push_back(-v);
  EXPECT_NEAR(auc(s, y) + auc(neg, y), 1.0, 1e-15);
}

TEST(Ndcg, WorkedExamples) {
  EXPECT_DOUBLE_EQ(ndcg_at_k(std::vector<double>{0.9, 0.1, 0.2, 0.3, 0.4}, std::vector<double>{1, 0, 0, 0, 0}), 1.0);
  EXPECT_NEAR(ndcg_at_k(std::vector<double>{0.8, 0.9, 0.2, 0.3, 0.4}, std::vector<double>{1, 0, 0, 0, 0}),
              1.0 / std::log2(3.0), 1e-15);
  EXPECT_NEAR(1.0 / std::log2(3.0), 0.6309, 1e-4);
  EXPECT_THROW(ndcg_at_k(std::vector<double>{0.1}, std::vector<double>{0}), MetricError);
  EXPECT_THROW(ndcg_at_k(std::vector<double>{0.1}, std::vector<double>{1}, 0), DomainError);
}

TEST(Ndcg, MatchesDirectFormula) {
  Rng rng(4);
  std::uniform_int_distribution<int> g(0, 4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 12;
    std::vector<double> s(n), rel(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = g(rng) / 4.0;
      rel[i] = g(rng) > 2 ? 1.0 : 0.0;
    }
    rel[trial % n] = 1.0;
    const std::size_t k = 1 + trial % 6;
    EXPECT_NEAR(ndcg_at_k(s, rel, k), testkit::direct_ndcg(s, rel, k), 1e-15);
    EXPECT_LE(ndcg_at_k(s, rel, k), 1.0 + 1e-15);
  }
}

TEST(Disparity, Arithmetic) {
  EXPECT_NEAR(disparity(0.75, 0.70), 50.0, 1e-9);
  EXPECT_NEAR(disparity(0.58, 0.52), 60.0, 1e-9);
  EXPECT_EQ(disparity(0.3, 0.9), disparity(0.9, 0.3));
}

TEST(Disparity, BinaryEqualsScaledAucGap) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto r = testkit::random_scored(rng, 60);
    ScoredSet set;
    for (std::size_t i = 0; i < r.scores.size(); ++i) set.push(r.scores[i], r.labels[i], r.groups[i]);
    std::vector<double> s[2];
    std::vector<int> y[2];
    for (std::size_t i = 0; i < r.scores.size(); ++i) {
      s[r.groups[i]].push_back(r.scores[i]);
      y[r.groups[i]].push_back(r.labels[i]);
    }
    const double want = std::abs(testkit::brute_auc(s[0], y[0]) - testkit::brute_auc(s[1], y[1])) * 1e3;
    EXPECT_EQ(hd_binary(set), want);
    const auto [g1, g2] = group_split(set);
    EXPECT_EQ(hd_binary(g1, g2), hd_binary(g2, g1));
  }
}

TEST(Disparity, IdenticalGroupsAreZero) {
  ScoredSet set;
  for (int g = 0; g < 2; ++g) {
    set.push(0.9, 1, g);
    set.push(0.3, 0, g);
    set.push(0.4, 1, g);
  }
  EXPECT_EQ(hd_binary(set), 0.0);
  RankedSet ranked;
  for (int g = 0; g < 2; ++g) {
    ranked.scores.push_back({0.9, 0.2, 0.5});
    ranked.relevances.push_back({0, 1, 1});
    ranked.group_bits.push_back(g);
  }
  EXPECT_EQ(hd_multi(ranked), 0.0);
}

TEST(Disparity, MultiUsesMeanNdcgAtFive) {
  RankedSet g1, g2;
  g1.scores = {{0.9, 0.1, 0.2, 0.3, 0.4, 0.0}};
  g1.relevances = {{1, 0, 0, 0, 0, 0}};
  g2.scores = {{0.1, 0.9, 0.2, 0.3, 0.4, 0.0}};
  g2.relevances = {{1, 0, 0, 0, 0, 0}};
  // g2's relevant item sits at rank 5.
  EXPECT_NEAR(hd_multi(g1, g2), (1.0 - 1.0 / std::log2(6.0)) * 1e3, 1e-9);
  EXPECT_EQ(hd_multi(g1, g2), hd_multi(g2, g1));
}

TEST(GroupSplit, PartitionsByNamedBit) {
  data::Schema schema;
  schema.F = 1;
  schema.sensitive_names = {"race", "gender"};
  std::vector<Prediction> preds = {{"a", 1, 0.2, 0, {0, 1}}, {"a", 2, 0.7, 1, {0, 1}}, {"b", 1, 0.4, 1, {1, 1}}};
  const auto [g1, g2] = group_split(preds, schema, "race");
  EXPECT_EQ(g1.size(), 2u);
  EXPECT_EQ(g2.size(), 1u);
  const auto [h1, h2] = group_split(preds, schema, "gender");
  EXPECT_EQ(h1.size(), 0u);
  EXPECT_EQ(h2.size(), 3u);
  EXPECT_THROW(group_split(preds, schema, "age"), SchemaError);
}

TEST(FairnessReport, JsonAndCsv) {
  FairnessReport r;
  r.auc_overall = 0.8;
  r.auc_g1 = 0.75;
  r.auc_g2 = 0.7;
  r.hd_binary = disparity(0.75, 0.7);
  r.cf_gap = 0.01;
  r.n_g1 = 10;
  r.n_g2 = 12;
  const auto back = FairnessReport::from_json(r.to_json());
  EXPECT_EQ(back.to_json(), r.to_json());
  EXPECT_EQ(FairnessReport::csv_header(), "auc_overall,auc_g1,auc_g2,hd_binary,cf_gap,n_g1,n_g2");
  const std::string row = r.csv_row();
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 6);
}

TEST(EvaluateBinary, ConsistentWithParts) {
  data::Schema schema;
  schema.F = 1;
  schema.sensitive_names = {"race"};
  Rng rng(8);
  std::vector<Prediction> preds;
  const auto r = testkit::random_scored(rng, 80);
  for (std::size_t i = 0; i < r.scores.size(); ++i) {
    preds.push_back({"p" + std::to_string(i), 1, r.scores[i], r.labels[i], {r.groups[i]}});
  }
  const auto rep = evaluate_binary(preds, schema, "race");
  EXPECT_EQ(rep.auc_overall, testkit::brute_auc(r.scores, r.labels));
  EXPECT_EQ(rep.hd_binary, std::abs(rep.auc_g1 - rep.auc_g2) * 1e3);
  EXPECT_EQ(rep.n_g1 + rep.n_g2, preds.size());
}
