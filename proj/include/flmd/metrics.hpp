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

#ifndef FLMD_METRICS_HPP
#define FLMD_METRICS_HPP

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "flmd/ehr_data.hpp"

namespace flmd::metrics {

// Mann-Whitney AUC: P(s+ > s-) + P(s+ = s-)/2, exact (midranks).
// Throws MetricError unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

// DCG@k with raw-relevance gain and 1/log2(rank + 1) discount, over the
// ideal DCG@k. Ties in score keep input order. Throws MetricError when no
// item is relevant.
double ndcg_at_k(std::span<const double> scores, std::span<const double> relevances,
                 std::size_t k = 5);

// Binary-task scored items with the group bit of each item.
struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<int> group_bits;

  std::size_t size() const { return scores.size(); }
  void push(double score, int label, int group) {
    scores.push_back(score);
    labels.push_back(label);
    group_bits.push_back(group);
  }
};

// Multi-label ranking items: one score list and one relevance list per item.
struct RankedSet {
  std::vector<std::vector<double>> scores;
  std::vector<std::vector<double>> relevances;
  std::vector<int> group_bits;
};

// Health disparity: |metric(G1) - metric(G2)| * 1000.
double disparity(double metric_g1, double metric_g2);
double hd_binary(const ScoredSet& g1, const ScoredSet& g2);
// Splits on group_bits (0 -> G1, 1 -> G2) first.
double hd_binary(const ScoredSet& set);
// Mean per-item nDCG@5 within each group.
double mean_ndcg(const RankedSet& set, std::size_t k = 5);
double hd_multi(const RankedSet& g1, const RankedSet& g2);
double hd_multi(const RankedSet& set);

// One encounter-level prediction.
struct Prediction {
  std::string patient_id;
  std::size_t t = 0;  // 1-based encounter index
  double prob = 0.5;
  int y = 0;
  std::vector<int> sensitive_bits;
};

// Partition by the named sensitive bit: bit 0 -> G1, bit 1 -> G2.
std::pair<ScoredSet, ScoredSet> group_split(const std::vector<Prediction>& predictions,
                                            const data::Schema& schema,
                                            const std::string& attribute);
std::pair<ScoredSet, ScoredSet> group_split(const ScoredSet& set);

struct FairnessReport {
  double auc_overall = 0.0;
  double auc_g1 = 0.0;
  double auc_g2 = 0.0;
  double hd_binary = 0.0;
  double cf_gap = 0.0;
  std::size_t n_g1 = 0;
  std::size_t n_g2 = 0;
  std::optional<double> ndcg_g1, ndcg_g2, hd_multi;

  nlohmann::json to_json() const;
  static FairnessReport from_json(const nlohmann::json& j);
  static std::string csv_header();
  std::string csv_row() const;
};

// Builds the binary-task report for `attribute`; cf_gap is filled by the caller.
FairnessReport evaluate_binary(const std::vector<Prediction>& predictions,
                               const data::Schema& schema, const std::string& attribute);

}  // namespace flmd::metrics

#endif  // FLMD_METRICS_HPP
