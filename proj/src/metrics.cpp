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

#include "flmd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "flmd/error.hpp"

namespace flmd::metrics {

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw DomainError("auc: labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(y);
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw MetricError("auc undefined: only one class present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of positive ranks, with tied blocks sharing their mean rank. Ranks
  // are doubled to stay integral.
  std::uint64_t rank_sum_x2 = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t mid_x2 = static_cast<std::uint64_t>(i + 1 + j);  // 2 * mean of (i+1..j)
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) rank_sum_x2 += mid_x2;
    }
    i = j;
  }
  // U = R+ - n+(n+ + 1)/2, all doubled.
  const std::uint64_t u_x2 = rank_sum_x2 - static_cast<std::uint64_t>(n_pos) * (n_pos + 1);
  return static_cast<double>(u_x2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double ndcg_at_k(std::span<const double> scores, std::span<const double> relevances,
                 std::size_t k) {
  if (scores.size() != relevances.size()) throw ShapeError("ndcg: length mismatch");
  if (k == 0) throw DomainError("ndcg: k must be >= 1");
  const bool any = std::any_of(relevances.begin(), relevances.end(), [](double r) { return r > 0; });
  if (!any) throw MetricError("ndcg undefined: no relevant item");

  const auto dcg = [&](std::vector<std::size_t> order) {
    double s = 0.0;
    for (std::size_t r = 0; r < std::min(k, order.size()); ++r) {
      s += relevances[order[r]] / std::log2(static_cast<double>(r) + 2.0);
    }
    return s;
  };
  std::vector<std::size_t> by_score(scores.size());
  std::iota(by_score.begin(), by_score.end(), 0);
  std::stable_sort(by_score.begin(), by_score.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> ideal(by_score);
  std::stable_sort(ideal.begin(), ideal.end(),
                   [&](std::size_t a, std::size_t b) { return relevances[a] > relevances[b]; });
  return dcg(by_score) / dcg(ideal);
}

double disparity(double metric_g1, double metric_g2) {
  return std::abs(metric_g1 - metric_g2) * 1e3;
}

double hd_binary(const ScoredSet& g1, const ScoredSet& g2) {
  return disparity(auc(g1.scores, g1.labels), auc(g2.scores, g2.labels));
}

double hd_binary(const ScoredSet& set) {
  const auto [g1, g2] = group_split(set);
  return hd_binary(g1, g2);
}

double mean_ndcg(const RankedSet& set, std::size_t k) {
  if (set.scores.empty()) throw MetricError("ndcg undefined: empty group");
  double s = 0.0;
  for (std::size_t i = 0; i < set.scores.size(); ++i) {
    s += ndcg_at_k(set.scores[i], set.relevances[i], k);
  }
  return s / static_cast<double>(set.scores.size());
}

double hd_multi(const RankedSet& g1, const RankedSet& g2) {
  return disparity(mean_ndcg(g1), mean_ndcg(g2));
}

double hd_multi(const RankedSet& set) {
  RankedSet g[2];
  for (std::size_t i = 0; i < set.scores.size(); ++i) {
    const int b = set.group_bits.at(i);
    g[b].scores.push_back(set.scores[i]);
    g[b].relevances.push_back(set.relevances[i]);
    g[b].group_bits.push_back(b);
  }
  return hd_multi(g[0], g[1]);
}

std::pair<ScoredSet, ScoredSet> group_split(const std::vector<Prediction>& predictions,
                                            const data::Schema& schema,
                                            const std::string& attribute) {
  const std::size_t bit = schema.sensitive_index(attribute);
  ScoredSet g1, g2;
  for (const auto& p : predictions) {
    const int b = p.sensitive_bits.at(bit);
    (b == 0 ? g1 : g2).push(p.prob, p.y, b);
  }
  return {std::move(g1), std::move(g2)};
}

std::pair<ScoredSet, ScoredSet> group_split(const ScoredSet& set) {
  ScoredSet g1, g2;
  for (std::size_t i = 0; i < set.size(); ++i) {
    (set.group_bits[i] == 0 ? g1 : g2).push(set.scores[i], set.labels[i], set.group_bits[i]);
  }
  return {std::move(g1), std::move(g2)};
}

nlohmann::json FairnessReport::to_json() const {
  nlohmann::json j = {{"auc_overall", auc_overall}, {"auc_g1", auc_g1}, {"auc_g2", auc_g2},
                      {"hd_binary", hd_binary},     {"cf_gap", cf_gap}, {"n_g1", n_g1},
                      {"n_g2", n_g2}};
  if (ndcg_g1) j["ndcg_g1"] = *ndcg_g1;
  if (ndcg_g2) j["ndcg_g2"] = *ndcg_g2;
  if (hd_multi) j["hd_multi"] = *hd_multi;
  return j;
}

FairnessReport FairnessReport::from_json(const nlohmann::json& j) {
  FairnessReport r;
  r.auc_overall = j.at("auc_overall").get<double>();
  r.auc_g1 = j.at("auc_g1").get<double>();
  r.auc_g2 = j.at("auc_g2").get<double>();
  r.hd_binary = j.at("hd_binary").get<double>();
  r.cf_gap = j.at("cf_gap").get<double>();
  r.n_g1 = j.at("n_g1").get<std::size_t>();
  r.n_g2 = j.at("n_g2").get<std::size_t>();
  if (j.contains("ndcg_g1")) r.ndcg_g1 = j.at("ndcg_g1").get<double>();
  if (j.contains("ndcg_g2")) r.ndcg_g2 = j.at("ndcg_g2").get<double>();
  if (j.contains("hd_multi")) r.hd_multi = j.at("hd_multi").get<double>();
  return r;
}

std::string FairnessReport::csv_header() {
  return "auc_overall,auc_g1,auc_g2,hd_binary,cf_gap,n_g1,n_g2";
}

std::string FairnessReport::csv_row() const {
  std::ostringstream os;
  os.precision(17);
  os << auc_overall << ',' << auc_g1 << ',' << auc_g2 << ',' << hd_binary << ',' << cf_gap << ','
     << n_g1 << ',' << n_g2;
  return os.str();
}

FairnessReport evaluate_binary(const std::vector<Prediction>& predictions,
                               const data::Schema& schema, const std::string& attribute) {
  FairnessReport r;
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& p : predictions) {
    scores.push_back(p.prob);
    labels.push_back(p.y);
  }
  r.auc_overall = auc(scores, labels);
  const auto [g1, g2] = group_split(predictions, schema, attribute);
  r.n_g1 = g1.size();
  r.n_g2 = g2.size();
  r.auc_g1 = auc(g1.scores, g1.labels);
  r.auc_g2 = auc(g2.scores, g2.labels);
  r.hd_binary = disparity(r.auc_g1, r.auc_g2);
  return r;
}

}  // namespace flmd::metrics
