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

#ifndef FLMD_TESTS_ORACLES_HPP
#define FLMD_TESTS_ORACLES_HPP

// Independent reference implementations used to check the metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "flmd/random.hpp"

namespace flmd::testkit {

// All positive/negative pairs: 1 per concordant pair, 1/2 per tie.
inline double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  std::uint64_t twice = 0, pos = 0, neg = 0;
  for (int v : y) (v == 1 ? pos : neg) += 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      if (s[i] > s[j]) twice += 2;
      else if (s[i] == s[j]) twice += 1;
    }
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

// Rank of item i = 1 + items scored higher + equal-scored items listed
// earlier; DCG sums gains of items with rank <= k.
inline double direct_ndcg(const std::vector<double>& s, const std::vector<double>& rel,
                          std::size_t k) {
  double dcg = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::size_t rank = 1;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (s[j] > s[i] || (s[j] == s[i] && j < i)) ++rank;
    }
    if (rank <= k) dcg += rel[i] / std::log2(static_cast<double>(rank) + 1.0);
  }
  std::vector<double> sorted = rel;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double ideal = 0.0;
  for (std::size_t r = 0; r < std::min(k, sorted.size()); ++r) {
    ideal += sorted[r] / std::log2(static_cast<double>(r) + 2.0);
  }
  return dcg / ideal;
}

struct RandomScored {
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<int> groups;
};

// Scores on a coarse grid so ties are common; both classes present in
// each group.
inline RandomScored random_scored(Rng& rng, std::size_t n) {
  RandomScored r;
  std::uniform_int_distribution<int> grid(0, 9);
  for (std::size_t i = 0; i < n; ++i) {
    r.scores.push_back(grid(rng) / 10.0);
    r.labels.push_back(bernoulli(rng, 0.4));
    r.groups.push_back(bernoulli(rng, 0.5));
  }
  for (int g = 0; g < 2; ++g) {
    r.scores.push_back(0.35);
    r.labels.push_back(1);
    r.groups.push_back(g);
    r.scores.push_back(0.35);
    r.labels.push_back(0);
    r.groups.push_back(g);
  }
  return r;
}

}  // namespace flmd::testkit

#endif  // FLMD_TESTS_ORACLES_HPP
