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
#include <fstream>
#include <set>

#include "flmd/ehr_data.hpp"
#include "flmd/error.hpp"

using namespace flmd;
using namespace flmd::data;

namespace {

Dataset toy(std::size_t n, std::size_t F = 2) {
  Dataset ds;
  ds.schema.F = F;
  ds.schema.sensitive_names = {"race", "gender"};
  for (std::size_t i = 0; i < n; ++i) {
    PatientRecord p;
    p.id = "p" + std::to_string(i);
    p.d.sensitive_bits = {static_cast<int>(i % 2), static_cast<int>((i / 2) % 2)};
    const std::size_t T = 1 + i % 3;
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> x(F);
      for (std::size_t j = 0; j < F; ++j) x[j] = static_cast<double>(i * 10 + t) + 0.5 * j;
      p.encounters.push_back({x, static_cast<int>((i + t) % 2)});
    }
    ds.patients.push_back(p);
  }
  return ds;
}

std::filesystem::path tmp(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("flmd_test_" + name);
}

}  // namespace

TEST(Schema, SensitiveIndex) {
  const auto ds = toy(1);
  EXPECT_EQ(ds.schema.sensitive_index("gender"), 1u);
  EXPECT_THROW(ds.schema.sensitive_index("age"), SchemaError);
  EXPECT_EQ(ds.schema.demographic_dim(), 2u);
}

TEST(Validate, RejectsBrokenRecords) {
  auto ds = toy(3);
  EXPECT_NO_THROW(validate(ds));
  auto bad = ds;
  bad.patients[0].encounters[0].x.push_back(1.0);
  EXPECT_THROW(validate(bad), SchemaError);
  bad = ds;
  bad.patients[1].d.sensitive_bits[0] = 2;
  EXPECT_THROW(validate(bad), SchemaError);
  bad = ds;
  bad.patients[2].encounters.clear();
  EXPECT_THROW(validate(bad), SchemaError);
  bad = ds;
  bad.patients[0].encounters[0].y = 3;
  EXPECT_THROW(validate(bad), SchemaError);
}

TEST(Io, DatasetRoundTrip) {
  const auto ds = toy(7);
  save_schema(ds.schema, tmp("schema.json"));
  save_dataset(ds, tmp("ds.jsonl"));
  const auto schema = load_schema(tmp("schema.json"));
  EXPECT_EQ(schema, ds.schema);
  EXPECT_EQ(load_dataset(tmp("ds.jsonl"), schema), ds);
}

TEST(Io, ParseErrorsCarryLineNumbers) {
  const auto ds = toy(2);
  {
    std::ofstream out(tmp("bad.jsonl"));
    out << patient_to_json_line(ds.patients[0]) << "\n{not json\n";
  }
  try {
    load_dataset(tmp("bad.jsonl"), ds.schema);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  {
    std::ofstream out(tmp("bad2.jsonl"));
    out << R"({"id":"a","d":{"sensitive":[0]},"enc":[{"x":[1,2],"y":0}]})" << "\n";
  }
  EXPECT_THROW(load_dataset(tmp("bad2.jsonl"), ds.schema), SchemaError);
  EXPECT_THROW(load_dataset(tmp("missing.jsonl"), ds.schema), IoError);
}

TEST(Split, SizesFollowFloorRule) {
  const auto ds = toy(100);
  const auto [train, val, test] = split_dataset(ds, {0.7, 0.2, 0.1}, 3);
  EXPECT_EQ(train.size(), 70u);
  EXPECT_EQ(val.size(), 20u);
  EXPECT_EQ(test.size(), 10u);
  const auto [a, b, c] = split_dataset(toy(13), {0.7, 0.2, 0.1}, 3);
  EXPECT_EQ(b.size(), 2u);  // floor(2.6)
  EXPECT_EQ(c.size(), 1u);  // floor(1.3)
  EXPECT_EQ(a.size(), 10u);
}

TEST(Split, DisjointCoveringAndDeterministic) {
  const auto ds = toy(57);
  const auto [train, val, test] = split_dataset(ds, {0.6, 0.3, 0.1}, 11);
  std::set<std::string> ids;
  for (const auto* part : {&train, &val, &test}) {
    for (const auto& p : part->patients) EXPECT_TRUE(ids.insert(p.id).second);
  }
  EXPECT_EQ(ids.size(), ds.size());
  const auto again = split_dataset(ds, {0.6, 0.3, 0.1}, 11);
  EXPECT_EQ(std::get<2>(again), test);
  const auto other = split_dataset(ds, {0.6, 0.3, 0.1}, 12);
  EXPECT_NE(std::get<2>(other), test);
}

TEST(Split, Errors) {
  EXPECT_THROW(split_dataset(toy(10), {0.5, 0.2, 0.2}, 0), SplitError);
  EXPECT_THROW(split_dataset(toy(10), {1.2, -0.1, -0.1}, 0), SplitError);
  EXPECT_THROW(split_dataset(toy(2), {0.7, 0.2, 0.1}, 0), SplitError);
  const auto [a, b, c] = split_dataset(toy(3), {0.7, 0.2, 0.1}, 0);
  EXPECT_EQ(a.size() + b.size() + c.size(), 3u);
  EXPECT_EQ(b.size(), 1u);
  EXPECT_EQ(c.size(), 1u);
}

TEST(FeatureHistory, PrefixOfEncounters) {
  const auto ds = toy(3);
  const auto& p = ds.patients[2];  // three encounters
  const auto h = feature_history(p, 2);
  ASSERT_EQ(h.size(), 2u);
  EXPECT_EQ(h[1], p.encounters[1].x);
  EXPECT_EQ(feature_history(p, 3).size(), 3u);
  EXPECT_THROW(feature_history(p, 0), IndexError);
  EXPECT_THROW(feature_history(p, 4), IndexError);
}

TEST(Normalizer, TrainStatisticsGiveZeroMeanUnitStd) {
  auto ds = toy(20, 3);
  for (auto& p : ds.patients) {
    for (auto& e : p.encounters) e.x[2] = 5.0;  // constant column
  }
  const auto stats = fit_normalizer(ds);
  EXPECT_DOUBLE_EQ(stats.std[2], kStdFloor);
  const auto norm = apply_normalizer(ds, stats);
  for (std::size_t j = 0; j < 2; ++j) {
    double s = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& p : norm.patients) {
      for (const auto& e : p.encounters) {
        s += e.x[j];
        sq += e.x[j] * e.x[j];
        ++n;
      }
    }
    EXPECT_NEAR(s / n, 0.0, 1e-12);
    EXPECT_NEAR(sq / n, 1.0, 1e-12);
  }
  EXPECT_EQ(norm.patients[0].encounters[0].x[2], 0.0);
  EXPECT_THROW(fit_normalizer(Dataset{ds.schema, {}}), DataError);
}

TEST(ContentHash, SensitiveToContentAndOrder) {
  const auto ds = toy(5);
  EXPECT_EQ(content_hash(ds), content_hash(toy(5)));
  EXPECT_EQ(content_hash(ds).size(), 16u);
  auto changed = ds;
  changed.patients[3].encounters[0].x[0] += 1e-9;
  EXPECT_NE(content_hash(changed), content_hash(ds));
  auto swapped = ds;
  std::swap(swapped.patients[0], swapped.patients[1]);
  EXPECT_NE(content_hash(swapped), content_hash(ds));
}
