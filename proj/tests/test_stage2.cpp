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
#include <sstream>

#include "flmd/error.hpp"
#include "flmd/metrics.hpp"
#include "flmd/stage2.hpp"
#include "support/gradcheck.hpp"

using namespace flmd;
using namespace flmd::stage2;
using dk::Tensor;

namespace {

Stage2Config small_cfg() {
  Stage2Config c;
  c.d_model = 4;
  c.n_heads = 2;
  c.n_layers = 1;
  c.lr = 1e-2;
  c.epochs = 3;
  c.batch_size = 8;
  return c;
}

data::Schema toy_schema(std::size_t F) {
  data::Schema s;
  s.F = F;
  s.sensitive_names = {"race", "gender", "insurance"};
  return s;
}

// Patients with random features; the label is x[0] > 0 when separable,
// otherwise a coin. Latents are random and z_dim = 2.
std::pair<data::Dataset, stage1::LatentTrace> toy(std::size_t n, std::uint64_t seed,
                                                  bool separable = true) {
  Rng rng(seed);
  data::Dataset ds{toy_schema(3), {}};
  stage1::LatentTrace trace(2, 1);
  for (std::size_t i = 0; i < n; ++i) {
    data::PatientRecord p;
    p.id = "p" + std::to_string(i);
    p.d.sensitive_bits = {bernoulli(rng, 0.5), bernoulli(rng, 0.5), bernoulli(rng, 0.5)};
    const std::size_t T = 1 + i % 3;
    for (std::size_t t = 0; t < T; ++t) {
      data::Encounter e;
      e.x = {standard_normal(rng), standard_normal(rng), standard_normal(rng)};
      e.y = separable ? (e.x[0] > 0 ? 1 : 0) : bernoulli(rng, 0.5);
      p.encounters.push_back(e);
      trace.add({p.id, t + 1, {standard_normal(rng), standard_normal(rng)}, {0.0}});
    }
    ds.patients.push_back(std::move(p));
  }
  return {ds, trace};
}

Batch batch_of(const data::Dataset& ds, const stage1::LatentTrace& trace, const Stage2Config& cfg,
               std::size_t count) {
  static std::vector<Item> items;
  items = collect_items(ds, trace);
  std::vector<const Item*> ptrs;
  for (std::size_t k = 0; k < count && k < items.size(); ++k) ptrs.push_back(&items[k]);
  return make_batch(ptrs, cfg, ds.schema, nullptr);
}

double bce_ref(double p, double y) { return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p)); }

}  // namespace

TEST(Stage2Config, ValidationAndJson) {
  Stage2Config c;
  EXPECT_NO_THROW(c.validate());
  c.n_heads = 3;  // 64 not divisible by 3
  EXPECT_THROW(c.validate(), ConfigError);
  c = Stage2Config{};
  c.lambda = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_cfg();
  c.flip_mode = FlipMode::kRandomSubset;
  const auto j = c.to_json();
  EXPECT_EQ(j.at("flip_mode"), "random");
  EXPECT_EQ(Stage2Config::from_json(j).to_json(), j);
}

TEST(Counterfactual, FlipIsAnInvolutionOnListedBits) {
  const auto schema = toy_schema(1);
  data::Demographics d{{1, 0, 1}, {}};
  const auto once = counterfactual_demographics(d, {"race", "insurance"}, schema);
  EXPECT_EQ(once.sensitive_bits, (std::vector<int>{0, 0, 0}));
  EXPECT_EQ(counterfactual_demographics(once, {"race", "insurance"}, schema), d);
  EXPECT_EQ(counterfactual_demographics(d, {}, schema), d);
  EXPECT_THROW(counterfactual_demographics(d, {"age"}, schema), SchemaError);
}

TEST(Forward, ZeroModelPredictsHalf) {
  auto m = init_stage2(small_cfg(), 3, 2, 3, true);
  Rng rng(1);
  const auto p = predict(m, testkit::random_tensor(rng, 5, 3), testkit::random_tensor(rng, 5, 2),
                         testkit::random_tensor(rng, 5, 3));
  ASSERT_EQ(p.size(), 5u);
  for (double v : p) EXPECT_EQ(v, 0.5);
  EXPECT_THROW(predict(m, Tensor::zeros(5, 2), Tensor::zeros(5, 2), Tensor::zeros(5, 3)), ShapeError);
}

TEST(Loss, ZeroModelLossIsScaledLog2) {
  auto [ds, trace] = toy(6, 2);
  for (double lambda : {0.0, 1.0, 2.5}) {
    auto cfg = small_cfg();
    cfg.lambda = lambda;
    cfg.weight_decay = 0.0;
    auto m = init_stage2(cfg, 3, 2, 3, true);
    dk::Tape t;
    const auto parts = stage2_loss(t, m, batch_of(ds, trace, cfg, 8));
    EXPECT_NEAR(parts.total.value().item(), (1.0 + lambda) * std::log(2.0), 1e-12);
  }
}

TEST(Loss, LambdaZeroIsPlainBce) {
  auto [ds, trace] = toy(6, 3);
  auto cfg = small_cfg();
  cfg.lambda = 0.0;
  cfg.weight_decay = 0.0;
  auto m = init_stage2(cfg, 3, 2, 3);
  dk::Tape t;
  const auto parts = stage2_loss(t, m, batch_of(ds, trace, cfg, 8));
  EXPECT_EQ(parts.total.value().item(), parts.factual);
  EXPECT_EQ(parts.counterfactual, 0.0);
}

TEST(Loss, MatchesThreeTermOracle) {
  auto [ds, trace] = toy(4, 4);
  auto cfg = small_cfg();
  cfg.lambda = 0.7;
  cfg.weight_decay = 0.01;
  auto m = init_stage2(cfg, 3, 2, 3);
  const Batch b = batch_of(ds, trace, cfg, 4);
  ASSERT_EQ(b.y.rows(), 4u);
  const auto pf = predict(m, b.d, b.z, b.x);
  const auto pc = predict(m, b.d_cf, b.z, b.x);
  double f = 0.0, c = 0.0;
  for (std::size_t r = 0; r < 4; ++r) {
    f += bce_ref(pf[r], b.y[r]) / 4.0;
    c += bce_ref(pc[r], b.y[r]) / 4.0;
  }
  double l2 = 0.0;
  for (const auto& [name, v] : m.params.values()) {
    for (double w : v.storage()) l2 += w * w;
  }
  dk::Tape t;
  const auto parts = stage2_loss(t, m, b);
  EXPECT_NEAR(parts.factual, f, 1e-12);
  EXPECT_NEAR(parts.counterfactual, c, 1e-12);
  EXPECT_NEAR(parts.total.value().item(), f + 0.7 * c + 0.01 * l2, 1e-12);
}

TEST(Forward, TokenOrderDoesNotMatter) {
  auto m = init_stage2(small_cfg(), 3, 2, 3);
  Rng rng(5);
  dk::Tape t;
  const Tensor tokens = testkit::random_tensor(rng, 6, 4);
  Tensor swapped = tokens;
  for (std::size_t item = 0; item < 2; ++item) {
    for (std::size_t c = 0; c < 4; ++c) {
      swapped(3 * item, c) = tokens(3 * item + 2, c);
      swapped(3 * item + 2, c) = tokens(3 * item, c);
    }
  }
  const Tensor a = forward_tokens(t, m, t.constant(tokens)).value();
  const Tensor b = forward_tokens(t, m, t.constant(swapped)).value();
  for (std::size_t r = 0; r < 2; ++r) EXPECT_NEAR(a[r], b[r], 1e-14);
}

TEST(Forward, ItemsAreIndependent) {
  auto m = init_stage2(small_cfg(), 3, 2, 3);
  Rng rng(6);
  const Tensor d = testkit::random_tensor(rng, 3, 3), z = testkit::random_tensor(rng, 3, 2),
               x = testkit::random_tensor(rng, 3, 3);
  const auto all = predict(m, d, z, x);
  for (std::size_t r = 0; r < 3; ++r) {
    const auto one = predict(m, Tensor::row(d.row_vector(r)), Tensor::row(z.row_vector(r)),
                             Tensor::row(x.row_vector(r)));
    EXPECT_NEAR(one[0], all[r], 1e-14);
  }
}

TEST(CfGap, ZeroWhenDemographicsAreIgnored) {
  auto [ds, trace] = toy(10, 7);
  auto m = init_stage2(small_cfg(), 3, 2, 3);
  EXPECT_GT(cf_gap(m, ds, trace), 0.0);
  for (auto& v : m.params.value("in.d.W").storage()) v = 0.0;
  EXPECT_EQ(cf_gap(m, ds, trace), 0.0);
}

TEST(Items, MissingLatentIsAnAlignmentError) {
  auto [ds, trace] = toy(3, 8);
  EXPECT_EQ(collect_items(ds, trace).size(), ds.total_encounters());
  ds.patients[2].encounters.push_back(ds.patients[2].encounters.back());
  EXPECT_THROW(collect_items(ds, trace), AlignmentError);
}

TEST(Batch, RandomSubsetFlipsOnlyConfiguredBits) {
  auto [ds, trace] = toy(20, 9);
  auto cfg = small_cfg();
  cfg.flip_mode = FlipMode::kRandomSubset;
  cfg.sensitive_fields = {"gender"};
  const auto items = collect_items(ds, trace);
  std::vector<const Item*> ptrs;
  for (const auto& it : items) ptrs.push_back(&it);
  Rng rng(1);
  const Batch b = make_batch(ptrs, cfg, ds.schema, &rng);
  std::size_t flipped = 0;
  for (std::size_t r = 0; r < ptrs.size(); ++r) {
    EXPECT_EQ(b.d(r, 0), b.d_cf(r, 0));
    EXPECT_EQ(b.d(r, 2), b.d_cf(r, 2));
    flipped += b.d(r, 1) != b.d_cf(r, 1);
  }
  EXPECT_GT(flipped, 0u);
  EXPECT_LT(flipped, ptrs.size());
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  auto [ds, trace] = toy(4, 10, false);
  for (std::uint64_t point = 0; point < 2; ++point) {
    auto cfg = small_cfg();
    cfg.lambda = 1.0;
    cfg.weight_decay = 1e-3;
    cfg.seed = point;
    auto m = init_stage2(cfg, 3, 2, 3);
    const Batch b = batch_of(ds, trace, cfg, 6);
    const auto rep = testkit::grad_check(m.params, [&](dk::Tape& t, dk::ParamStore&) {
      return stage2_loss(t, m, b).total;
    });
    EXPECT_LE(rep.max_rel, 1e-4) << rep.worst;
  }
}

TEST(Train, LearnsSeparableLabels) {
  auto [train, trace] = toy(120, 11);
  auto [val, vtrace] = toy(40, 12);
  for (const auto& e : vtrace.entries()) {
    auto copy = e;
    copy.id = "v" + copy.id;
    trace.add(copy);
  }
  for (auto& p : val.patients) p.id = "v" + p.id;
  auto cfg = small_cfg();
  cfg.d_model = 8;
  cfg.epochs = 30;
  cfg.lambda = 0.0;
  const auto res = train_stage2(train, val, trace, cfg);
  ASSERT_EQ(res.history.epochs.size(), 30u);
  EXPECT_LT(res.history.best_epoch, 30u);
  auto model = res.model;
  const auto preds = predict_dataset(model, train, trace);
  std::vector<double> s;
  std::vector<int> y;
  for (const auto& p : preds) {
    s.push_back(p.prob);
    y.push_back(p.y);
  }
  EXPECT_GT(metrics::auc(s, y), 0.95);
}

TEST(Train, DeterministicUnderSeed) {
  auto [train, trace] = toy(30, 13);
  auto cfg = small_cfg();
  const auto a = train_stage2(train, train, trace, cfg);
  const auto b = train_stage2(train, train, trace, cfg);
  EXPECT_TRUE(a.model.params == b.model.params);
  ASSERT_EQ(a.history.epochs.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(a.history.epochs[e].loss, b.history.epochs[e].loss);
  cfg.seed = 1;
  EXPECT_FALSE(train_stage2(train, train, trace, cfg).model.params == a.model.params);
}

TEST(Predictions, CsvLayout) {
  std::vector<metrics::Prediction> preds = {{"a", 1, 0.25, 1, {1, 0, 1}}, {"b", 2, 0.5, 0, {0, 0, 0}}};
  const auto path = std::filesystem::temp_directory_path() / "flmd_preds.csv";
  save_predictions_csv(preds, path);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str(), "patient_id,t,prob,y,group_bits\na,1,0.25,1,101\nb,2,0.5,0,000\n");
}
