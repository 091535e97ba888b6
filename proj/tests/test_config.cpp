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

#include "flmd/config.hpp"
#include "flmd/error.hpp"
#include "flmd/experiments.hpp"

using namespace flmd;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& text) {
  const auto p = fs::temp_directory_path() / name;
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST(Toml, ScalarsAndTables) {
  const auto j = config::parse_toml(R"(
# comment
name = "desk"   # trailing comment
seed = 7
neg = -3
lr = 1e-3
big = 1_000
on = true
off = false
"quoted key" = "a\"b\\c\n"

[stage1]
z_dim = 16

[a.b]
c = 2.5
)");
  EXPECT_EQ(j.at("name"), "desk");
  EXPECT_EQ(j.at("seed"), 7);
  EXPECT_TRUE(j.at("seed").is_number_integer());
  EXPECT_EQ(j.at("neg"), -3);
  EXPECT_DOUBLE_EQ(j.at("lr").get<double>(), 1e-3);
  EXPECT_EQ(j.at("big"), 1000);
  EXPECT_EQ(j.at("on"), true);
  EXPECT_EQ(j.at("off"), false);
  EXPECT_EQ(j.at("quoted key"), "a\"b\\c\n");
  EXPECT_EQ(j.at("stage1").at("z_dim"), 16);
  EXPECT_DOUBLE_EQ(j.at("a").at("b").at("c").get<double>(), 2.5);
}

TEST(Toml, ArraysSpanLinesAndNest) {
  const auto j = config::parse_toml("ratios = [\n  [1, 1],\n  [1, 2],  # two\n  [1, 4],\n]\nz = [4, 8]\n");
  EXPECT_EQ(j.at("ratios"), json::parse("[[1,1],[1,2],[1,4]]"));
  EXPECT_EQ(j.at("z"), json::parse("[4,8]"));
}

TEST(Toml, SpecialFloats) {
  const auto j = config::parse_toml("a = inf\nb = -inf\nc = nan\n");
  EXPECT_TRUE(std::isinf(j.at("a").get<double>()));
  EXPECT_LT(j.at("b").get<double>(), 0.0);
  EXPECT_TRUE(std::isnan(j.at("c").get<double>()));
}

TEST(Toml, RejectsUnsupportedOrMalformed) {
  for (const char* bad : {"a = {x = 1}", "a = 'lit'", "a = \"\"\"m\"\"\"", "a = ", "= 1",
                          "a = 1\na = 2", "[t]\n[t]", "a = [1, 2", "a = \"open", "a = 1 2",
                          "[unterminated", "a = 1979-05-27"}) {
    EXPECT_THROW(config::parse_toml(bad), ConfigError) << bad;
  }
}

TEST(Toml, ErrorsCarryLineNumbers) {
  try {
    config::parse_toml("a = 1\nb = 2\nc = {}\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos) << e.what();
  }
}

TEST(Document, JsonOrTomlByContent) {
  const auto t = write_temp("flmd_cfg.toml", "x = 1\n");
  const auto j = write_temp("flmd_cfg.json", "{\"x\": 1}");
  const auto sniff = write_temp("flmd_cfg.conf", "  {\"x\": 1}");
  EXPECT_EQ(config::load_document(t).at("x"), 1);
  EXPECT_EQ(config::load_document(j).at("x"), 1);
  EXPECT_EQ(config::load_document(sniff).at("x"), 1);
  EXPECT_THROW(config::load_document(write_temp("flmd_bad.json", "{")), ConfigError);
  EXPECT_THROW(config::load_document(fs::temp_directory_path() / "flmd_missing.toml"), IoError);
}

TEST(ExperimentConfig, LoadsShippedConfigs) {
  for (const char* name : {"desk.toml", "acceptance.toml"}) {
    const auto cfg = exp::load_experiment_config(fs::path(FLMD_SOURCE_DIR) / "configs" / name);
    EXPECT_NO_THROW(cfg.validate()) << name;
    EXPECT_EQ(cfg.scm.F, 16u);
    EXPECT_EQ(cfg.z_dims, (std::vector<std::size_t>{4, 8, 16, 32}));
  }
}

TEST(ExperimentConfig, JsonRoundTrip) {
  exp::ExperimentConfig c;
  c.master_seed = 99;
  c.stage1.z_dim = 8;
  c.stage2.lambda = 0.5;
  c.proportions = {0.5, 1.0};
  c.synth = scm::SynthesisParams::identity(c.scm.F);
  const auto j = c.to_json();
  EXPECT_EQ(exp::ExperimentConfig::from_json(j).to_json(), j);
}

TEST(ExperimentConfig, RejectsBadValues) {
  const auto base = exp::ExperimentConfig{}.to_json();
  const auto expect_bad = [&](const json& patch) {
    json j = base;
    j.merge_patch(patch);
    EXPECT_THROW(exp::ExperimentConfig::from_json(j), ConfigError) << patch.dump();
  };
  expect_bad({{"unknown_key", 1}});
  expect_bad({{"split", {0.5, 0.5, 0.5}}});
  expect_bad({{"seeds", 0}});
  expect_bad({{"eval_attribute", "age"}});
  expect_bad({{"stage1", {{"z_dim", 0}}}});
  expect_bad({{"stage2", {{"n_heads", 5}}}});
  expect_bad({{"scm", {{"encounter_min", 0}}}});
  expect_bad({{"sweep", {{"proportions", {1.5}}}}});
}

TEST(ExperimentConfig, RelativeDataDirResolvesAgainstConfig) {
  const auto dir = fs::temp_directory_path() / "flmd_cfgdir";
  fs::create_directories(dir);
  std::ofstream(dir / "c.toml") << "data_dir = \"gen\"\nout_dir = \"out\"\n";
  const auto cfg = exp::load_experiment_config(dir / "c.toml");
  ASSERT_TRUE(cfg.data_dir.has_value());
  EXPECT_EQ(fs::weakly_canonical(*cfg.data_dir), fs::weakly_canonical(dir / "gen"));
  EXPECT_EQ(fs::weakly_canonical(cfg.out_dir), fs::weakly_canonical(dir / "out"));
}
