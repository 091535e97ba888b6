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

#ifndef FLMD_EXPERIMENTS_HPP
#define FLMD_EXPERIMENTS_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "flmd/ehr_data.hpp"
#include "flmd/metrics.hpp"
#include "flmd/stage1.hpp"
#include "flmd/stage2.hpp"
#include "flmd/synth_scm.hpp"

namespace flmd::exp {

struct ExperimentConfig {
  scm::ScmConfig scm;
  std::optional<scm::SynthesisParams> synth;  // defaults(F) when unset
  stage1::Stage1Config stage1;
  stage2::Stage2Config stage2;

  // Existing `generate` output to use instead of synthesizing in memory.
  std::optional<std::filesystem::path> data_dir;
  std::array<double, 3> split = {0.7, 0.2, 0.1};  // train, val, test
  std::string eval_attribute = "race";
  std::vector<std::string> disturb_fields = {"race", "gender", "insurance"};

  std::vector<double> proportions = {0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<std::pair<double, double>> ratios = {{1, 1}, {1, 2}, {1, 4}};
  std::vector<std::size_t> z_dims = {4, 8, 16, 32};
  std::size_t seeds = 3;  // runs per sweep point

  std::uint64_t master_seed = 0;
  std::filesystem::path out_dir = "out";
  // Sweeps write checkpoints per run only when set; pipeline always does.
  bool sweep_checkpoints = false;
  std::size_t jobs = 1;

  // Throws ConfigError.
  void validate() const;
  scm::SynthesisParams synthesis() const;
  nlohmann::json to_json() const;
  // Relative paths resolve against `base_dir`.
  static ExperimentConfig from_json(const nlohmann::json& j,
                                    const std::filesystem::path& base_dir = {});
};

scm::ScmConfig scm_from_json(const nlohmann::json& j);
nlohmann::json scm_to_json(const scm::ScmConfig& c);
scm::SynthesisParams synth_from_json(const nlohmann::json& j, std::size_t F);
nlohmann::json synth_to_json(const scm::SynthesisParams& p);

// Reads a TOML or JSON experiment config.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct ReportRow {
  std::string experiment;
  std::string sweep;
  std::size_t seed = 0;
  double auc = 0.0;
  double auc_g1 = 0.0;
  double auc_g2 = 0.0;
  double hd = 0.0;
  double cf_gap = 0.0;
  std::optional<double> probe_auc;
  std::string test_hash;
  double seconds = 0.0;  // wall clock; kept out of the deterministic tables
};

std::string rows_csv_header();
std::string row_to_csv(const ReportRow& r);
ReportRow row_from_csv(const std::string& line);

struct Splits {
  data::Dataset train, val, test;
};

Splits make_splits(const data::Dataset& ds, const ExperimentConfig& cfg);

struct RunOutput {
  metrics::FairnessReport report;
  stage1::Stage1Result stage1;
  stage2::Stage2Result stage2;
  stage1::LatentTrace trace;
  std::vector<metrics::Prediction> test_predictions;
};

// Derived per-run seed for run index k under the master seed.
std::uint64_t run_seed(std::uint64_t master, std::size_t k);

// normalize (train statistics) -> Stage 1 -> latents -> Stage 2 -> test
// evaluation. Errors are rethrown with the failing stage in the message.
RunOutput run_two_stage(const Splits& raw, const ExperimentConfig& cfg, std::uint64_t seed);

// Same, but reusing an already trained Stage-1 model.
RunOutput run_stage2_only(const Splits& normalized, const stage1::Stage1Result& s1,
                          const stage1::LatentTrace& trace, const ExperimentConfig& cfg,
                          std::uint64_t seed);

// Loads `data_dir` or synthesizes from the SCM config.
std::pair<data::Dataset, scm::GroundTruth> obtain_data(const ExperimentConfig& cfg);

void cmd_generate(const ExperimentConfig& cfg, const std::filesystem::path& out);
metrics::FairnessReport cmd_pipeline(const ExperimentConfig& cfg);
std::vector<ReportRow> cmd_q2_disturb(const ExperimentConfig& cfg);
std::vector<ReportRow> cmd_q2_imbalance(const ExperimentConfig& cfg);
std::vector<ReportRow> cmd_q3_sweep(const ExperimentConfig& cfg);

struct SummaryRow {
  std::string experiment, sweep, metric;
  double mean = 0.0, std = 0.0;
  std::size_t n = 0;
};

// Mean and sample std (n - 1 denominator, 0 for a single value) per
// (experiment, sweep, metric), in order of first appearance.
std::vector<SummaryRow> summarize(const std::vector<ReportRow>& rows);

// Collects every rows.csv below dir, writes dir/summary.csv and
// dir/plotdata.json. Throws DataError when no rows are found.
std::vector<SummaryRow> cmd_report(const std::filesystem::path& dir);

}  // namespace flmd::exp

#endif  // FLMD_EXPERIMENTS_HPP
