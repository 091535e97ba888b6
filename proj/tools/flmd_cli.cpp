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

// flmd: generate synthetic records, run the two-stage pipeline and the
// sweep experiments, aggregate reports.
//
// Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "flmd/error.hpp"
#include "flmd/experiments.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> jobs;
};

void add_common(CLI::App* cmd, Common& c, bool needs_config) {
  auto* opt = cmd->add_option("--config", c.config, "experiment config (TOML or JSON)");
  if (needs_config) opt->required();
  cmd->add_option("--seed", c.seed, "master seed (overrides the config)");
  cmd->add_option("--out", c.out, "output directory (overrides the config)");
  cmd->add_option("--jobs", c.jobs, "parallel sweep workers")->check(CLI::PositiveNumber);
}

flmd::exp::ExperimentConfig resolve(const Common& c) {
  flmd::exp::ExperimentConfig cfg;
  if (!c.config.empty()) {
    try {
      cfg = flmd::exp::load_experiment_config(c.config);
    } catch (const flmd::IoError& e) {
      throw flmd::ConfigError(e.what());  // an unreadable config is a config problem
    }
  }
  if (c.seed) cfg.master_seed = *c.seed;
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (c.jobs) cfg.jobs = *c.jobs;
  cfg.validate();
  return cfg;
}

void print_rows(const std::vector<flmd::exp::ReportRow>& rows) {
  for (const auto& r : rows) std::cout << flmd::exp::row_to_csv(r) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage fair longitudinal prediction: data, training and experiments"};
  app.require_subcommand(1);
  Common common;

  auto* generate = app.add_subcommand("generate", "write a synthetic dataset and its ground truth");
  add_common(generate, common, false);
  auto* pipeline = app.add_subcommand("pipeline", "train both stages and evaluate on the test split");
  add_common(pipeline, common, true);
  auto* disturb = app.add_subcommand("q2-disturb", "sweep the proportion of undisturbed demographics");
  add_common(disturb, common, true);
  auto* imbalance = app.add_subcommand("q2-imbalance", "sweep the group ratio of the training split");
  add_common(imbalance, common, true);
  auto* q3 = app.add_subcommand("q3-sweep", "sweep the latent width on semi-synthetic data");
  add_common(q3, common, true);
  auto* report = app.add_subcommand("report", "aggregate rows.csv files into summary.csv and plotdata.json");
  add_common(report, common, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*report) {
      const std::string dir = !common.out.empty() ? common.out : resolve(common).out_dir.string();
      for (const auto& s : flmd::exp::cmd_report(dir)) {
        std::cout << s.experiment << ',' << s.sweep << ',' << s.metric << ',' << s.mean << ','
                  << s.std << ',' << s.n << '\n';
      }
      return 0;
    }
    const auto cfg = resolve(common);
    if (*generate) {
      flmd::exp::cmd_generate(cfg, cfg.out_dir);
      std::cout << "wrote " << cfg.scm.num_patients << " patients to " << cfg.out_dir.string() << '\n';
    } else if (*pipeline) {
      std::cout << flmd::exp::cmd_pipeline(cfg).to_json().dump(2) << '\n';
    } else if (*disturb) {
      print_rows(flmd::exp::cmd_q2_disturb(cfg));
    } else if (*imbalance) {
      print_rows(flmd::exp::cmd_q2_imbalance(cfg));
    } else if (*q3) {
      print_rows(flmd::exp::cmd_q3_sweep(cfg));
    }
    return 0;
  } catch (const flmd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
