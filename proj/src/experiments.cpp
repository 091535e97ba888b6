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

#include "flmd/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "flmd/config.hpp"
#include "flmd/diffkernel/checkpoint.hpp"
#include "flmd/error.hpp"

namespace flmd::exp {

namespace fs = std::filesystem;
using data::Dataset;
using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a table");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

Dataset concat(const std::vector<const Dataset*>& parts) {
  Dataset out;
  out.schema = parts.front()->schema;
  for (const auto* p : parts) {
    out.patients.insert(out.patients.end(), p->patients.begin(), p->patients.end());
  }
  return out;
}

// Runs fn, relabelling library errors with the pipeline stage.
template <typename Fn>
auto staged(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConfigError& ex) {
    throw ConfigError(stage + ": " + ex.what());
  } catch (const Error& ex) {
    throw Error(stage + ": " + ex.what());
  }
}

// Executes tasks on `jobs` threads; results keep task order.
std::vector<ReportRow> run_tasks(const std::vector<std::function<ReportRow()>>& tasks,
                                 std::size_t jobs) {
  std::vector<ReportRow> rows(tasks.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  const auto worker = [&] {
    while (true) {
      const std::size_t i = next++;
      if (i >= tasks.size()) return;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (failure) return;
      }
      try {
        const auto start = std::chrono::steady_clock::now();
        rows[i] = tasks[i]();
        rows[i].seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, tasks.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < n; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return rows;
}

void write_rows(const fs::path& dir, const std::vector<ReportRow>& rows) {
  std::string table = rows_csv_header() + "\n";
  std::string timing = "experiment,sweep,seed,seconds\n";
  for (const auto& r : rows) {
    table += row_to_csv(r) + "\n";
    timing += r.experiment + "," + r.sweep + "," + std::to_string(r.seed) + "," + fmt(r.seconds) + "\n";
  }
  write_text(dir / "rows.csv", table);
  write_text(dir / "timing.csv", timing);
}

ReportRow make_row(const std::string& experiment, const std::string& sweep, std::size_t seed,
                   const metrics::FairnessReport& rep, const std::string& test_hash) {
  ReportRow r;
  r.experiment = experiment;
  r.sweep = sweep;
  r.seed = seed;
  r.auc = rep.auc_overall;
  r.auc_g1 = rep.auc_g1;
  r.auc_g2 = rep.auc_g2;
  r.hd = rep.hd_binary;
  r.cf_gap = rep.cf_gap;
  r.test_hash = test_hash;
  return r;
}

json history_json(const RunOutput& out) {
  json s1 = json::array();
  for (const auto& e : out.stage1.history.epochs) {
    s1.push_back({{"loss", e.loss}, {"kl", e.kl}, {"nll", e.nll}, {"mse", e.mse}, {"steps", e.steps}});
  }
  json s2 = json::array();
  for (const auto& e : out.stage2.history.epochs) {
    s2.push_back({{"loss", e.loss},
                  {"factual", e.factual},
                  {"counterfactual", e.counterfactual},
                  {"val_auc", std::isnan(e.val_auc) ? json(nullptr) : json(e.val_auc)},
                  {"steps", e.steps}});
  }
  return {{"stage1", {{"initial_mse", out.stage1.history.initial_mse}, {"epochs", s1}}},
          {"stage2", {{"best_epoch", out.stage2.history.best_epoch}, {"epochs", s2}}}};
}

void save_run(const fs::path& dir, const RunOutput& out, const ExperimentConfig& cfg,
              bool checkpoints) {
  fs::create_directories(dir);
  write_text(dir / "report.json", out.report.to_json().dump(2) + "\n");
  write_text(dir / "history.json", history_json(out).dump(2) + "\n");
  if (!checkpoints) return;
  dk::Checkpoint c1{out.stage1.model.params, std::nullopt,
                    {{"stage", 1}, {"config", out.stage1.model.cfg.to_json()},
                     {"F", out.stage1.model.F}, {"d_dim", out.stage1.model.d_dim}}};
  dk::save_checkpoint(c1, dir / "stage1.ckpt.json");
  dk::Checkpoint c2{out.stage2.model.params, std::nullopt,
                    {{"stage", 2}, {"config", out.stage2.model.cfg.to_json()},
                     {"d_dim", out.stage2.model.d_dim}, {"z_dim", out.stage2.model.z_dim},
                     {"F", out.stage2.model.F}}};
  dk::save_checkpoint(c2, dir / "stage2.ckpt.json");
  stage1::save_latents(out.trace, dir / "latents.jsonl");
  stage2::save_predictions_csv(out.test_predictions, dir / "predictions_test.csv");
  write_text(dir / "config.json", cfg.to_json().dump(2) + "\n");
}

std::string run_dir_name(const std::string& sweep, std::size_t seed) {
  std::string s = sweep;
  for (auto& c : s) {
    if (c == ':' || c == '/') c = '_';
  }
  return s + "_s" + std::to_string(seed);
}

}  // namespace

// ---------------------------------------------------------------- config

scm::ScmConfig scm_from_json(const json& j) {
  reject_unknown(j, {"num_patients", "F", "z_true_dim", "h_true_dim", "encounter_min",
                     "encounter_max", "confounder_strength", "demographic_effect",
                     "feature_noise", "group_rate", "sensitive_names", "observe_f_depe", "seed"},
                 "[scm]");
  scm::ScmConfig c;
  try {
    c.num_patients = j.value("num_patients", c.num_patients);
    c.F = j.value("F", c.F);
    c.z_true_dim = j.value("z_true_dim", c.z_true_dim);
    c.h_true_dim = j.value("h_true_dim", c.h_true_dim);
    c.encounter_min = j.value("encounter_min", c.encounter_min);
    c.encounter_max = j.value("encounter_max", c.encounter_max);
    c.confounder_strength = j.value("confounder_strength", c.confounder_strength);
    c.demographic_effect = j.value("demographic_effect", c.demographic_effect);
    c.feature_noise = j.value("feature_noise", c.feature_noise);
    c.group_rate = j.value("group_rate", c.group_rate);
    c.sensitive_names = j.value("sensitive_names", c.sensitive_names);
    c.observe_f_depe = j.value("observe_f_depe", c.observe_f_depe);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("[scm]: ") + ex.what());
  }
  c.validate();
  return c;
}

json scm_to_json(const scm::ScmConfig& c) {
  return {{"num_patients", c.num_patients},
          {"F", c.F},
          {"z_true_dim", c.z_true_dim},
          {"h_true_dim", c.h_true_dim},
          {"encounter_min", c.encounter_min},
          {"encounter_max", c.encounter_max},
          {"confounder_strength", c.confounder_strength},
          {"demographic_effect", c.demographic_effect},
          {"feature_noise", c.feature_noise},
          {"group_rate", c.group_rate},
          {"sensitive_names", c.sensitive_names},
          {"observe_f_depe", c.observe_f_depe},
          {"seed", c.seed}};
}

scm::SynthesisParams synth_from_json(const json& j, std::size_t F) {
  reject_unknown(j, {"m1", "m2", "b1", "b2", "m3", "m4", "b3", "b4", "label_seed"}, "[synth]");
  auto p = scm::SynthesisParams::defaults(F);
  try {
    // Per-feature entries take a scalar (broadcast) or a length-F array.
    const auto vec = [&](const char* key, std::vector<double>& dst) {
      if (!j.contains(key)) return;
      if (j.at(key).is_number()) dst.assign(F, j.at(key).get<double>());
      else dst = j.at(key).get<std::vector<double>>();
    };
    vec("m1", p.m1);
    vec("m2", p.m2);
    vec("b1", p.b1);
    vec("b2", p.b2);
    p.m3 = j.value("m3", p.m3);
    p.m4 = j.value("m4", p.m4);
    p.b3 = j.value("b3", p.b3);
    p.b4 = j.value("b4", p.b4);
    p.label_seed = j.value("label_seed", p.label_seed);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("[synth]: ") + ex.what());
  }
  p.validate(F);
  return p;
}

json synth_to_json(const scm::SynthesisParams& p) {
  return {{"m1", p.m1}, {"m2", p.m2}, {"b1", p.b1}, {"b2", p.b2}, {"m3", p.m3},
          {"m4", p.m4}, {"b3", p.b3}, {"b4", p.b4}, {"label_seed", p.label_seed}};
}

void ExperimentConfig::validate() const {
  scm.validate();
  stage1.validate();
  stage2.validate();
  if (synth) synth->validate(scm.F);
  double total = 0.0;
  for (double r : split) {
    if (!(r >= 0.0)) throw ConfigError("split ratios must be nonnegative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  if (split[0] <= 0.0) throw ConfigError("split needs a nonempty training part");
  if (proportions.empty() || ratios.empty() || z_dims.empty()) {
    throw ConfigError("sweep lists must be nonempty");
  }
  for (double p : proportions) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("sweep proportions must lie in [0, 1]");
  }
  for (const auto& [a, b] : ratios) {
    if (!(a >= 0.0 && b >= 0.0 && a + b > 0.0)) throw ConfigError("sweep ratios must be nonnegative pairs");
  }
  for (auto z : z_dims) {
    if (z == 0) throw ConfigError("sweep z_dims must be >= 1");
  }
  if (seeds == 0) throw ConfigError("seeds must be >= 1");
  if (jobs == 0) throw ConfigError("jobs must be >= 1");
  const auto known = [&](const std::string& f) {
    return std::find(scm.sensitive_names.begin(), scm.sensitive_names.end(), f) !=
           scm.sensitive_names.end();
  };
  if (!data_dir && !known(eval_attribute)) {
    throw ConfigError("eval_attribute '" + eval_attribute + "' is not a sensitive attribute");
  }
  for (const auto& f : stage2.sensitive_fields) {
    if (!data_dir && !known(f)) throw ConfigError("stage2.sensitive_fields: unknown '" + f + "'");
  }
  for (const auto& f : disturb_fields) {
    if (!data_dir && !known(f)) throw ConfigError("disturb_fields: unknown '" + f + "'");
  }
}

scm::SynthesisParams ExperimentConfig::synthesis() const {
  return synth ? *synth : scm::SynthesisParams::defaults(scm.F);
}

json ExperimentConfig::to_json() const {
  json ratios_j = json::array();
  for (const auto& [a, b] : ratios) ratios_j.push_back({a, b});
  json j = {{"master_seed", master_seed},
            {"out_dir", out_dir.string()},
            {"split", split},
            {"eval_attribute", eval_attribute},
            {"seeds", seeds},
            {"jobs", jobs},
            {"sweep_checkpoints", sweep_checkpoints},
            {"sweep",
             {{"proportions", proportions},
              {"ratios", ratios_j},
              {"z_dims", z_dims},
              {"disturb_fields", disturb_fields}}},
            {"scm", scm_to_json(scm)},
            {"synth", synth_to_json(synthesis())},
            {"stage1", stage1.to_json()},
            {"stage2", stage2.to_json()}};
  if (data_dir) j["data_dir"] = data_dir->string();
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base_dir) {
  reject_unknown(j, {"master_seed", "out_dir", "data_dir", "split", "eval_attribute", "seeds",
                     "jobs", "sweep_checkpoints", "sweep", "scm", "synth", "stage1", "stage2"},
                 "config");
  ExperimentConfig c;
  const auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  try {
    c.master_seed = j.value("master_seed", c.master_seed);
    if (j.contains("out_dir")) c.out_dir = resolve(j.at("out_dir").get<std::string>());
    if (j.contains("data_dir")) c.data_dir = resolve(j.at("data_dir").get<std::string>());
    if (j.contains("split")) {
      const auto v = j.at("split").get<std::vector<double>>();
      if (v.size() != 3) throw ConfigError("split needs three ratios (train, val, test)");
      c.split = {v[0], v[1], v[2]};
    }
    c.eval_attribute = j.value("eval_attribute", c.eval_attribute);
    c.seeds = j.value("seeds", c.seeds);
    c.jobs = j.value("jobs", c.jobs);
    c.sweep_checkpoints = j.value("sweep_checkpoints", c.sweep_checkpoints);
    if (j.contains("sweep")) {
      const json& s = j.at("sweep");
      reject_unknown(s, {"proportions", "ratios", "z_dims", "disturb_fields"}, "[sweep]");
      c.proportions = s.value("proportions", c.proportions);
      c.z_dims = s.value("z_dims", c.z_dims);
      c.disturb_fields = s.value("disturb_fields", c.disturb_fields);
      if (s.contains("ratios")) {
        c.ratios.clear();
        for (const auto& r : s.at("ratios")) {
          const auto v = r.get<std::vector<double>>();
          if (v.size() != 2) throw ConfigError("each sweep ratio is a pair [a, b]");
          c.ratios.emplace_back(v[0], v[1]);
        }
      }
    }
    if (j.contains("scm")) c.scm = scm_from_json(j.at("scm"));
    if (j.contains("synth")) c.synth = synth_from_json(j.at("synth"), c.scm.F);
    if (j.contains("stage1")) {
      reject_unknown(j.at("stage1"),
                     {"z_dim", "h_dim", "phi_hidden", "chi_hidden", "L", "lr", "weight_decay",
                      "epochs", "batch_size", "seed", "feature_likelihoods", "whole_dataset",
                      "track_mse"},
                     "[stage1]");
      c.stage1 = stage1::Stage1Config::from_json(j.at("stage1"));
    }
    if (j.contains("stage2")) {
      reject_unknown(j.at("stage2"),
                     {"lambda", "weight_decay", "lr", "d_model", "n_heads", "n_layers", "epochs",
                      "batch_size", "seed", "sensitive_fields", "flip_mode"},
                     "[stage2]");
      c.stage2 = stage2::Stage2Config::from_json(j.at("stage2"));
    }
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  return ExperimentConfig::from_json(config::load_document(path), path.parent_path());
}

// ---------------------------------------------------------------- rows

std::string rows_csv_header() {
  return "experiment,sweep,seed,auc,auc_g1,auc_g2,hd,cf_gap,probe_auc,test_hash";
}

std::string row_to_csv(const ReportRow& r) {
  return r.experiment + "," + r.sweep + "," + std::to_string(r.seed) + "," + fmt(r.auc) + "," +
         fmt(r.auc_g1) + "," + fmt(r.auc_g2) + "," + fmt(r.hd) + "," + fmt(r.cf_gap) + "," +
         (r.probe_auc ? fmt(*r.probe_auc) : std::string()) + "," + r.test_hash;
}

ReportRow row_from_csv(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) f.push_back(cell);
  if (!line.empty() && line.back() == ',') f.emplace_back();
  if (f.size() != 10) throw ParseError("report row needs 10 fields: '" + line + "'");
  const auto num = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw ParseError("bad number '" + s + "'");
      return v;
    } catch (const std::logic_error&) {
      throw ParseError("bad number '" + s + "' in report row");
    }
  };
  ReportRow r;
  r.experiment = f[0];
  r.sweep = f[1];
  r.seed = static_cast<std::size_t>(num(f[2]));
  r.auc = num(f[3]);
  r.auc_g1 = num(f[4]);
  r.auc_g2 = num(f[5]);
  r.hd = num(f[6]);
  r.cf_gap = num(f[7]);
  if (!f[8].empty()) r.probe_auc = num(f[8]);
  r.test_hash = f[9];
  return r;
}

// ---------------------------------------------------------------- runs

std::uint64_t run_seed(std::uint64_t master, std::size_t k) { return derive_seed(master, 0x72756e00 + k); }

Splits make_splits(const Dataset& ds, const ExperimentConfig& cfg) {
  auto [train, val, test] = data::split_dataset(ds, cfg.split, cfg.master_seed);
  return {std::move(train), std::move(val), std::move(test)};
}

RunOutput run_two_stage(const Splits& raw, const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto stats = staged("normalize", [&] { return data::fit_normalizer(raw.train); });
  const Splits norm{data::apply_normalizer(raw.train, stats), data::apply_normalizer(raw.val, stats),
                    data::apply_normalizer(raw.test, stats)};
  const Dataset all = concat({&norm.train, &norm.val, &norm.test});

  stage1::Stage1Config s1cfg = cfg.stage1;
  s1cfg.seed = derive_seed(derive_seed(seed, 1), cfg.stage1.seed);
  auto s1 = staged("stage1", [&] {
    return stage1::train_stage1(s1cfg.whole_dataset ? all : norm.train, s1cfg);
  });
  auto trace = staged("latents", [&] { return stage1::extract_latents(all, s1.model); });
  return run_stage2_only(norm, s1, trace, cfg, seed);
}

RunOutput run_stage2_only(const Splits& norm, const stage1::Stage1Result& s1,
                          const stage1::LatentTrace& trace, const ExperimentConfig& cfg,
                          std::uint64_t seed) {
  stage2::Stage2Config s2cfg = cfg.stage2;
  s2cfg.seed = derive_seed(derive_seed(seed, 2), cfg.stage2.seed);
  auto s2 = staged("stage2", [&] { return stage2::train_stage2(norm.train, norm.val, trace, s2cfg); });
  RunOutput out{{}, s1, std::move(s2), trace, {}};
  staged("evaluate", [&] {
    out.test_predictions = stage2::predict_dataset(out.stage2.model, norm.test, trace);
    out.report = metrics::evaluate_binary(out.test_predictions, norm.test.schema, cfg.eval_attribute);
    out.report.cf_gap = stage2::cf_gap(out.stage2.model, norm.test, trace);
    return 0;
  });
  return out;
}

std::pair<Dataset, scm::GroundTruth> obtain_data(const ExperimentConfig& cfg) {
  if (!cfg.data_dir) return scm::generate_scm_dataset(cfg.scm);
  const fs::path dir = *cfg.data_dir;
  const auto schema = data::load_schema(dir / "schema.json");
  Dataset ds = data::load_dataset(dir / "dataset.jsonl", schema);
  scm::GroundTruth gt;
  if (fs::exists(dir / "ground_truth.jsonl")) {
    gt = scm::load_ground_truth(dir / "ground_truth.jsonl");
    scm::check_alignment(ds, gt);
  }
  return {std::move(ds), std::move(gt)};
}

// ---------------------------------------------------------------- commands

void cmd_generate(const ExperimentConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  const auto [ds, gt] = scm::generate_scm_dataset(cfg.scm);
  data::save_schema(ds.schema, out / "schema.json");
  data::save_dataset(ds, out / "dataset.jsonl");
  scm::save_ground_truth(gt, out / "ground_truth.jsonl");
}

metrics::FairnessReport cmd_pipeline(const ExperimentConfig& cfg) {
  const auto [ds, gt] = obtain_data(cfg);
  const Splits raw = make_splits(ds, cfg);
  const auto start = std::chrono::steady_clock::now();
  const RunOutput out = run_two_stage(raw, cfg, run_seed(cfg.master_seed, 0));
  fs::create_directories(cfg.out_dir);
  save_run(cfg.out_dir, out, cfg, true);
  write_text(cfg.out_dir / "split.json",
             json{{"train", data::content_hash(raw.train)},
                  {"val", data::content_hash(raw.val)},
                  {"test", data::content_hash(raw.test)}}
                     .dump(2) + "\n");
  ReportRow row = make_row("pipeline", "base", 0, out.report, data::content_hash(raw.test));
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_rows(cfg.out_dir, {row});
  cmd_report(cfg.out_dir);
  return out.report;
}

std::vector<ReportRow> cmd_q2_disturb(const ExperimentConfig& cfg) {
  const auto [ds, gt] = obtain_data(cfg);
  const Splits base = make_splits(ds, cfg);
  const std::string test_hash = data::content_hash(base.test);
  const Dataset train_dist = scm::disturb_demographics(base.train, cfg.disturb_fields,
                                                       derive_seed(cfg.master_seed, 0xd1));
  const Dataset val_dist = scm::disturb_demographics(base.val, cfg.disturb_fields,
                                                     derive_seed(cfg.master_seed, 0xd2));
  std::vector<std::function<ReportRow()>> tasks;
  for (double p : cfg.proportions) {
    for (std::size_t k = 0; k < cfg.seeds; ++k) {
      tasks.push_back([&, p, k] {
        const Splits mixed{scm::mix_training(base.train, train_dist, p, derive_seed(cfg.master_seed, 0xe1)),
                           scm::mix_training(base.val, val_dist, p, derive_seed(cfg.master_seed, 0xe2)),
                           base.test};
        const auto out = run_two_stage(mixed, cfg, run_seed(cfg.master_seed, k));
        const std::string sweep = fmt_short(p);
        save_run(cfg.out_dir / "runs" / run_dir_name(sweep, k), out, cfg, cfg.sweep_checkpoints);
        return make_row("q2_disturb", sweep, k, out.report, test_hash);
      });
    }
  }
  fs::create_directories(cfg.out_dir);
  const auto rows = run_tasks(tasks, cfg.jobs);
  write_rows(cfg.out_dir, rows);
  cmd_report(cfg.out_dir);
  return rows;
}

std::vector<ReportRow> cmd_q2_imbalance(const ExperimentConfig& cfg) {
  const auto [ds, gt] = obtain_data(cfg);
  const Splits base = make_splits(ds, cfg);
  const std::string test_hash = data::content_hash(base.test);
  std::vector<std::function<ReportRow()>> tasks;
  for (const auto& [a, b] : cfg.ratios) {
    for (std::size_t k = 0; k < cfg.seeds; ++k) {
      tasks.push_back([&, a, b, k] {
        const Splits re{scm::rebalance_by_attribute(base.train, cfg.eval_attribute, a, b,
                                                    base.train.size(),
                                                    derive_seed(cfg.master_seed, 0xba1)),
                        base.val, base.test};
        const auto out = run_two_stage(re, cfg, run_seed(cfg.master_seed, k));
        const std::string sweep = fmt_short(a) + ":" + fmt_short(b);
        save_run(cfg.out_dir / "runs" / run_dir_name(sweep, k), out, cfg, cfg.sweep_checkpoints);
        return make_row("q2_imbalance", sweep, k, out.report, test_hash);
      });
    }
  }
  fs::create_directories(cfg.out_dir);
  const auto rows = run_tasks(tasks, cfg.jobs);
  write_rows(cfg.out_dir, rows);
  cmd_report(cfg.out_dir);
  return rows;
}

std::vector<ReportRow> cmd_q3_sweep(const ExperimentConfig& cfg) {
  const auto [ds, gt] = obtain_data(cfg);
  if (gt.patients.empty()) throw DataError("q3-sweep needs ground truth (ground_truth.jsonl)");
  Dataset semi = scm::apply_semisynthetic(ds, gt, cfg.synthesis());
  const auto& extra = semi.schema.extra_names;
  if (std::find(extra.begin(), extra.end(), scm::kFinancialDependency) != extra.end()) {
    semi = scm::hide_confounder(semi, scm::kFinancialDependency);
  }
  const Splits base = make_splits(semi, cfg);
  const std::string test_hash = data::content_hash(base.test);
  std::vector<std::function<ReportRow()>> tasks;
  for (std::size_t z : cfg.z_dims) {
    for (std::size_t k = 0; k < cfg.seeds; ++k) {
      tasks.push_back([&, z, k] {
        ExperimentConfig local = cfg;
        local.stage1.z_dim = z;
        const std::uint64_t seed = run_seed(cfg.master_seed, k);
        const auto out = run_two_stage(base, local, seed);
        ReportRow row = make_row("q3", std::to_string(z), k, out.report, test_hash);
        row.probe_auc = staged("probe", [&] {
          return stage1::probe_confounder(out.trace, gt, derive_seed(seed, 3));
        });
        save_run(cfg.out_dir / "runs" / run_dir_name(row.sweep, k), out, local,
                 cfg.sweep_checkpoints);
        return row;
      });
    }
  }
  fs::create_directories(cfg.out_dir);
  const auto rows = run_tasks(tasks, cfg.jobs);
  write_rows(cfg.out_dir, rows);
  cmd_report(cfg.out_dir);
  return rows;
}

// ---------------------------------------------------------------- report

std::vector<SummaryRow> summarize(const std::vector<ReportRow>& rows) {
  using Key = std::tuple<std::string, std::string, std::string>;
  std::vector<Key> order;
  std::map<Key, std::vector<double>> values;
  const auto put = [&](const ReportRow& r, const std::string& metric, double v) {
    Key key{r.experiment, r.sweep, metric};
    auto [it, fresh] = values.try_emplace(key);
    if (fresh) order.push_back(key);
    it->second.push_back(v);
  };
  for (const auto& r : rows) {
    put(r, "auc", r.auc);
    put(r, "auc_g1", r.auc_g1);
    put(r, "auc_g2", r.auc_g2);
    put(r, "hd", r.hd);
    put(r, "cf_gap", r.cf_gap);
    if (r.probe_auc) put(r, "probe_auc", *r.probe_auc);
  }
  std::vector<SummaryRow> out;
  for (const auto& key : order) {
    const auto& v = values.at(key);
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), mean, sd, v.size()});
  }
  return out;
}

std::vector<SummaryRow> cmd_report(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("report directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() == "rows.csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<ReportRow> rows;
  for (const auto& f : files) {
    std::ifstream in(f);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
      if (header) {
        if (line != rows_csv_header()) throw ParseError(f.string() + ": unexpected header");
        header = false;
        continue;
      }
      if (!line.empty()) rows.push_back(row_from_csv(line));
    }
  }
  if (rows.empty()) throw DataError("no report rows found under " + dir.string());

  const auto summary = summarize(rows);
  std::string csv = "experiment,sweep,metric,mean,std,n\n";
  for (const auto& s : summary) {
    csv += s.experiment + "," + s.sweep + "," + s.metric + "," + fmt(s.mean) + "," + fmt(s.std) +
           "," + std::to_string(s.n) + "\n";
  }
  write_text(dir / "summary.csv", csv);

  // plotdata: per experiment, the sweep axis and one mean/std series per metric.
  json plot = json::object();
  for (const auto& s : summary) {
    json& e = plot[s.experiment];
    if (e.is_null()) e = {{"sweep", json::array()}, {"x", json::array()}, {"metrics", json::object()}};
    auto& sweeps = e["sweep"];
    if (std::find(sweeps.begin(), sweeps.end(), json(s.sweep)) == sweeps.end()) {
      sweeps.push_back(s.sweep);
      try {
        std::size_t used = 0;
        const double x = std::stod(s.sweep, &used);
        e["x"].push_back(used == s.sweep.size() ? json(x) : json(nullptr));
      } catch (const std::logic_error&) {
        e["x"].push_back(nullptr);
      }
    }
    json& m = e["metrics"][s.metric];
    if (m.is_null()) m = {{"mean", json::array()}, {"std", json::array()}, {"n", json::array()}};
    m["mean"].push_back(s.mean);
    m["std"].push_back(s.std);
    m["n"].push_back(s.n);
  }
  write_text(dir / "plotdata.json", plot.dump(2) + "\n");
  return summary;
}

}  // namespace flmd::exp
