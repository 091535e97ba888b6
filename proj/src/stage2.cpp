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

#include "flmd/stage2.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "flmd/error.hpp"

namespace flmd::stage2 {

using data::PatientRecord;
using dk::Tape;
using dk::Tensor;
using dk::Var;
using nlohmann::json;

void Stage2Config::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("stage2.lambda must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("stage2.weight_decay must be >= 0");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("stage2.lr must be positive");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("stage2.d_model must be a positive multiple of n_heads");
  }
  if (batch_size == 0) throw ConfigError("stage2.batch_size must be >= 1");
}

json Stage2Config::to_json() const {
  return {{"lambda", lambda},     {"weight_decay", weight_decay},
          {"lr", lr},             {"d_model", d_model},
          {"n_heads", n_heads},   {"n_layers", n_layers},
          {"epochs", epochs},     {"batch_size", batch_size},
          {"seed", seed},         {"sensitive_fields", sensitive_fields},
          {"flip_mode", flip_mode == FlipMode::kAll ? "all" : "random"}};
}

Stage2Config Stage2Config::from_json(const json& j) {
  Stage2Config c;
  try {
    c.lambda = j.value("lambda", c.lambda);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.lr = j.value("lr", c.lr);
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.sensitive_fields = j.value("sensitive_fields", c.sensitive_fields);
    const auto mode = j.value("flip_mode", std::string("all"));
    if (mode == "all") c.flip_mode = FlipMode::kAll;
    else if (mode == "random") c.flip_mode = FlipMode::kRandomSubset;
    else throw ConfigError("stage2.flip_mode must be 'all' or 'random'");
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("stage2 config: ") + ex.what());
  }
  c.validate();
  return c;
}

namespace {

std::string layer(const char* kind, std::size_t l) { return std::string(kind) + "." + std::to_string(l); }

void copy_row(Tensor& t, std::size_t r, const std::vector<double>& v) {
  if (v.size() != t.cols()) throw ShapeError("stage2: input width does not match the model");
  std::copy(v.begin(), v.end(), t.storage().begin() + static_cast<std::ptrdiff_t>(r * t.cols()));
}

double clamp_prob(double p) { return std::clamp(p, dk::kProbClamp, 1.0 - dk::kProbClamp); }

}  // namespace

Stage2Model init_stage2(const Stage2Config& cfg, std::size_t d_dim, std::size_t z_dim,
                        std::size_t F, bool zero) {
  cfg.validate();
  Stage2Model m{cfg, d_dim, z_dim, F, {}};
  Rng rng(derive_seed(cfg.seed, 0x2a));
  auto& P = m.params;
  const std::size_t dm = cfg.d_model;
  dk::init_affine(P, "in.d", d_dim, dm, rng);
  dk::init_affine(P, "in.z", z_dim, dm, rng);
  dk::init_affine(P, "in.x", F, dm, rng);
  Tensor slot = Tensor::zeros(3, dm);
  for (auto& v : slot.storage()) v = 0.02 * standard_normal(rng);
  P.add("slot", std::move(slot));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    dk::init_attention(P, layer("att", l), dm, rng);
    dk::init_affine(P, layer("ffn", l) + ".l1", dm, 2 * dm, rng);
    dk::init_affine(P, layer("ffn", l) + ".l2", 2 * dm, dm, rng);
  }
  dk::init_affine(P, "head", dm, 1, rng);
  if (zero) {
    for (const auto& n : P.names()) {
      auto& v = P.value(n).storage();
      std::fill(v.begin(), v.end(), 0.0);
    }
  }
  return m;
}

data::Demographics counterfactual_demographics(const data::Demographics& d,
                                               const std::vector<std::string>& fields,
                                               const data::Schema& schema) {
  data::Demographics out = d;
  for (const auto& f : fields) {
    const std::size_t i = schema.sensitive_index(f);
    if (i >= out.sensitive_bits.size()) throw SchemaError("demographics lack sensitive bit " + f);
    out.sensitive_bits[i] = 1 - out.sensitive_bits[i];
  }
  return out;
}

Var build_tokens(Tape& tape, Stage2Model& m, Var d, Var z, Var x) {
  if (d.cols() != m.d_dim || z.cols() != m.z_dim || x.cols() != m.F || d.rows() != z.rows() ||
      d.rows() != x.rows()) {
    throw ShapeError("build_tokens: inputs do not match the model");
  }
  const Var slot = tape.param(m.params, "slot");
  const Var td = dk::add_row(dk::affine(tape, m.params, "in.d", d), dk::slice_rows(slot, 0, 1));
  const Var tz = dk::add_row(dk::affine(tape, m.params, "in.z", z), dk::slice_rows(slot, 1, 2));
  const Var tx = dk::add_row(dk::affine(tape, m.params, "in.x", x), dk::slice_rows(slot, 2, 3));
  return dk::interleave_rows({td, tz, tx});
}

Var forward_tokens(Tape& tape, Stage2Model& m, Var tokens) {
  if (tokens.cols() != m.cfg.d_model || tokens.rows() % 3 != 0) {
    throw ShapeError("forward_tokens: expected [3B x d_model] tokens");
  }
  Var h = tokens;
  for (std::size_t l = 0; l < m.cfg.n_layers; ++l) {
    const auto att = dk::AttentionVars::bind(tape, m.params, layer("att", l));
    h = dk::add(h, dk::multi_head_attention(h, att, m.cfg.n_heads, 3));
    const Var f = dk::relu(dk::affine(tape, m.params, layer("ffn", l) + ".l1", h));
    h = dk::add(h, dk::affine(tape, m.params, layer("ffn", l) + ".l2", f));
  }
  return dk::sigmoid(dk::affine(tape, m.params, "head", dk::group_mean_rows(h, 3)));
}

Var predict(Tape& tape, Stage2Model& m, Var d, Var z, Var x) {
  return forward_tokens(tape, m, build_tokens(tape, m, d, z, x));
}

std::vector<double> predict(Stage2Model& m, const Tensor& d, const Tensor& z, const Tensor& x) {
  Tape tape;
  const Tensor& p = predict(tape, m, tape.constant(d), tape.constant(z), tape.constant(x)).value();
  std::vector<double> out(p.rows());
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = clamp_prob(p[r]);
  return out;
}

std::vector<Item> collect_items(const data::Dataset& ds, const stage1::LatentTrace& trace) {
  std::vector<Item> items;
  items.reserve(ds.total_encounters());
  for (const auto& p : ds.patients) {
    for (std::size_t t = 1; t <= p.encounters.size(); ++t) {
      items.push_back({&p, t, trace.at(p.id, t).z});
    }
  }
  return items;
}

Batch make_batch(const std::vector<const Item*>& items, const Stage2Config& cfg,
                 const data::Schema& schema, Rng* rng) {
  if (items.empty()) throw DataError("stage2: empty batch");
  const std::size_t B = items.size();
  Batch b{Tensor::zeros(B, schema.demographic_dim()), Tensor::zeros(B, schema.demographic_dim()),
          Tensor::zeros(B, items.front()->z.size()), Tensor::zeros(B, schema.F), Tensor::zeros(B, 1)};
  std::vector<std::string> fields;
  for (std::size_t r = 0; r < B; ++r) {
    const Item& it = *items[r];
    const auto& enc = it.patient->encounters.at(it.t - 1);
    copy_row(b.d, r, it.patient->d.as_vector());
    copy_row(b.z, r, it.z);
    copy_row(b.x, r, enc.x);
    b.y[r] = enc.y;
    if (cfg.flip_mode == FlipMode::kRandomSubset && rng != nullptr) {
      fields.clear();
      for (const auto& f : cfg.sensitive_fields) {
        if (bernoulli(*rng, 0.5)) fields.push_back(f);
      }
      copy_row(b.d_cf, r, counterfactual_demographics(it.patient->d, fields, schema).as_vector());
    } else {
      copy_row(b.d_cf, r,
               counterfactual_demographics(it.patient->d, cfg.sensitive_fields, schema).as_vector());
    }
  }
  return b;
}

LossParts stage2_loss(Tape& tape, Stage2Model& m, const Batch& batch) {
  LossParts out;
  const Var z = tape.constant(batch.z);
  const Var x = tape.constant(batch.x);
  Var total = dk::bce(predict(tape, m, tape.constant(batch.d), z, x), batch.y);
  out.factual = total.value().item();
  if (m.cfg.lambda > 0.0) {
    const Var cf = dk::bce(predict(tape, m, tape.constant(batch.d_cf), z, x), batch.y);
    out.counterfactual = cf.value().item();
    total = dk::add(total, dk::scale(cf, m.cfg.lambda));
  }
  if (m.cfg.weight_decay > 0.0) {
    Var reg{};
    bool first = true;
    for (const auto& name : m.params.names()) {
      const Var sq = dk::squared_norm(tape.param(m.params, name));
      reg = first ? sq : dk::add(reg, sq);
      first = false;
    }
    reg = dk::scale(reg, m.cfg.weight_decay);
    out.l2 = reg.value().item();
    total = dk::add(total, reg);
  }
  out.total = total;
  return out;
}

std::vector<metrics::Prediction> predict_dataset(Stage2Model& m, const data::Dataset& ds,
                                                 const stage1::LatentTrace& trace,
                                                 bool counterfactual) {
  const auto items = collect_items(ds, trace);
  std::vector<metrics::Prediction> out;
  out.reserve(items.size());
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < items.size(); start += kChunk) {
    std::vector<const Item*> chunk;
    for (std::size_t i = start; i < std::min(items.size(), start + kChunk); ++i) chunk.push_back(&items[i]);
    const Batch b = make_batch(chunk, m.cfg, ds.schema, nullptr);
    const auto p = predict(m, counterfactual ? b.d_cf : b.d, b.z, b.x);
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      const Item& it = *chunk[r];
      out.push_back({it.patient->id, it.t, p[r], it.patient->encounters[it.t - 1].y,
                     it.patient->d.sensitive_bits});
    }
  }
  return out;
}

double cf_gap(Stage2Model& m, const data::Dataset& ds, const stage1::LatentTrace& trace) {
  const auto f = predict_dataset(m, ds, trace, false);
  const auto c = predict_dataset(m, ds, trace, true);
  if (f.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) s += std::abs(f[i].prob - c[i].prob);
  return s / static_cast<double>(f.size());
}

namespace {

double validation_auc(Stage2Model& m, const data::Dataset& val, const stage1::LatentTrace& trace) {
  if (val.patients.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto preds = predict_dataset(m, val, trace);
  std::vector<double> s;
  std::vector<int> y;
  for (const auto& p : preds) {
    s.push_back(p.prob);
    y.push_back(p.y);
  }
  try {
    return metrics::auc(s, y);
  } catch (const MetricError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace

Stage2Result train_stage2(const data::Dataset& train, const data::Dataset& val,
                          const stage1::LatentTrace& trace, const Stage2Config& cfg) {
  if (train.patients.empty()) throw DataError("train_stage2 on an empty training split");
  for (const auto& p : val.patients) {
    for (std::size_t t = 1; t <= p.encounters.size(); ++t) trace.at(p.id, t);
  }
  const auto items = collect_items(train, trace);
  Stage2Result res{init_stage2(cfg, train.schema.demographic_dim(), trace.z_dim(), train.schema.F), {}};
  Stage2Model& m = res.model;

  dk::OptState opt;
  opt.hyper.lr = cfg.lr;
  // lambda_2 already enters the loss as an explicit L2 term.
  opt.hyper.weight_decay = 0.0;

  std::vector<const Item*> order;
  for (const auto& it : items) order.push_back(&it);
  Rng rng(derive_seed(cfg.seed, 0x52));
  std::optional<dk::ParamStore> best;
  double best_auc = -1.0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    Stage2Epoch st;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::vector<const Item*> chunk(
          order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
      const Batch b = make_batch(chunk, cfg, train.schema, &rng);
      m.params.zero_grad();
      Tape tape;
      LossParts parts;
      try {
        parts = stage2_loss(tape, m, b);
        tape.backward(parts.total);
        dk::adam_step(m.params, opt);
      } catch (const NumericError& ex) {
        throw NumericError("stage2 epoch " + std::to_string(epoch) + ": " + ex.what());
      }
      st.loss += parts.total.value().item();
      st.factual += parts.factual;
      st.counterfactual += parts.counterfactual;
      ++st.steps;
    }
    if (st.steps > 0) {
      const double n = static_cast<double>(st.steps);
      st.loss /= n;
      st.factual /= n;
      st.counterfactual /= n;
    }
    st.val_auc = validation_auc(m, val, trace);
    if (!std::isnan(st.val_auc) && st.val_auc > best_auc) {
      best_auc = st.val_auc;
      best = m.params;
      res.history.best_epoch = epoch;
    }
    res.history.epochs.push_back(st);
  }
  if (best) {
    m.params = std::move(*best);
  } else if (cfg.epochs > 0) {
    res.history.best_epoch = cfg.epochs - 1;
  }
  return res;
}

void save_predictions_csv(const std::vector<metrics::Prediction>& preds,
                          const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write predictions " + path.string());
  out.precision(17);
  out << "patient_id,t,prob,y,group_bits\n";
  for (const auto& p : preds) {
    out << p.patient_id << ',' << p.t << ',' << p.prob << ',' << p.y << ',';
    for (int b : p.sensitive_bits) out << b;
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace flmd::stage2
