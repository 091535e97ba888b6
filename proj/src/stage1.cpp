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

#include "flmd/stage1.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "flmd/error.hpp"
#include "flmd/metrics.hpp"

namespace flmd::stage1 {

using data::PatientRecord;
using dk::Tape;
using dk::Tensor;
using dk::Var;
using nlohmann::json;

void Stage1Config::validate() const {
  if (z_dim < 1 || h_dim < 1 || phi_hidden < 1 || chi_hidden < 1) {
    throw ConfigError("stage1 dims must be >= 1");
  }
  if (L < 1) throw ConfigError("stage1.L must be >= 1");
  if (batch_size < 1) throw ConfigError("stage1.batch_size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("stage1.lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("stage1.weight_decay must be >= 0");
}

json Stage1Config::to_json() const {
  std::vector<std::string> lik;
  for (auto l : feature_likelihoods) lik.push_back(l == Likelihood::kBernoulli ? "bernoulli" : "gaussian");
  return {{"z_dim", z_dim},           {"h_dim", h_dim},
          {"phi_hidden", phi_hidden}, {"chi_hidden", chi_hidden},
          {"L", L},                   {"lr", lr},
          {"weight_decay", weight_decay}, {"epochs", epochs},
          {"batch_size", batch_size}, {"seed", seed},
          {"feature_likelihoods", lik}, {"whole_dataset", whole_dataset},
          {"track_mse", track_mse}};
}

Stage1Config Stage1Config::from_json(const json& j) {
  Stage1Config c;
  try {
    c.z_dim = j.value("z_dim", c.z_dim);
    c.h_dim = j.value("h_dim", c.h_dim);
    c.phi_hidden = j.value("phi_hidden", c.phi_hidden);
    c.chi_hidden = j.value("chi_hidden", c.chi_hidden);
    c.L = j.value("L", c.L);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.whole_dataset = j.value("whole_dataset", c.whole_dataset);
    c.track_mse = j.value("track_mse", c.track_mse);
    if (j.contains("feature_likelihoods")) {
      for (const auto& s : j.at("feature_likelihoods")) {
        const auto v = s.get<std::string>();
        if (v == "gaussian") c.feature_likelihoods.push_back(Likelihood::kGaussian);
        else if (v == "bernoulli") c.feature_likelihoods.push_back(Likelihood::kBernoulli);
        else throw ConfigError("unknown feature likelihood '" + v + "'");
      }
    }
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("stage1 config: ") + ex.what());
  }
  c.validate();
  return c;
}

std::vector<bool> Stage1Model::bernoulli_mask() const {
  std::vector<bool> mask(F, false);
  for (std::size_t j = 0; j < cfg.feature_likelihoods.size() && j < F; ++j) {
    mask[j] = cfg.feature_likelihoods[j] == Likelihood::kBernoulli;
  }
  return mask;
}

namespace {

std::string chi_name(std::size_t j) {
  std::ostringstream os;
  os << "chi." << std::setw(4) << std::setfill('0') << j;
  return os.str();
}

void zero_all(dk::ParamStore& store) {
  for (const auto& n : store.names()) {
    auto& v = store.value(n).storage();
    std::fill(v.begin(), v.end(), 0.0);
  }
}

Tensor rows_of(const std::vector<const std::vector<double>*>& rows, std::size_t cols) {
  Tensor t = Tensor::zeros(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy(rows[r]->begin(), rows[r]->end(), t.storage().begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  return t;
}

Tensor demographics_matrix(const std::vector<const PatientRecord*>& pts, std::size_t d_dim) {
  Tensor t = Tensor::zeros(pts.size(), d_dim);
  for (std::size_t r = 0; r < pts.size(); ++r) {
    const auto v = pts[r]->d.as_vector();
    if (v.size() != d_dim) throw SchemaError("demographic width does not match the Stage-1 model");
    std::copy(v.begin(), v.end(), t.storage().begin() + static_cast<std::ptrdiff_t>(r * d_dim));
  }
  return t;
}

Tensor encounter_matrix(const std::vector<const PatientRecord*>& pts, std::size_t n,
                        std::size_t e, std::size_t F) {
  std::vector<const std::vector<double>*> rows;
  rows.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto& x = pts[r]->encounters[e].x;
    if (x.size() != F) throw SchemaError("feature width does not match the Stage-1 model");
    rows.push_back(&x);
  }
  return rows_of(rows, F);
}

// Patients sorted by encounter count, longest first, so the rows still
// active at any step form a prefix.
std::vector<const PatientRecord*> sorted_by_length(std::span<const PatientRecord* const> batch,
                                                   std::size_t min_len) {
  std::vector<const PatientRecord*> pts;
  for (const auto* p : batch) {
    if (p->encounters.size() >= min_len) pts.push_back(p);
  }
  std::stable_sort(pts.begin(), pts.end(), [](const PatientRecord* a, const PatientRecord* b) {
    return a->encounters.size() > b->encounters.size();
  });
  return pts;
}

std::size_t active_rows(const std::vector<const PatientRecord*>& pts, std::size_t min_len) {
  std::size_t n = 0;
  while (n < pts.size() && pts[n]->encounters.size() >= min_len) ++n;
  return n;
}

Var shrink(Var v, std::size_t rows) { return v.rows() == rows ? v : dk::slice_rows(v, 0, rows); }

}  // namespace

Stage1Model init_stage1(const Stage1Config& cfg, std::size_t F, std::size_t d_dim, bool zero) {
  cfg.validate();
  if (F == 0) throw ConfigError("stage1 needs F >= 1");
  if (!cfg.feature_likelihoods.empty() && cfg.feature_likelihoods.size() != F) {
    throw ConfigError("feature_likelihoods must list one entry per feature");
  }
  Stage1Model m{cfg, F, d_dim, {}};
  Rng rng(derive_seed(cfg.seed, 0x1a));
  auto& P = m.params;
  dk::init_affine(P, "phi.l1", cfg.h_dim + F + d_dim, cfg.phi_hidden, rng);
  dk::init_affine(P, "phi.l2", cfg.phi_hidden, cfg.phi_hidden, rng);
  dk::init_affine(P, "phi.out", cfg.phi_hidden, 2 * cfg.z_dim, rng);
  for (std::size_t j = 0; j < F; ++j) {
    const auto name = chi_name(j);
    dk::init_affine(P, name + ".l1", cfg.z_dim + d_dim, cfg.chi_hidden, rng);
    // Output layer stored as a row so the F heads batch into one block dot.
    Tensor w = Tensor::zeros(1, cfg.chi_hidden);
    const double limit = std::sqrt(6.0 / static_cast<double>(cfg.chi_hidden + 1));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (auto& v : w.storage()) v = u(rng);
    P.add(name + ".out.w", std::move(w));
    P.add(name + ".out.b", Tensor::zeros(1, 1));
  }
  dk::init_lstm(P, "psi", cfg.z_dim + F, cfg.h_dim, rng);
  Tensor x0 = Tensor::zeros(1, F), h0 = Tensor::zeros(1, cfg.h_dim);
  for (auto& v : x0.storage()) v = 0.1 * standard_normal(rng);
  for (auto& v : h0.storage()) v = 0.1 * standard_normal(rng);
  P.add("x0", std::move(x0));
  P.add("h0", std::move(h0));
  if (zero) zero_all(P);
  return m;
}

Posterior encode(Tape& tape, Stage1Model& m, Var h_prev, Var x_prev, Var d) {
  const auto& c = m.cfg;
  if (h_prev.cols() != c.h_dim || x_prev.cols() != m.F || d.cols() != m.d_dim) {
    throw ShapeError("encode: input widths do not match the model");
  }
  Var a = dk::concat_cols({h_prev, x_prev, d});
  a = dk::tanh(dk::affine(tape, m.params, "phi.l1", a));
  a = dk::tanh(dk::affine(tape, m.params, "phi.l2", a));
  const Var out = dk::affine(tape, m.params, "phi.out", a);
  const Var mu = dk::slice_cols(out, 0, c.z_dim);
  const Var logvar = dk::slice_cols(out, c.z_dim, 2 * c.z_dim);
  return {mu, dk::exp(dk::scale(logvar, 0.5))};
}

Var sample_latent(Tape& /*tape*/, Posterior q, Rng& rng) {
  Tensor eps(q.mu.value().shape());
  for (auto& v : eps.storage()) v = standard_normal(rng);
  return dk::reparameterize(q.mu, q.sigma, eps);
}

Var decode_raw(Tape& tape, Stage1Model& m, Var z, Var d) {
  if (z.cols() != m.cfg.z_dim || d.cols() != m.d_dim) {
    throw ShapeError("decode: input widths do not match the model");
  }
  std::vector<Var> w1, b1, w2, b2;
  for (std::size_t j = 0; j < m.F; ++j) {
    const auto name = chi_name(j);
    w1.push_back(tape.param(m.params, name + ".l1.W"));
    b1.push_back(tape.param(m.params, name + ".l1.b"));
    w2.push_back(tape.param(m.params, name + ".out.w"));
    b2.push_back(tape.param(m.params, name + ".out.b"));
  }
  const Var in = dk::concat_cols({z, d});
  const Var hidden = dk::tanh(dk::affine(in, dk::concat_cols(w1), dk::concat_cols(b1)));
  return dk::add_row(dk::block_rowdot(hidden, dk::concat_cols(w2), m.cfg.chi_hidden),
                     dk::concat_cols(b2));
}

Tensor decode(Stage1Model& m, const Tensor& z, const Tensor& d) {
  Tape tape;
  Tensor out = decode_raw(tape, m, tape.constant(z), tape.constant(d)).value();
  const auto mask = m.bernoulli_mask();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t j = 0; j < m.F; ++j) {
      if (mask[j]) out(r, j) = 1.0 / (1.0 + std::exp(-out(r, j)));
    }
  }
  return out;
}

dk::LstmState recur(Tape& tape, Stage1Model& m, Var z, Var x, Var h_prev, Var c_prev) {
  return dk::lstm_cell(tape, m.params, "psi", dk::concat_cols({z, x}), h_prev, c_prev);
}

LossTerms stage1_batch_loss(Tape& tape, Stage1Model& m,
                            std::span<const PatientRecord* const> batch, Rng& rng) {
  const auto mask = m.bernoulli_mask();
  const auto pts = sorted_by_length(batch, 2);
  LossTerms out;
  out.patients = pts.size();

  std::vector<Var> parts;
  if (!pts.empty()) {
    const std::size_t n = pts.size();
    const std::size_t max_t = pts.front()->encounters.size();
    std::vector<double> weight(n);
    for (std::size_t r = 0; r < n; ++r) {
      weight[r] = 1.0 / (static_cast<double>(pts[r]->encounters.size() - 1) * static_cast<double>(n));
    }
    const Var d_all = tape.constant(demographics_matrix(pts, m.d_dim));
    Var h = dk::tile_rows(tape.param(m.params, "h0"), n);
    Var c = tape.constant(Tensor::zeros(n, m.cfg.h_dim));
    Var x_prev = dk::tile_rows(tape.param(m.params, "x0"), n);

    for (std::size_t s = 0; s + 1 < max_t; ++s) {
      // Term s predicts encounter s (0-based) for patients with T >= s + 2.
      const std::size_t rows = active_rows(pts, s + 2);
      h = shrink(h, rows);
      c = shrink(c, rows);
      x_prev = shrink(x_prev, rows);
      const Var d = shrink(d_all, rows);

      const Posterior q = encode(tape, m, h, x_prev, d);
      const Var kl = dk::gaussian_kl_rows(q.mu, q.sigma);
      const Tensor target = encounter_matrix(pts, rows, s, m.F);

      Var z_first{};
      Var nll{};
      for (std::size_t l = 0; l < m.cfg.L; ++l) {
        const Var z = sample_latent(tape, q, rng);
        if (l == 0) z_first = z;
        const Var term = dk::reconstruction_nll_rows(decode_raw(tape, m, z, d), target, mask);
        nll = l == 0 ? term : dk::add(nll, term);
      }
      if (m.cfg.L > 1) nll = dk::scale(nll, 1.0 / static_cast<double>(m.cfg.L));

      const Tensor w = Tensor::column(std::vector<double>(weight.begin(), weight.begin() + static_cast<std::ptrdiff_t>(rows)));
      for (std::size_t r = 0; r < rows; ++r) {
        out.kl += w[r] * kl.value()[r];
        out.nll += w[r] * nll.value()[r];
      }
      parts.push_back(dk::sum(dk::mul(dk::add(kl, nll), tape.constant(w))));

      if (s + 2 < max_t) {
        const Var x_now = tape.constant(target);
        const auto next = recur(tape, m, z_first, x_now, h, c);
        h = next.h;
        c = next.c;
        x_prev = x_now;
      }
    }
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
    parts.push_back(reg);
  }

  if (parts.empty()) {
    out.total = tape.constant(Tensor::scalar(0.0));
    return out;
  }
  Var total = parts.front();
  for (std::size_t k = 1; k < parts.size(); ++k) total = dk::add(total, parts[k]);
  out.total = total;
  return out;
}

Var stage1_loss(Tape& tape, Stage1Model& m, const PatientRecord& p, Rng& rng) {
  if (p.encounters.size() < 2) {
    throw DataError("stage1_loss needs at least two encounters (patient " + p.id + ")");
  }
  const PatientRecord* one[] = {&p};
  return stage1_batch_loss(tape, m, one, rng).total;
}

double reconstruction_mse(Stage1Model& m, const data::Dataset& ds) {
  std::vector<const PatientRecord*> all;
  for (const auto& p : ds.patients) all.push_back(&p);
  const auto mask = m.bernoulli_mask();
  double sq = 0.0;
  std::size_t count = 0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < all.size(); start += kChunk) {
    const auto chunk = std::span(all).subspan(start, std::min(kChunk, all.size() - start));
    const auto pts = sorted_by_length(chunk, 2);
    if (pts.empty()) continue;
    Tape tape;
    const std::size_t n = pts.size();
    const Var d_all = tape.constant(demographics_matrix(pts, m.d_dim));
    Var h = dk::tile_rows(tape.param(m.params, "h0"), n);
    Var c = tape.constant(Tensor::zeros(n, m.cfg.h_dim));
    Var x_prev = dk::tile_rows(tape.param(m.params, "x0"), n);
    const std::size_t max_t = pts.front()->encounters.size();
    for (std::size_t s = 0; s + 1 < max_t; ++s) {
      const std::size_t rows = active_rows(pts, s + 2);
      h = shrink(h, rows);
      c = shrink(c, rows);
      x_prev = shrink(x_prev, rows);
      const Var d = shrink(d_all, rows);
      const Posterior q = encode(tape, m, h, x_prev, d);
      const Tensor& pred = decode_raw(tape, m, q.mu, d).value();
      const Tensor target = encounter_matrix(pts, rows, s, m.F);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < m.F; ++j) {
          const double p = mask[j] ? 1.0 / (1.0 + std::exp(-pred(r, j))) : pred(r, j);
          const double e = p - target(r, j);
          sq += e * e;
          ++count;
        }
      }
      if (s + 2 < max_t) {
        const Var x_now = tape.constant(target);
        const auto next = recur(tape, m, q.mu, x_now, h, c);
        h = next.h;
        c = next.c;
        x_prev = x_now;
      }
    }
  }
  return count == 0 ? 0.0 : sq / static_cast<double>(count);
}

Stage1Result train_stage1(const data::Dataset& ds, const Stage1Config& cfg) {
  if (ds.patients.empty()) throw DataError("train_stage1 on an empty dataset");
  Stage1Result res{init_stage1(cfg, ds.schema.F, ds.schema.demographic_dim()), {}};
  Stage1Model& m = res.model;

  std::vector<const PatientRecord*> usable;
  for (const auto& p : ds.patients) {
    if (p.encounters.size() >= 2) usable.push_back(&p);
  }
  dk::OptState opt;
  opt.hyper.lr = cfg.lr;
  // lambda_1 already enters the loss as an explicit L2 term.
  opt.hyper.weight_decay = 0.0;

  if (cfg.track_mse) res.history.initial_mse = reconstruction_mse(m, ds);
  Rng rng(derive_seed(cfg.seed, 0x5741));
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(usable.begin(), usable.end(), rng);
    EpochStats st;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < usable.size(); start += cfg.batch_size) {
      const auto batch = std::span(usable).subspan(start, std::min(cfg.batch_size, usable.size() - start));
      m.params.zero_grad();
      Tape tape;
      LossTerms terms;
      try {
        terms = stage1_batch_loss(tape, m, batch, rng);
        tape.backward(terms.total);
        dk::adam_step(m.params, opt);
      } catch (const NumericError& ex) {
        throw NumericError("stage1 epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(batches) + ": " + ex.what());
      }
      st.loss += terms.total.value().item();
      st.kl += terms.kl;
      st.nll += terms.nll;
      ++batches;
      ++st.steps;
    }
    if (batches > 0) {
      st.loss /= static_cast<double>(batches);
      st.kl /= static_cast<double>(batches);
      st.nll /= static_cast<double>(batches);
    }
    if (cfg.track_mse) st.mse = reconstruction_mse(m, ds);
    res.history.total_steps += st.steps;
    res.history.epochs.push_back(st);
  }
  return res;
}

void LatentTrace::add(LatentEntry e) {
  if ((z_dim_ != 0 && e.z.size() != z_dim_) || (h_dim_ != 0 && e.h.size() != h_dim_)) {
    throw ShapeError("latent entry width does not match the trace");
  }
  auto& slots = index_[e.id];
  if (slots.size() < e.t) slots.resize(e.t, static_cast<std::size_t>(-1));
  if (e.t == 0) throw IndexError("latent entries use 1-based encounter indices");
  slots[e.t - 1] = entries_.size();
  entries_.push_back(std::move(e));
}

bool LatentTrace::contains(const std::string& id, std::size_t t) const {
  auto it = index_.find(id);
  return it != index_.end() && t >= 1 && t <= it->second.size() &&
         it->second[t - 1] != static_cast<std::size_t>(-1);
}

const LatentEntry& LatentTrace::at(const std::string& id, std::size_t t) const {
  if (!contains(id, t)) {
    throw AlignmentError("no latent for patient " + id + " encounter " + std::to_string(t));
  }
  return entries_[index_.at(id)[t - 1]];
}

LatentTrace extract_latents(const data::Dataset& ds, Stage1Model& m) {
  if (ds.schema.F != m.F || ds.schema.demographic_dim() != m.d_dim) {
    throw SchemaError("dataset schema does not match the Stage-1 model");
  }
  // Results per patient index, emitted in dataset order afterwards.
  std::vector<std::vector<LatentEntry>> per_patient(ds.patients.size());
  std::unordered_map<const PatientRecord*, std::size_t> slot;
  std::vector<const PatientRecord*> all;
  for (std::size_t i = 0; i < ds.patients.size(); ++i) {
    all.push_back(&ds.patients[i]);
    slot[&ds.patients[i]] = i;
  }
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < all.size(); start += kChunk) {
    const auto chunk = std::span(all).subspan(start, std::min(kChunk, all.size() - start));
    const auto pts = sorted_by_length(chunk, 1);
    Tape tape;
    const std::size_t n = pts.size();
    const Var d_all = tape.constant(demographics_matrix(pts, m.d_dim));
    Var h = dk::tile_rows(tape.param(m.params, "h0"), n);
    Var c = tape.constant(Tensor::zeros(n, m.cfg.h_dim));
    Var x_prev = dk::tile_rows(tape.param(m.params, "x0"), n);
    const std::size_t max_t = pts.front()->encounters.size();
    for (std::size_t s = 0; s < max_t; ++s) {
      const std::size_t rows = active_rows(pts, s + 1);
      h = shrink(h, rows);
      c = shrink(c, rows);
      x_prev = shrink(x_prev, rows);
      const Var d = shrink(d_all, rows);
      const Posterior q = encode(tape, m, h, x_prev, d);
      const Var x_now = tape.constant(encounter_matrix(pts, rows, s, m.F));
      const auto next = recur(tape, m, q.mu, x_now, h, c);
      for (std::size_t r = 0; r < rows; ++r) {
        per_patient[slot[pts[r]]].push_back(
            {pts[r]->id, s + 1, q.mu.value().row_vector(r), next.h.value().row_vector(r)});
      }
      h = next.h;
      c = next.c;
      x_prev = x_now;
    }
  }
  LatentTrace trace(m.cfg.z_dim, m.cfg.h_dim);
  for (auto& entries : per_patient) {
    for (auto& e : entries) trace.add(std::move(e));
  }
  return trace;
}

void save_latents(const LatentTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write latent trace " + path.string());
  for (const auto& e : trace.entries()) {
    out << json{{"id", e.id}, {"t", e.t}, {"z", e.z}, {"h", e.h}}.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

LatentTrace load_latents(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open latent trace " + path.string());
  std::vector<LatentEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      entries.push_back({j.at("id").get<std::string>(), j.at("t").get<std::size_t>(),
                         j.at("z").get<std::vector<double>>(), j.at("h").get<std::vector<double>>()});
    } catch (const json::exception& ex) {
      throw ParseError(path.string() + " line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  LatentTrace trace(entries.empty() ? 0 : entries.front().z.size(),
                    entries.empty() ? 0 : entries.front().h.size());
  for (auto& e : entries) trace.add(std::move(e));
  return trace;
}

double probe_confounder(const LatentTrace& trace, const scm::GroundTruth& gt,
                        std::uint64_t seed) {
  const std::size_t zd = trace.z_dim();
  std::unordered_map<std::string, std::pair<std::vector<double>, std::size_t>> mean_z;
  for (const auto& e : trace.entries()) {
    auto& [acc, n] = mean_z[e.id];
    if (acc.empty()) acc.assign(zd, 0.0);
    for (std::size_t k = 0; k < zd; ++k) acc[k] += e.z[k];
    ++n;
  }
  std::vector<std::vector<double>> feats;
  std::vector<int> labels;
  for (const auto& p : gt.patients) {
    auto it = mean_z.find(p.id);
    if (it == mean_z.end()) throw AlignmentError("no latents for patient " + p.id);
    auto v = it->second.first;
    for (auto& x : v) x /= static_cast<double>(it->second.second);
    feats.push_back(std::move(v));
    labels.push_back(p.f_depe);
  }
  const auto n_pos = std::count(labels.begin(), labels.end(), 1);
  if (n_pos == 0 || n_pos == static_cast<std::ptrdiff_t>(labels.size())) {
    throw MetricError("probe undefined: ground truth has a single class");
  }

  std::vector<std::size_t> idx(feats.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, 0x70b));
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t n_train = static_cast<std::size_t>(std::floor(0.7 * static_cast<double>(idx.size())));
  const std::vector<std::size_t> train(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  const std::vector<std::size_t> test(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());

  // Standardize with training statistics.
  std::vector<double> mu(zd, 0.0), sd(zd, 0.0);
  for (auto i : train) {
    for (std::size_t k = 0; k < zd; ++k) mu[k] += feats[i][k];
  }
  for (auto& v : mu) v /= static_cast<double>(train.size());
  for (auto i : train) {
    for (std::size_t k = 0; k < zd; ++k) sd[k] += (feats[i][k] - mu[k]) * (feats[i][k] - mu[k]);
  }
  for (auto& v : sd) v = std::max(std::sqrt(v / static_cast<double>(train.size())), 1e-8);
  const auto design = [&](const std::vector<std::size_t>& ids) {
    Tensor x = Tensor::zeros(ids.size(), zd);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      for (std::size_t k = 0; k < zd; ++k) x(r, k) = (feats[ids[r]][k] - mu[k]) / sd[k];
    }
    return x;
  };
  const Tensor x_train = design(train);
  const Tensor x_test = design(test);
  Tensor y_train = Tensor::zeros(train.size(), 1);
  for (std::size_t r = 0; r < train.size(); ++r) y_train[r] = labels[train[r]];

  dk::ParamStore probe;
  probe.add("w", Tensor::zeros(zd, 1));
  probe.add("b", Tensor::zeros(1, 1));
  dk::OptState opt;
  opt.hyper.lr = 0.05;
  constexpr std::size_t kSteps = 300;
  constexpr double kRidge = 1e-3;
  for (std::size_t step = 0; step < kSteps; ++step) {
    probe.zero_grad();
    Tape tape;
    const Var w = tape.param(probe, "w");
    const Var logits = dk::affine(tape.constant(x_train), w, tape.param(probe, "b"));
    const Var loss = dk::add(dk::cross_entropy(logits, y_train), dk::scale(dk::squared_norm(w), kRidge));
    tape.backward(loss);
    dk::adam_step(probe, opt);
  }

  std::vector<double> scores(test.size());
  std::vector<int> y_test(test.size());
  const Tensor& w = probe.value("w");
  const double b = probe.value("b").item();
  for (std::size_t r = 0; r < test.size(); ++r) {
    double s = b;
    for (std::size_t k = 0; k < zd; ++k) s += x_test(r, k) * w[k];
    scores[r] = s;
    y_test[r] = labels[test[r]];
  }
  return metrics::auc(scores, y_test);
}

}  // namespace flmd::stage1
