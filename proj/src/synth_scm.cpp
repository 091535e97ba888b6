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

#include "flmd/synth_scm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "flmd/error.hpp"
#include "flmd/random.hpp"

namespace flmd::scm {

using data::Dataset;
using nlohmann::json;

void ScmConfig::validate() const {
  if (num_patients == 0) throw ConfigError("scm.num_patients must be >= 1");
  if (F == 0 || z_true_dim == 0 || h_true_dim == 0) throw ConfigError("scm dims must be >= 1");
  if (encounter_min < 1 || encounter_max < encounter_min) {
    throw ConfigError("scm encounter_count needs 1 <= min <= max");
  }
  for (double v : {confounder_strength, demographic_effect, feature_noise}) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError("scm strengths must be finite and >= 0");
  }
  if (!(group_rate > 0.0 && group_rate < 1.0)) throw ConfigError("scm.group_rate must be in (0,1)");
  if (sensitive_names.empty()) throw ConfigError("scm needs at least one sensitive attribute");
}

SynthesisParams SynthesisParams::defaults(std::size_t F) {
  SynthesisParams p;
  p.m1.assign(F, 1.5);
  p.m2.assign(F, 0.5);
  p.b1.assign(F, 0.5);
  p.b2.assign(F, -0.5);
  p.m3 = p.m4 = 1.0;
  p.b3 = 0.2;
  p.b4 = -0.2;
  return p;
}

SynthesisParams SynthesisParams::identity(std::size_t F) {
  SynthesisParams p;
  p.m1.assign(F, 1.0);
  p.m2.assign(F, 1.0);
  p.b1.assign(F, 0.0);
  p.b2.assign(F, 0.0);
  p.m3 = p.m4 = 1.0;
  p.b3 = p.b4 = 0.0;
  return p;
}

void SynthesisParams::validate(std::size_t F) const {
  for (const auto* v : {&m1, &m2, &b1, &b2}) {
    if (v->size() != F) throw ConfigError("synthesis vectors must have length F");
    for (double e : *v) {
      if (!std::isfinite(e)) throw ConfigError("synthesis parameters must be finite");
    }
  }
  for (double e : {m3, m4, b3, b4}) {
    if (!std::isfinite(e)) throw ConfigError("synthesis parameters must be finite");
  }
}

namespace {

using Matrix = std::vector<std::vector<double>>;

Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  Matrix m(rows, std::vector<double>(cols));
  for (auto& row : m) {
    for (auto& e : row) e = scale * standard_normal(rng);
  }
  return m;
}

std::vector<double> gaussian_vector(Rng& rng, std::size_t n, double scale) {
  std::vector<double> v(n);
  for (auto& e : v) e = scale * standard_normal(rng);
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

struct Mechanism {
  Matrix A;    // z_true_dim x h_true_dim
  Matrix B;    // h_true_dim x (h_true_dim + z_true_dim)
  Matrix W;    // F x z_true_dim
  Matrix U;    // F x num_sensitive
  std::vector<double> v;    // F
  std::vector<double> w_z;  // z_true_dim
  std::vector<double> w_d;  // num_sensitive
  std::vector<double> w_x;  // F
  double w_f = 1.0;

  explicit Mechanism(const ScmConfig& c) {
    Rng rng(derive_seed(c.seed, 0));
    const std::size_t S = c.sensitive_names.size();
    const double zh = static_cast<double>(c.h_true_dim);
    const double zz = static_cast<double>(c.z_true_dim);
    A = gaussian_matrix(rng, c.z_true_dim, c.h_true_dim, 1.0 / std::sqrt(zh));
    B = gaussian_matrix(rng, c.h_true_dim, c.h_true_dim + c.z_true_dim,
                        1.5 / std::sqrt(zh + zz));
    W = gaussian_matrix(rng, c.F, c.z_true_dim, 1.0 / std::sqrt(zz));
    U = gaussian_matrix(rng, c.F, S, 1.0 / std::sqrt(static_cast<double>(S)));
    v = gaussian_vector(rng, c.F, 1.0);
    w_z = gaussian_vector(rng, c.z_true_dim, 1.5 / std::sqrt(zz));
    w_d = gaussian_vector(rng, S, 1.0 / std::sqrt(static_cast<double>(S)));
    w_x = gaussian_vector(rng, c.F, 1.0);
  }
};

double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

}  // namespace

std::pair<Dataset, GroundTruth> generate_scm_dataset(const ScmConfig& cfg) {
  cfg.validate();
  const Mechanism mech(cfg);
  const std::size_t S = cfg.sensitive_names.size();
  const std::size_t zt = cfg.z_true_dim;
  const std::size_t ht = cfg.h_true_dim;

  Dataset ds;
  ds.schema.F = cfg.F;
  ds.schema.sensitive_names = cfg.sensitive_names;
  ds.schema.label_name = "y";
  if (cfg.observe_f_depe) ds.schema.extra_names = {kFinancialDependency};

  GroundTruth gt;
  ds.patients.reserve(cfg.num_patients);
  gt.patients.reserve(cfg.num_patients);

  for (std::size_t i = 0; i < cfg.num_patients; ++i) {
    Rng rng(derive_seed(cfg.seed, i + 1));
    data::PatientRecord rec;
    PatientTruth truth;
    rec.id = "p" + std::to_string(i);
    truth.id = rec.id;

    rec.d.sensitive_bits.resize(S);
    for (std::size_t s = 0; s < S; ++s) {
      rec.d.sensitive_bits[s] = bernoulli(rng, s == 0 ? cfg.group_rate : 0.5);
    }
    truth.f_depe = bernoulli(rng, 0.5);
    if (cfg.observe_f_depe) rec.d.extra = {static_cast<double>(truth.f_depe)};

    const auto span = cfg.encounter_max - cfg.encounter_min;
    const std::size_t T =
        cfg.encounter_min +
        std::uniform_int_distribution<std::size_t>(0, span)(rng);

    std::vector<double> dsign(S);
    for (std::size_t s = 0; s < S; ++s) dsign[s] = 2.0 * rec.d.sensitive_bits[s] - 1.0;
    const double fsign = 2.0 * truth.f_depe - 1.0;
    const double demo_logit = cfg.demographic_effect * dot(mech.w_d, dsign);

    std::vector<double> h(ht, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> z(zt);
      for (std::size_t k = 0; k < zt; ++k) z[k] = dot(mech.A[k], h) + standard_normal(rng);

      std::vector<double> x(cfg.F);
      for (std::size_t j = 0; j < cfg.F; ++j) {
        x[j] = dot(mech.W[j], z) + cfg.confounder_strength * mech.v[j] * fsign +
               cfg.demographic_effect * dot(mech.U[j], dsign) +
               cfg.feature_noise * standard_normal(rng);
      }

      const double logit = dot(mech.w_z, z) + demo_logit +
                           cfg.confounder_strength * mech.w_f * fsign +
                           dot(mech.w_x, x) / static_cast<double>(cfg.F);
      const double p = sigmoid(logit);
      const int y = bernoulli(rng, p);

      std::vector<double> hz(h);
      hz.insert(hz.end(), z.begin(), z.end());
      std::vector<double> h_next(ht);
      for (std::size_t k = 0; k < ht; ++k) h_next[k] = std::tanh(dot(mech.B[k], hz));

      rec.encounters.push_back({std::move(x), y});
      truth.encounters.push_back({z, h_next, p});
      h = std::move(h_next);
    }
    ds.patients.push_back(std::move(rec));
    gt.patients.push_back(std::move(truth));
  }
  return {std::move(ds), std::move(gt)};
}

void check_alignment(const Dataset& ds, const GroundTruth& gt) {
  if (ds.patients.size() != gt.patients.size()) {
    throw AlignmentError("ground truth has " + std::to_string(gt.patients.size()) +
                         " patients, dataset has " + std::to_string(ds.patients.size()));
  }
  for (std::size_t i = 0; i < ds.patients.size(); ++i) {
    const auto& p = ds.patients[i];
    const auto& g = gt.patients[i];
    if (p.id != g.id || p.encounters.size() != g.encounters.size()) {
      throw AlignmentError("ground truth misaligned at patient " + p.id);
    }
  }
}

Dataset apply_semisynthetic(const Dataset& ds, const GroundTruth& gt,
                            const SynthesisParams& params) {
  check_alignment(ds, gt);
  params.validate(ds.schema.F);
  Dataset out = ds;
  for (std::size_t i = 0; i < out.patients.size(); ++i) {
    auto& p = out.patients[i];
    const auto& g = gt.patients[i];
    const bool dep = g.f_depe == 1;
    const auto& m = dep ? params.m1 : params.m2;
    const auto& b = dep ? params.b1 : params.b2;
    const double my = dep ? params.m3 : params.m4;
    const double by = dep ? params.b3 : params.b4;
    Rng rng(derive_seed(params.label_seed, hash_string(p.id)));
    for (std::size_t t = 0; t < p.encounters.size(); ++t) {
      auto& e = p.encounters[t];
      for (std::size_t j = 0; j < e.x.size(); ++j) e.x[j] = e.x[j] * m[j] + b[j];
      const double rate = std::clamp(my * g.encounters[t].y_prob + by, 0.0, 1.0);
      e.y = bernoulli(rng, rate);
    }
  }
  return out;
}

Dataset hide_confounder(const Dataset& ds, const std::string& field) {
  const auto& names = ds.schema.extra_names;
  auto it = std::find(names.begin(), names.end(), field);
  if (it == names.end()) {
    throw SchemaError("'" + field + "' is not an observed demographic field");
  }
  const auto k = static_cast<std::ptrdiff_t>(it - names.begin());
  Dataset out = ds;
  out.schema.extra_names.erase(out.schema.extra_names.begin() + k);
  for (auto& p : out.patients) p.d.extra.erase(p.d.extra.begin() + k);
  return out;
}

Dataset disturb_demographics(const Dataset& ds, const std::vector<std::string>& fields,
                             std::uint64_t seed) {
  std::vector<std::size_t> idx;
  for (const auto& f : fields) idx.push_back(ds.schema.sensitive_index(f));
  Dataset out = ds;
  for (std::size_t i = 0; i < out.patients.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    for (auto k : idx) out.patients[i].d.sensitive_bits[k] = bernoulli(rng, 0.5);
  }
  return out;
}

Dataset mix_training(const Dataset& original, const Dataset& disturbed,
                     double proportion_original, std::uint64_t seed) {
  if (!(proportion_original >= 0.0 && proportion_original <= 1.0)) {
    throw ConfigError("proportion of original data must lie in [0, 1]");
  }
  if (original.patients.size() != disturbed.patients.size()) {
    throw DataError("original and disturbed datasets differ in size");
  }
  if (!(original.schema == disturbed.schema)) {
    throw SchemaError("original and disturbed datasets differ in schema");
  }
  const std::size_t n = original.patients.size();
  const auto n_orig = static_cast<std::size_t>(
      std::ceil(proportion_original * static_cast<double>(n) - 1e-9));

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, 0x6d6978));
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<char> from_original(n, 0);
  for (std::size_t k = 0; k < n_orig; ++k) from_original[idx[k]] = 1;

  Dataset out;
  out.schema = original.schema;
  out.patients.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.patients.push_back(from_original[i] ? original.patients[i] : disturbed.patients[i]);
  }
  return out;
}

Dataset rebalance_by_attribute(const Dataset& ds, const std::string& attr, double ratio_a,
                               double ratio_b, std::size_t target_size, std::uint64_t seed) {
  const std::size_t bit = ds.schema.sensitive_index(attr);
  if (!(ratio_a >= 0.0 && ratio_b >= 0.0 && ratio_a + ratio_b > 0.0)) {
    throw ConfigError("rebalance ratio must be nonnegative and not all zero");
  }
  std::vector<std::size_t> group_a, group_b;
  for (std::size_t i = 0; i < ds.patients.size(); ++i) {
    (ds.patients[i].d.sensitive_bits[bit] == 1 ? group_a : group_b).push_back(i);
  }
  const auto n_a = static_cast<std::size_t>(
      std::ceil(static_cast<double>(target_size) * ratio_a / (ratio_a + ratio_b) - 1e-9));
  const std::size_t n_b = target_size - std::min(n_a, target_size);
  if ((n_a > 0 && group_a.empty()) || (n_b > 0 && group_b.empty())) {
    throw DataError("cannot rebalance on '" + attr + "': a required group is empty");
  }

  Rng rng(derive_seed(seed, 0x72626c));
  // Without replacement while the group lasts, then with replacement.
  const auto draw = [&](std::vector<std::size_t> group, std::size_t need) {
    std::shuffle(group.begin(), group.end(), rng);
    std::vector<std::size_t> picked(group.begin(),
                                    group.begin() + static_cast<std::ptrdiff_t>(
                                                        std::min(need, group.size())));
    std::sort(picked.begin(), picked.end());
    std::uniform_int_distribution<std::size_t> pick(0, group.size() - 1);
    while (picked.size() < need) picked.push_back(group[pick(rng)]);
    return picked;
  };

  Dataset out;
  out.schema = ds.schema;
  out.patients.reserve(target_size);
  std::vector<std::size_t> uses(ds.patients.size(), 0);
  for (const auto& chosen : {draw(group_a, n_a), draw(group_b, n_b)}) {
    for (auto i : chosen) {
      data::PatientRecord rec = ds.patients[i];
      if (uses[i]++ > 0) rec.id += "#r" + std::to_string(uses[i] - 1);
      out.patients.push_back(std::move(rec));
    }
  }
  return out;
}

void save_ground_truth(const GroundTruth& gt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write ground truth file " + path.string());
  for (const auto& p : gt.patients) {
    json enc = json::array();
    for (const auto& e : p.encounters) {
      enc.push_back({{"z", e.z_true}, {"h", e.h_true}, {"p", e.y_prob}});
    }
    out << json{{"id", p.id}, {"f_depe", p.f_depe}, {"enc", std::move(enc)}}.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

GroundTruth load_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ground truth file " + path.string());
  GroundTruth gt;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      PatientTruth p;
      p.id = j.at("id").get<std::string>();
      p.f_depe = j.at("f_depe").get<int>();
      for (const auto& e : j.at("enc")) {
        p.encounters.push_back({e.at("z").get<std::vector<double>>(),
                                e.at("h").get<std::vector<double>>(), e.at("p").get<double>()});
      }
      gt.patients.push_back(std::move(p));
    } catch (const json::exception& ex) {
      throw ParseError(path.string() + " line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return gt;
}

}  // namespace flmd::scm
