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

#include "flmd/ehr_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "flmd/error.hpp"
#include "flmd/random.hpp"

namespace flmd::data {

using nlohmann::json;

std::vector<double> Demographics::as_vector() const {
  std::vector<double> v;
  v.reserve(sensitive_bits.size() + extra.size());
  for (int b : sensitive_bits) v.push_back(static_cast<double>(b));
  v.insert(v.end(), extra.begin(), extra.end());
  return v;
}

std::size_t Schema::sensitive_index(const std::string& name) const {
  auto it = std::find(sensitive_names.begin(), sensitive_names.end(), name);
  if (it == sensitive_names.end()) {
    throw SchemaError("unknown sensitive attribute '" + name + "'");
  }
  return static_cast<std::size_t>(it - sensitive_names.begin());
}

std::size_t Dataset::total_encounters() const {
  std::size_t n = 0;
  for (const auto& p : patients) n += p.encounters.size();
  return n;
}

namespace {

void check_record(const PatientRecord& p, const Schema& schema, const std::string& where) {
  if (p.d.sensitive_bits.size() != schema.sensitive_names.size()) {
    throw SchemaError(where + ": expected " + std::to_string(schema.sensitive_names.size()) +
                      " sensitive bits, got " + std::to_string(p.d.sensitive_bits.size()));
  }
  for (int b : p.d.sensitive_bits) {
    if (b != 0 && b != 1) throw SchemaError(where + ": sensitive bit must be 0 or 1");
  }
  if (p.d.extra.size() != schema.extra_names.size()) {
    throw SchemaError(where + ": expected " + std::to_string(schema.extra_names.size()) +
                      " extra demographic values, got " + std::to_string(p.d.extra.size()));
  }
  if (p.encounters.empty()) throw SchemaError(where + ": patient has no encounters");
  for (const auto& e : p.encounters) {
    if (e.x.size() != schema.F) {
      throw SchemaError(where + ": feature dimension " + std::to_string(e.x.size()) +
                        " does not match schema F=" + std::to_string(schema.F));
    }
    if (e.y != 0 && e.y != 1) throw SchemaError(where + ": label must be 0 or 1");
  }
}

}  // namespace

void validate(const Dataset& ds) {
  for (std::size_t i = 0; i < ds.patients.size(); ++i) {
    check_record(ds.patients[i], ds.schema, "patient " + std::to_string(i));
  }
}

std::string patient_to_json_line(const PatientRecord& p) {
  json enc = json::array();
  for (const auto& e : p.encounters) enc.push_back({{"x", e.x}, {"y", e.y}});
  json j = {{"id", p.id},
            {"d", {{"sensitive", p.d.sensitive_bits}, {"extra", p.d.extra}}},
            {"enc", std::move(enc)}};
  return j.dump();
}

PatientRecord patient_from_json_line(const std::string& line, const Schema& schema,
                                     std::size_t line_no) {
  const std::string where = "line " + std::to_string(line_no);
  PatientRecord p;
  try {
    json j = json::parse(line);
    p.id = j.at("id").get<std::string>();
    const auto& d = j.at("d");
    p.d.sensitive_bits = d.at("sensitive").get<std::vector<int>>();
    if (d.contains("extra")) p.d.extra = d.at("extra").get<std::vector<double>>();
    for (const auto& e : j.at("enc")) {
      p.encounters.push_back({e.at("x").get<std::vector<double>>(), e.at("y").get<int>()});
    }
  } catch (const json::exception& ex) {
    throw ParseError(where + ": " + ex.what());
  }
  check_record(p, schema, where);
  return p;
}

Schema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schema file " + path.string());
  Schema s;
  try {
    json j = json::parse(in);
    s.F = j.at("F").get<std::size_t>();
    s.sensitive_names = j.at("sensitive_names").get<std::vector<std::string>>();
    s.label_name = j.value("label_name", std::string("y"));
    if (j.contains("extra_names")) s.extra_names = j.at("extra_names").get<std::vector<std::string>>();
  } catch (const json::exception& ex) {
    throw ParseError(path.string() + ": " + ex.what());
  }
  return s;
}

void save_schema(const Schema& schema, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write schema file " + path.string());
  json j = {{"F", schema.F},
            {"sensitive_names", schema.sensitive_names},
            {"label_name", schema.label_name},
            {"extra_names", schema.extra_names}};
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file " + path.string());
  Dataset ds;
  ds.schema = schema;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ds.patients.push_back(patient_from_json_line(line, schema, line_no));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset file " + path.string());
  for (const auto& p : ds.patients) out << patient_to_json_line(p) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::tuple<Dataset, Dataset, Dataset> split_dataset(const Dataset& ds,
                                                    const std::array<double, 3>& ratios,
                                                    std::uint64_t seed) {
  double sum = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw SplitError("split ratios must be nonnegative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw SplitError("split ratios must sum to 1");

  const std::size_t n = ds.patients.size();
  const auto part = [&](double r) {
    return static_cast<std::size_t>(std::floor(r * static_cast<double>(n) + 1e-9));
  };
  const std::size_t nonzero = static_cast<std::size_t>(std::count_if(
      ratios.begin(), ratios.end(), [](double r) { return r > 0.0; }));
  if (n < nonzero) {
    throw SplitError("cannot split " + std::to_string(n) + " patients into " +
                     std::to_string(nonzero) + " nonempty parts");
  }
  // A part with a nonzero ratio never comes out empty.
  std::size_t n_val = std::max(part(ratios[1]), ratios[1] > 0 ? std::size_t{1} : 0);
  std::size_t n_test = std::max(part(ratios[2]), ratios[2] > 0 ? std::size_t{1} : 0);
  const std::size_t min_train = ratios[0] > 0 ? 1 : 0;
  while (n_val + n_test + min_train > n) {
    if (n_val >= n_test && n_val > 1) --n_val;
    else --n_test;
  }

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, 0x51));
  std::shuffle(idx.begin(), idx.end(), rng);

  std::vector<std::size_t> val(idx.begin(), idx.begin() + n_val);
  std::vector<std::size_t> test(idx.begin() + n_val, idx.begin() + n_val + n_test);
  std::vector<std::size_t> train(idx.begin() + n_val + n_test, idx.end());

  const auto gather = [&](std::vector<std::size_t>& ids) {
    std::sort(ids.begin(), ids.end());
    Dataset out;
    out.schema = ds.schema;
    out.patients.reserve(ids.size());
    for (auto i : ids) out.patients.push_back(ds.patients[i]);
    return out;
  };
  return {gather(train), gather(val), gather(test)};
}

std::vector<std::vector<double>> feature_history(const PatientRecord& p, std::size_t t) {
  if (t < 1 || t > p.encounters.size()) {
    throw IndexError("encounter index " + std::to_string(t) + " outside [1, " +
                     std::to_string(p.encounters.size()) + "]");
  }
  std::vector<std::vector<double>> out;
  out.reserve(t);
  for (std::size_t k = 0; k < t; ++k) out.push_back(p.encounters[k].x);
  return out;
}

NormStats fit_normalizer(const Dataset& train) {
  if (train.patients.empty()) throw DataError("cannot fit normalizer on an empty dataset");
  const std::size_t F = train.schema.F;
  std::vector<double> sum(F, 0.0), sq(F, 0.0);
  std::size_t count = 0;
  for (const auto& p : train.patients) {
    for (const auto& e : p.encounters) {
      for (std::size_t j = 0; j < F; ++j) sum[j] += e.x[j];
      ++count;
    }
  }
  NormStats s{std::vector<double>(F), std::vector<double>(F)};
  for (std::size_t j = 0; j < F; ++j) s.mean[j] = sum[j] / static_cast<double>(count);
  // Two-pass variance.
  for (const auto& p : train.patients) {
    for (const auto& e : p.encounters) {
      for (std::size_t j = 0; j < F; ++j) {
        const double c = e.x[j] - s.mean[j];
        sq[j] += c * c;
      }
    }
  }
  for (std::size_t j = 0; j < F; ++j) {
    s.std[j] = std::max(std::sqrt(sq[j] / static_cast<double>(count)), kStdFloor);
  }
  return s;
}

Dataset apply_normalizer(const Dataset& ds, const NormStats& stats) {
  if (stats.mean.size() != ds.schema.F || stats.std.size() != ds.schema.F) {
    throw SchemaError("normalizer dimension does not match schema F");
  }
  Dataset out = ds;
  for (auto& p : out.patients) {
    for (auto& e : p.encounters) {
      for (std::size_t j = 0; j < e.x.size(); ++j) {
        e.x[j] = (e.x[j] - stats.mean[j]) / stats.std[j];
      }
    }
  }
  return out;
}

std::string content_hash(const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : ds.patients) {
    h ^= hash_string(patient_to_json_line(p));
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

}  // namespace flmd::data
