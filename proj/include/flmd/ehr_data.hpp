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

#ifndef FLMD_EHR_DATA_HPP
#define FLMD_EHR_DATA_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <tuple>
#include <vector>

namespace flmd::data {

// Sensitive attributes are binary flags in schema order; `extra` holds
// non-sensitive demographic covariates (named by Schema::extra_names).
struct Demographics {
  std::vector<int> sensitive_bits;
  std::vector<double> extra;

  // Flat numeric view: sensitive bits followed by extra.
  std::vector<double> as_vector() const;

  bool operator==(const Demographics&) const = default;
};

struct Encounter {
  std::vector<double> x;
  int y = 0;

  bool operator==(const Encounter&) const = default;
};

struct PatientRecord {
  std::string id;
  Demographics d;
  std::vector<Encounter> encounters;  // chronological, nonempty

  std::size_t num_encounters() const { return encounters.size(); }

  bool operator==(const PatientRecord&) const = default;
};

struct Schema {
  std::size_t F = 0;
  std::vector<std::string> sensitive_names;
  std::string label_name = "y";
  std::vector<std::string> extra_names;

  std::size_t demographic_dim() const {
    return sensitive_names.size() + extra_names.size();
  }
  // Index of a sensitive attribute; throws SchemaError when unknown.
  std::size_t sensitive_index(const std::string& name) const;

  bool operator==(const Schema&) const = default;
};

struct Dataset {
  Schema schema;
  std::vector<PatientRecord> patients;

  std::size_t size() const { return patients.size(); }
  std::size_t total_encounters() const;

  bool operator==(const Dataset&) const = default;
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;
};

inline constexpr double kStdFloor = 1e-6;

// Checks every schema and record invariant; throws SchemaError on violation.
void validate(const Dataset& ds);

// JSON serialization of a single record / schema (used by the JSONL files).
std::string patient_to_json_line(const PatientRecord& p);
PatientRecord patient_from_json_line(const std::string& line, const Schema& schema,
                                     std::size_t line_no);

Schema load_schema(const std::filesystem::path& path);
void save_schema(const Schema& schema, const std::filesystem::path& path);

Dataset load_dataset(const std::filesystem::path& path, const Schema& schema);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);

// Patient-level split. Part sizes are floor(ratio * N); leftover patients go
// to the training part. Deterministic under `seed`.
std::tuple<Dataset, Dataset, Dataset> split_dataset(const Dataset& ds,
                                                    const std::array<double, 3>& ratios,
                                                    std::uint64_t seed);

// Features of encounters 1..t (1-based, inclusive).
std::vector<std::vector<double>> feature_history(const PatientRecord& p, std::size_t t);

NormStats fit_normalizer(const Dataset& train);
Dataset apply_normalizer(const Dataset& ds, const NormStats& stats);

// Order-sensitive FNV-1a hash over the serialized patients; used to show that
// a split stayed fixed across sweep rows.
std::string content_hash(const Dataset& ds);

}  // namespace flmd::data

#endif  // FLMD_EHR_DATA_HPP
