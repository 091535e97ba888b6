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

#ifndef FLMD_CONFIG_HPP
#define FLMD_CONFIG_HPP

#include <filesystem>
#include <string_view>

#include <json.hpp>

namespace flmd::config {

// Reads the TOML subset used by the config files into JSON:
//   # comments, [table] and [dotted.table] headers, bare or quoted keys,
//   basic "strings", integers, floats (incl. 1e-5, inf, nan), booleans and
//   arrays (which may span lines and nest).
// Inline tables, dates and literal/multiline strings are rejected with
// ConfigError.
nlohmann::json parse_toml(std::string_view text);

// JSON when the file extension is .json or the first non-blank character is
// '{', TOML otherwise. Throws ConfigError on malformed input, IoError when
// unreadable.
nlohmann::json load_document(const std::filesystem::path& path);

}  // namespace flmd::config

#endif  // FLMD_CONFIG_HPP
