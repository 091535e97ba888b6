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

#include "flmd/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>

#include "flmd/error.hpp"

namespace flmd::config {

using nlohmann::json;

namespace {

class Parser {
 public:
  explicit Parser(std::string_view text) : s_(text) {}

  json run() {
    json root = json::object();
    json* table = &root;
    while (true) {
      skip_blank_lines();
      if (eof()) break;
      if (peek() == '[') {
        table = &open_table(root);
      } else {
        parse_pair(*table);
      }
      end_of_line();
    }
    return root;
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::set<std::string> headers_;

  bool eof() const { return pos_ >= s_.size(); }
  char peek() const { return eof() ? '\0' : s_[pos_]; }
  char get() {
    const char c = s_[pos_++];
    if (c == '\n') ++line_;
    return c;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("config line " + std::to_string(line_) + ": " + what);
  }

  void skip_inline_space() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) get();
  }
  void skip_comment() {
    if (peek() == '#') {
      while (!eof() && peek() != '\n') get();
    }
  }
  void skip_blank_lines() {
    while (!eof()) {
      skip_inline_space();
      skip_comment();
      if (peek() == '\n' || peek() == '\r') {
        get();
      } else {
        break;
      }
    }
  }
  // Whitespace, comments and newlines, as allowed inside arrays.
  void skip_any_space() {
    while (!eof()) {
      const char c = peek();
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        get();
      } else if (c == '#') {
        skip_comment();
      } else {
        break;
      }
    }
  }
  void end_of_line() {
    skip_inline_space();
    skip_comment();
    if (eof()) return;
    if (peek() == '\r') get();
    if (eof()) return;
    if (peek() != '\n') fail("unexpected trailing content");
    get();
  }

  std::string parse_key_part() {
    skip_inline_space();
    if (peek() == '"') return parse_string();
    std::string key;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) {
      key += get();
    }
    if (key.empty()) fail("expected a key");
    return key;
  }

  std::vector<std::string> parse_dotted_key() {
    std::vector<std::string> parts{parse_key_part()};
    skip_inline_space();
    while (peek() == '.') {
      get();
      parts.push_back(parse_key_part());
      skip_inline_space();
    }
    return parts;
  }

  json& descend(json& from, const std::vector<std::string>& path, std::size_t n) {
    json* cur = &from;
    for (std::size_t i = 0; i < n; ++i) {
      json& next = (*cur)[path[i]];
      if (next.is_null()) next = json::object();
      if (!next.is_object()) fail("key '" + path[i] + "' is not a table");
      cur = &next;
    }
    return *cur;
  }

  json& open_table(json& root) {
    get();  // '['
    if (peek() == '[') fail("arrays of tables are not supported");
    const auto path = parse_dotted_key();
    if (peek() != ']') fail("expected ']'");
    get();
    std::string joined;
    for (const auto& k : path) joined += k + '\x1f';
    if (!headers_.insert(joined).second) fail("table defined twice");
    return descend(root, path, path.size());
  }

  void parse_pair(json& table) {
    const auto path = parse_dotted_key();
    if (peek() != '=') fail("expected '='");
    get();
    skip_inline_space();
    json& parent = descend(table, path, path.size() - 1);
    if (parent.contains(path.back())) fail("duplicate key '" + path.back() + "'");
    parent[path.back()] = parse_value();
  }

  std::string parse_string() {
    if (get() != '"') fail("expected '\"'");
    if (peek() == '"' && pos_ + 1 < s_.size() && s_[pos_ + 1] == '"') fail("multiline strings are not supported");
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = get();
      if (c == '"') break;
      if (c != '\\') {
        out += c;
        continue;
      }
      if (eof()) fail("unterminated escape");
      switch (const char e = get()) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        default: fail(std::string("unsupported escape \\") + e);
      }
    }
    return out;
  }

  json parse_array() {
    get();  // '['
    json arr = json::array();
    skip_any_space();
    while (peek() != ']') {
      if (eof()) fail("unterminated array");
      arr.push_back(parse_value());
      skip_any_space();
      if (peek() == ',') {
        get();
        skip_any_space();
      } else if (peek() != ']') {
        fail("expected ',' or ']' in array");
      }
    }
    get();
    return arr;
  }

  json parse_scalar() {
    std::string tok;
    while (!eof() && peek() != ',' && peek() != ']' && peek() != '#' && peek() != '\n' &&
           peek() != '\r' && peek() != ' ' && peek() != '\t') {
      tok += get();
    }
    if (tok.empty()) fail("expected a value");
    if (tok == "true") return true;
    if (tok == "false") return false;
    std::string num;
    for (char c : tok) {
      if (c != '_') num += c;
    }
    if (num == "inf" || num == "+inf") return std::numeric_limits<double>::infinity();
    if (num == "-inf") return -std::numeric_limits<double>::infinity();
    if (num == "nan" || num == "+nan" || num == "-nan") return std::numeric_limits<double>::quiet_NaN();
    const bool is_float = num.find_first_of(".eE") != std::string::npos;
    const char* b = num.data() + (num[0] == '+' ? 1 : 0);
    const char* e = num.data() + num.size();
    if (!is_float) {
      if (num[0] == '-') {
        std::int64_t v = 0;
        const auto r = std::from_chars(b, e, v);
        if (r.ec == std::errc() && r.ptr == e) return v;
      } else {
        std::uint64_t v = 0;
        const auto r = std::from_chars(b, e, v);
        if (r.ec == std::errc() && r.ptr == e) return v;
      }
    } else {
      double v = 0.0;
      const auto r = std::from_chars(b, e, v);
      if (r.ec == std::errc() && r.ptr == e) return v;
    }
    fail("cannot parse value '" + tok + "'");
  }

  json parse_value() {
    const char c = peek();
    if (c == '"') return parse_string();
    if (c == '\'') fail("literal strings are not supported");
    if (c == '[') return parse_array();
    if (c == '{') fail("inline tables are not supported");
    return parse_scalar();
  }
};

}  // namespace

json parse_toml(std::string_view text) { return Parser(text).run(); }

json load_document(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  const bool is_json = path.extension() == ".json" || (first != std::string::npos && text[first] == '{');
  if (!is_json) return parse_toml(text);
  try {
    return json::parse(text);
  } catch (const json::exception& ex) {
    throw ConfigError(path.string() + ": " + ex.what());
  }
}

}  // namespace flmd::config
