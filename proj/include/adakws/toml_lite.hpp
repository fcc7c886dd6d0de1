/* Copyright 2026 The adakws Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// Minimal TOML reader covering the subset the config schema uses: [table]
// and [[array-of-tables]] headers (dotted paths allowed), `key = value`
// pairs with basic strings, integers, floats, booleans, single-line arrays
// (nesting allowed), and # comments. Values land in an nlohmann::json tree;
// anything outside the subset is a hard error with a line number.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "adakws/common.hpp"

namespace adakws::toml {

class ParseError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

namespace detail {

struct Cursor {
  const std::string& text;
  size_t pos = 0;
  int line;
  const std::string& source;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(str_cat(source, ":", line, ": ", msg));
  }
  bool done() const { return pos >= text.size(); }
  char peek() const { return text[pos]; }
  void skip_ws() {
    while (!done() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
  }
};

inline std::string parse_basic_string(Cursor& c) {
  if (c.peek() != '"') c.fail("expected '\"'");
  ++c.pos;
  std::string out;
  while (!c.done() && c.peek() != '"') {
    char ch = c.peek();
    if (ch == '\\') {
      ++c.pos;
      if (c.done()) c.fail("dangling escape");
      switch (c.peek()) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        default: c.fail(str_cat("unsupported escape \\", c.peek()));
      }
    } else {
      out += ch;
    }
    ++c.pos;
  }
  if (c.done()) c.fail("unterminated string");
  ++c.pos;  // closing quote
  return out;
}

inline nlohmann::json parse_value(Cursor& c);

inline nlohmann::json parse_array(Cursor& c) {
  ++c.pos;  // '['
  nlohmann::json arr = nlohmann::json::array();
  c.skip_ws();
  if (!c.done() && c.peek() == ']') {
    ++c.pos;
    return arr;
  }
  while (true) {
    c.skip_ws();
    arr.push_back(parse_value(c));
    c.skip_ws();
    if (c.done()) c.fail("unterminated array");
    if (c.peek() == ',') {
      ++c.pos;
      c.skip_ws();
      if (!c.done() && c.peek() == ']') {  // trailing comma
        ++c.pos;
        return arr;
      }
      continue;
    }
    if (c.peek() == ']') {
      ++c.pos;
      return arr;
    }
    c.fail("expected ',' or ']' in array");
  }
}

inline nlohmann::json parse_value(Cursor& c) {
  c.skip_ws();
  if (c.done()) c.fail("expected a value");
  const char ch = c.peek();
  if (ch == '"') return parse_basic_string(c);
  if (ch == '[') return parse_array(c);
  // bare scalar: bool / integer / float
  size_t start = c.pos;
  while (!c.done() && c.peek() != ',' && c.peek() != ']' && c.peek() != '#' &&
         c.peek() != ' ' && c.peek() != '\t') {
    ++c.pos;
  }
  std::string tok = c.text.substr(start, c.pos - start);
  if (tok == "true") return true;
  if (tok == "false") return false;
  if (tok.empty()) c.fail("empty value");
  const bool looks_float = tok.find_first_of(".eE") != std::string::npos &&
                           !(tok.size() > 1 && (tok[0] == '0') && tok[1] == 'x');
  try {
    size_t used = 0;
    if (!looks_float) {
      const int64_t v = std::stoll(tok, &used);
      if (used == tok.size()) {
        if (v >= 0) return static_cast<uint64_t>(v);
        return v;
      }
    }
    const double d = std::stod(tok, &used);
    if (used != tok.size()) c.fail(str_cat("malformed number '", tok, "'"));
    return d;
  } catch (const std::exception&) {
    c.fail(str_cat("cannot parse value '", tok, "'"));
  }
}

inline std::vector<std::string> parse_key_path(Cursor& c, char terminator) {
  std::vector<std::string> path;
  std::string part;
  while (!c.done() && c.peek() != terminator) {
    const char ch = c.peek();
    if (ch == '.') {
      if (part.empty()) c.fail("empty key segment");
      path.push_back(part);
      part.clear();
    } else if (std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-') {
      part += ch;
    } else if (ch == ' ' || ch == '\t') {
      // allowed around dots/terminator only; tolerate and let caller verify
    } else {
      c.fail(str_cat("unexpected character '", ch, "' in key"));
    }
    ++c.pos;
  }
  if (part.empty()) c.fail("empty key");
  path.push_back(part);
  return path;
}

inline nlohmann::json* descend(nlohmann::json* node, const std::vector<std::string>& path,
                               size_t upto, Cursor& c) {
  for (size_t i = 0; i < upto; ++i) {
    nlohmann::json& slot = (*node)[path[i]];
    if (slot.is_null()) slot = nlohmann::json::object();
    if (slot.is_array()) {
      if (slot.empty()) c.fail(str_cat("array of tables '", path[i], "' is empty"));
      node = &slot.back();
    } else if (slot.is_object()) {
      node = &slot;
    } else {
      c.fail(str_cat("key '", path[i], "' is already a value"));
    }
  }
  return node;
}

}  // namespace detail

inline nlohmann::json parse(const std::string& text, const std::string& source = "<toml>") {
  nlohmann::json root = nlohmann::json::object();
  nlohmann::json* current = &root;

  size_t pos = 0;
  int line_no = 0;
  while (pos <= text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();

    detail::Cursor c{line, 0, line_no, source};
    c.skip_ws();
    if (c.done() || c.peek() == '#') {
      if (pos > text.size()) break;
      continue;
    }

    if (c.peek() == '[') {
      const bool array_of_tables = line.size() > c.pos + 1 && line[c.pos + 1] == '[';
      c.pos += array_of_tables ? 2 : 1;
      auto path = detail::parse_key_path(c, ']');
      if (c.done() || c.peek() != ']') c.fail("unterminated table header");
      c.pos += array_of_tables ? 2 : 1;
      c.skip_ws();
      if (!c.done() && c.peek() != '#') c.fail("trailing characters after table header");

      nlohmann::json* parent = detail::descend(&root, path, path.size() - 1, c);
      nlohmann::json& slot = (*parent)[path.back()];
      if (array_of_tables) {
        if (slot.is_null()) slot = nlohmann::json::array();
        if (!slot.is_array()) c.fail(str_cat("'", path.back(), "' is not an array of tables"));
        slot.push_back(nlohmann::json::object());
        current = &slot.back();
      } else {
        if (slot.is_null()) slot = nlohmann::json::object();
        if (!slot.is_object()) c.fail(str_cat("table '", path.back(), "' conflicts with a value"));
        current = &slot;
      }
      if (pos > text.size()) break;
      continue;
    }

    // key = value
    auto path = detail::parse_key_path(c, '=');
    if (c.done() || c.peek() != '=') c.fail("expected '=' after key");
    ++c.pos;
    nlohmann::json value = detail::parse_value(c);
    c.skip_ws();
    if (!c.done() && c.peek() != '#') c.fail("trailing characters after value");

    nlohmann::json* parent = detail::descend(current, path, path.size() - 1, c);
    if (parent->contains(path.back())) c.fail(str_cat("duplicate key '", path.back(), "'"));
    (*parent)[path.back()] = std::move(value);
    if (pos > text.size()) break;
  }
  return root;
}

inline nlohmann::json parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(str_cat("cannot open config file ", path));
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse(text, path);
}

}  // namespace adakws::toml
