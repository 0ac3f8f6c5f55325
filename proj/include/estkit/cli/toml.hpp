#pragma once

#include <cctype>
#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "estkit/core/error.hpp"

// TOML subset for run files: [tables] (dotted names), key = value with dotted
// keys, basic and literal strings, integers, floats, booleans, and (possibly
// multi-line) arrays. Inline tables, arrays of tables and dates are rejected.
namespace estkit::cli {

namespace toml_detail {

class Parser {
 public:
  Parser(const std::string& text, std::string origin) : s_(text), origin_(std::move(origin)) {}

  nlohmann::json parse_document() {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* table = &root;
    while (pos_ < s_.size()) {
      skip_ws_comments_newlines();
      if (pos_ >= s_.size()) break;
      if (s_[pos_] == '[') {
        if (peek(1) == '[') fail("arrays of tables are not supported");
        ++pos_;
        skip_ws();
        const auto path = parse_key();
        skip_ws();
        expect(']');
        table = &root;
        for (const auto& k : path) {
          auto& next = (*table)[k];
          if (next.is_null()) next = nlohmann::json::object();
          if (!next.is_object()) fail("'" + k + "' is already a value, not a table");
          table = &next;
        }
      } else {
        const auto path = parse_key();
        skip_ws();
        expect('=');
        skip_ws();
        nlohmann::json value = parse_value();
        nlohmann::json* target = table;
        for (std::size_t i = 0; i + 1 < path.size(); ++i) {
          auto& next = (*target)[path[i]];
          if (next.is_null()) next = nlohmann::json::object();
          if (!next.is_object()) fail("'" + path[i] + "' is already a value, not a table");
          target = &next;
        }
        if (target->contains(path.back())) fail("duplicate key '" + path.back() + "'");
        (*target)[path.back()] = std::move(value);
      }
      skip_ws();
      skip_comment();
      if (pos_ < s_.size() && s_[pos_] != '\n' && s_[pos_] != '\r') fail("unexpected text after value");
    }
    return root;
  }

  // A lone value, as given on the command line.
  nlohmann::json parse_single_value() {
    skip_ws();
    nlohmann::json v = parse_value();
    skip_ws();
    if (pos_ != s_.size()) fail("unexpected text after value");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    std::size_t line = 1;
    for (std::size_t i = 0; i < pos_ && i < s_.size(); ++i) line += s_[i] == '\n';
    throw ConfigError(origin_ + ":" + std::to_string(line) + ": " + msg);
  }

  char peek(std::size_t ahead = 0) const { return pos_ + ahead < s_.size() ? s_[pos_ + ahead] : '\0'; }

  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  void skip_ws() {
    while (peek() == ' ' || peek() == '\t') ++pos_;
  }

  void skip_comment() {
    if (peek() == '#')
      while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
  }

  void skip_ws_comments_newlines() {
    for (;;) {
      skip_ws();
      skip_comment();
      if (peek() == '\n' || peek() == '\r') {
        ++pos_;
        continue;
      }
      return;
    }
  }

  std::vector<std::string> parse_key() {
    std::vector<std::string> parts;
    for (;;) {
      skip_ws();
      if (peek() == '"') {
        parts.push_back(parse_basic_string());
      } else if (peek() == '\'') {
        parts.push_back(parse_literal_string());
      } else {
        std::string k;
        while (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-') k += s_[pos_++];
        if (k.empty()) fail("expected a key");
        parts.push_back(k);
      }
      skip_ws();
      if (peek() != '.') return parts;
      ++pos_;
    }
  }

  std::string parse_basic_string() {
    expect('"');
    std::string out;
    for (;;) {
      if (pos_ >= s_.size() || s_[pos_] == '\n') fail("unterminated string");
      const char c = s_[pos_++];
      if (c == '"') return out;
      if (c != '\\') {
        out += c;
        continue;
      }
      const char e = peek();
      ++pos_;
      switch (e) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        default: fail(std::string("unsupported escape '\\") + e + "'");
      }
    }
  }

  std::string parse_literal_string() {
    expect('\'');
    const auto end = s_.find('\'', pos_);
    if (end == std::string::npos || s_.find('\n', pos_) < end) fail("unterminated string");
    std::string out = s_.substr(pos_, end - pos_);
    pos_ = end + 1;
    return out;
  }

  nlohmann::json parse_value() {
    const char c = peek();
    if (c == '"') return parse_basic_string();
    if (c == '\'') return parse_literal_string();
    if (c == '[') return parse_array();
    if (c == '{') fail("inline tables are not supported");
    std::string tok;
    while (pos_ < s_.size() && !std::isspace(static_cast<unsigned char>(s_[pos_])) && s_[pos_] != ',' &&
           s_[pos_] != ']' && s_[pos_] != '#')
      tok += s_[pos_++];
    if (tok == "true") return true;
    if (tok == "false") return false;
    if (tok.empty()) fail("expected a value");
    return parse_number(tok);
  }

  nlohmann::json parse_number(std::string tok) {
    std::string clean;
    for (char ch : tok)
      if (ch != '_') clean += ch;
    if (clean == "inf" || clean == "+inf") return std::numeric_limits<double>::infinity();
    if (clean == "-inf") return -std::numeric_limits<double>::infinity();
    if (clean == "nan" || clean == "+nan" || clean == "-nan") return std::nan("");
    const bool is_float = clean.find_first_of(".eE") != std::string::npos;
    try {
      std::size_t used = 0;
      if (is_float) {
        const double v = std::stod(clean, &used);
        if (used == clean.size()) return v;
      } else {
        const long long v = std::stoll(clean, &used, 10);
        if (used == clean.size()) return v;
      }
    } catch (const std::exception&) {
    }
    fail("invalid value '" + tok + "'");
  }

  nlohmann::json parse_array() {
    expect('[');
    nlohmann::json arr = nlohmann::json::array();
    for (;;) {
      skip_ws_comments_newlines();
      if (peek() == ']') {
        ++pos_;
        return arr;
      }
      arr.push_back(parse_value());
      skip_ws_comments_newlines();
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      if (peek() == ']') {
        ++pos_;
        return arr;
      }
      fail("expected ',' or ']' in array");
    }
  }

  const std::string& s_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace toml_detail

inline nlohmann::json parse_toml(const std::string& text, const std::string& origin = "<toml>") {
  return toml_detail::Parser(text, origin).parse_document();
}

inline nlohmann::json parse_toml_value(const std::string& text, const std::string& origin = "<value>") {
  return toml_detail::Parser(text, origin).parse_single_value();
}

}  // namespace estkit::cli
