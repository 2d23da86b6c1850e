#pragma once

// A small TOML subset for experiment configs: [dotted.tables], key = value
// with numbers, booleans, "strings" and flat [arrays] of those, and # comments.
// Every value remembers its line so validation errors can point at it.

#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "bcpkd/error.hpp"

namespace bcpkd::config {

struct Value;
using Array = std::vector<Value>;

struct Value {
  std::variant<double, bool, std::string, Array> data;
  int line = 0;
  std::string raw;  // source text, for integer parsing and messages
};

// Flattened document: "table.key" -> value.
class Document {
 public:
  static Document parse(std::istream& is, const std::string& source = "<config>") {
    Document doc;
    doc.source_ = source;
    std::string table;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto text = trim(strip_comment(line));
      if (text.empty()) continue;
      if (text.front() == '[') {
        if (text.back() != ']' || text.size() < 3) doc.fail(lineno, "malformed table header");
        table = trim(text.substr(1, text.size() - 2));
        if (!valid_key(table, true)) doc.fail(lineno, "invalid table name '" + table + "'");
        doc.tables_[table] = lineno;
        continue;
      }
      const auto eq = text.find('=');
      if (eq == std::string::npos) doc.fail(lineno, "expected 'key = value'");
      const auto key = trim(text.substr(0, eq));
      if (!valid_key(key, false)) doc.fail(lineno, "invalid key '" + key + "'");
      const auto full = table.empty() ? key : table + "." + key;
      if (doc.values_.count(full)) doc.fail(lineno, "duplicate key '" + full + "'");
      doc.values_[full] = doc.parse_value(trim(text.substr(eq + 1)), lineno);
    }
    return doc;
  }

  static Document parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path);
    return parse(is, path);
  }

  static Document parse_string(const std::string& text) {
    std::istringstream is(text);
    return parse(is);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  bool has_table(const std::string& table) const {
    if (tables_.count(table)) return true;
    const auto prefix = table + ".";
    for (const auto& [k, v] : values_)
      if (k.rfind(prefix, 0) == 0) return true;
    return false;
  }

  const Value& at(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(source_ + ": missing required field '" + key + "'");
    used_.insert(key);
    return it->second;
  }

  double number(const std::string& key) const {
    const auto& v = at(key);
    if (const auto* d = std::get_if<double>(&v.data)) return *d;
    fail(v.line, "field '" + key + "' must be a number");
  }
  double number(const std::string& key, double fallback) const {
    return has(key) ? number(key) : fallback;
  }

  std::uint64_t integer(const std::string& key) const {
    const auto& v = at(key);
    std::uint64_t out = 0;
    const auto* b = v.raw.data();
    const auto* e = b + v.raw.size();
    auto [ptr, ec] = std::from_chars(b, e, out);
    if (ec != std::errc() || ptr != e)
      fail(v.line, "field '" + key + "' must be a non-negative integer");
    return out;
  }
  std::uint64_t integer(const std::string& key, std::uint64_t fallback) const {
    return has(key) ? integer(key) : fallback;
  }

  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto& v = at(key);
    if (const auto* b = std::get_if<bool>(&v.data)) return *b;
    fail(v.line, "field '" + key + "' must be true or false");
  }

  std::string string(const std::string& key) const {
    const auto& v = at(key);
    if (const auto* s = std::get_if<std::string>(&v.data)) return *s;
    fail(v.line, "field '" + key + "' must be a string");
  }
  std::string string(const std::string& key, const std::string& fallback) const {
    return has(key) ? string(key) : fallback;
  }

  std::vector<double> numbers(const std::string& key) const {
    const auto& v = at(key);
    const auto* arr = std::get_if<Array>(&v.data);
    if (!arr) fail(v.line, "field '" + key + "' must be an array of numbers");
    std::vector<double> out;
    for (const auto& item : *arr) {
      const auto* d = std::get_if<double>(&item.data);
      if (!d) fail(v.line, "field '" + key + "' must be an array of numbers");
      out.push_back(*d);
    }
    return out;
  }
  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) const {
    return has(key) ? numbers(key) : fallback;
  }

  int line_of(const std::string& key) const {
    auto it = values_.find(key);
    return it == values_.end() ? 0 : it->second.line;
  }

  // Keys never read through the accessors; used to reject typos.
  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) out.push_back(k);
    return out;
  }

  [[noreturn]] void fail(int line, const std::string& msg) const {
    throw ConfigError(source_ + ":" + std::to_string(line) + ": " + msg);
  }

  const std::string& source() const noexcept { return source_; }

 private:
  static std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
  }

  static std::string strip_comment(const std::string& s) {
    bool in_string = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') in_string = !in_string;
      if (s[i] == '#' && !in_string) return s.substr(0, i);
    }
    return s;
  }

  static bool valid_key(const std::string& k, bool dotted) {
    if (k.empty() || k.front() == '.' || k.back() == '.') return false;
    for (char c : k) {
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-') continue;
      if (dotted && c == '.') continue;
      return false;
    }
    return true;
  }

  Value parse_value(const std::string& text, int line) const {
    if (text.empty()) fail(line, "missing value");
    Value v;
    v.line = line;
    v.raw = text;
    if (text.front() == '"') {
      if (text.size() < 2 || text.back() != '"') fail(line, "unterminated string");
      v.data = text.substr(1, text.size() - 2);
    } else if (text.front() == '[') {
      if (text.back() != ']') fail(line, "unterminated array");
      Array items;
      const auto inner = trim(text.substr(1, text.size() - 2));
      if (!inner.empty()) {
        std::stringstream ss(inner);
        std::string item;
        while (std::getline(ss, item, ',')) {
          item = trim(item);
          if (item.empty()) continue;  // trailing comma
          if (item.front() == '[') fail(line, "nested arrays are not supported");
          items.push_back(parse_value(item, line));
        }
      }
      v.data = std::move(items);
    } else if (text == "true" || text == "false") {
      v.data = text == "true";
    } else {
      std::string digits;
      for (char c : text)
        if (c != '_') digits += c;
      v.raw = digits;
      char* end = nullptr;
      const double d = std::strtod(digits.c_str(), &end);
      if (end != digits.c_str() + digits.size()) fail(line, "cannot parse value '" + text + "'");
      v.data = d;
    }
    return v;
  }

  std::string source_;
  std::map<std::string, Value> values_;
  std::map<std::string, int> tables_;
  mutable std::set<std::string> used_;
};

}  // namespace bcpkd::config
