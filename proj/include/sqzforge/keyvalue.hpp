#pragma once

// Strict key/value section format shared by the material coefficient file,
// geometry/stack descriptions, efficiency budgets and CLI run configs.
//
//   # comment (also ';')
//   [kind]            or   [kind name]
//   key = value
//
// Keys are unique within a section. Values are raw strings; typed accessors
// parse them on demand and report the originating line on failure.

#include <algorithm>
#include <charconv>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sqzforge/errors.hpp"

namespace sqz::kv {

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end) return std::nullopt;
  return v;
}

}  // namespace detail

struct Entry {
  std::string key;
  std::string value;
  int line = 0;
};

class Section {
 public:
  Section() = default;
  Section(std::string kind, std::string name, std::string source, int line)
      : kind_(std::move(kind)), name_(std::move(name)), source_(std::move(source)), line_(line) {}

  [[nodiscard]] const std::string& kind() const { return kind_; }
  [[nodiscard]] const std::string& name() const { return name_; }
  [[nodiscard]] int line() const { return line_; }
  [[nodiscard]] const std::vector<Entry>& entries() const { return entries_; }

  void set(const std::string& key, std::string value, int line = 0) {
    for (auto& e : entries_) {
      if (e.key == key) {
        e.value = std::move(value);
        return;
      }
    }
    entries_.push_back({key, std::move(value), line});
  }

  [[nodiscard]] const Entry* find(std::string_view key) const {
    for (const auto& e : entries_)
      if (e.key == key) return &e;
    return nullptr;
  }
  [[nodiscard]] bool has(std::string_view key) const { return find(key) != nullptr; }

  [[nodiscard]] const std::string& get(std::string_view key) const {
    const Entry* e = find(key);
    if (!e) throw ConfigError(where(line_) + "missing key '" + std::string(key) + "' in [" + label() + "]");
    return e->value;
  }

  [[nodiscard]] std::string get_or(std::string_view key, std::string fallback) const {
    const Entry* e = find(key);
    return e ? e->value : std::move(fallback);
  }

  [[nodiscard]] double get_double(std::string_view key) const {
    const Entry* e = find(key);
    if (!e) throw ConfigError(where(line_) + "missing key '" + std::string(key) + "' in [" + label() + "]");
    return to_double(*e);
  }

  [[nodiscard]] double get_double_or(std::string_view key, double fallback) const {
    const Entry* e = find(key);
    return e ? to_double(*e) : fallback;
  }

  [[nodiscard]] std::vector<double> get_list(std::string_view key) const {
    const Entry* e = find(key);
    if (!e) throw ConfigError(where(line_) + "missing key '" + std::string(key) + "' in [" + label() + "]");
    std::vector<double> out;
    std::string_view rest = e->value;
    while (true) {
      const auto comma = rest.find(',');
      const auto item = detail::trim(rest.substr(0, comma));
      if (!item.empty()) {
        const auto v = detail::parse_double(item);
        if (!v) throw ConfigError(where(e->line) + "key '" + e->key + "': '" + std::string(item) + "' is not a number");
        out.push_back(*v);
      }
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    return out;
  }

  /// Rejects any key not in `allowed`.
  void require_known(std::initializer_list<std::string_view> allowed) const {
    for (const auto& e : entries_) {
      if (std::find(allowed.begin(), allowed.end(), std::string_view(e.key)) == allowed.end())
        throw ConfigError(where(e.line) + "unknown key '" + e.key + "' in [" + label() + "]");
    }
  }

  [[nodiscard]] std::string label() const { return name_.empty() ? kind_ : kind_ + " " + name_; }

 private:
  [[nodiscard]] std::string where(int line) const {
    return source_ + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": ";
  }

  [[nodiscard]] double to_double(const Entry& e) const {
    const auto v = detail::parse_double(e.value);
    if (!v) throw ConfigError(where(e.line) + "key '" + e.key + "': '" + e.value + "' is not a number");
    return *v;
  }

  std::string kind_;
  std::string name_;
  std::string source_;
  int line_ = 0;
  std::vector<Entry> entries_;
};

class Document {
 public:
  [[nodiscard]] static Document parse(std::string_view text, std::string source = "<string>") {
    Document doc;
    doc.source_ = source;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const auto nl = text.find('\n', pos);
      const auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
      pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
      ++line_no;
      auto line = detail::trim(raw);
      if (line.empty() || line.front() == '#' || line.front() == ';') continue;
      const std::string here = source + ":" + std::to_string(line_no) + ": ";
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError(here + "unterminated section header");
        auto header = detail::trim(line.substr(1, line.size() - 2));
        if (header.empty()) throw ConfigError(here + "empty section header");
        const auto space = header.find_first_of(" \t");
        std::string kind(header.substr(0, space));
        std::string name = space == std::string_view::npos ? std::string() : std::string(detail::trim(header.substr(space)));
        for (const auto& s : doc.sections_) {
          if (s.kind() == kind && s.name() == name)
            throw ConfigError(here + "duplicate section [" + std::string(header) + "]");
        }
        doc.sections_.emplace_back(std::move(kind), std::move(name), source, line_no);
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError(here + "expected 'key = value'");
      if (doc.sections_.empty()) throw ConfigError(here + "key/value pair outside of any section");
      const std::string key(detail::trim(line.substr(0, eq)));
      const std::string value(detail::trim(line.substr(eq + 1)));
      if (key.empty()) throw ConfigError(here + "empty key");
      auto& sec = doc.sections_.back();
      if (sec.has(key)) throw ConfigError(here + "duplicate key '" + key + "'");
      sec.set(key, value, line_no);
    }
    return doc;
  }

  [[nodiscard]] static Document load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  [[nodiscard]] std::string to_string() const {
    std::ostringstream out;
    bool first = true;
    for (const auto& s : sections_) {
      if (!first) out << '\n';
      first = false;
      out << '[' << s.label() << "]\n";
      for (const auto& e : s.entries()) out << e.key << " = " << e.value << '\n';
    }
    return out.str();
  }

  [[nodiscard]] const std::vector<Section>& sections() const { return sections_; }
  [[nodiscard]] const std::string& source() const { return source_; }

  Section& add(std::string kind, std::string name = {}) {
    sections_.emplace_back(std::move(kind), std::move(name), source_, 0);
    return sections_.back();
  }

  [[nodiscard]] const Section* find(std::string_view kind, std::string_view name = {}) const {
    for (const auto& s : sections_)
      if (s.kind() == kind && s.name() == name) return &s;
    return nullptr;
  }

  [[nodiscard]] std::vector<const Section*> all(std::string_view kind) const {
    std::vector<const Section*> out;
    for (const auto& s : sections_)
      if (s.kind() == kind) out.push_back(&s);
    return out;
  }

  /// Rejects any section kind not in `allowed`.
  void require_known_kinds(std::initializer_list<std::string_view> allowed) const {
    for (const auto& s : sections_) {
      if (std::find(allowed.begin(), allowed.end(), std::string_view(s.kind())) == allowed.end())
        throw ConfigError(source_ + ":" + std::to_string(s.line()) + ": unknown section [" + s.label() + "]");
    }
  }

 private:
  std::string source_;
  std::vector<Section> sections_;
};

}  // namespace sqz::kv
