#pragma once

// Sampled 1-D series and the CSV schema shared by simulator output and measured
// data:
//
//   #key=value            any number of metadata lines, `x_kind` among them
//   <x column>,<y column> header row; names carry their unit suffix
//   1549.99,0.98          data rows; x strictly monotone
//
// A Table is the same layout with any number of y columns (squeezing datasets
// carry S− and S+ side by side).

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sqzforge/errors.hpp"
#include "sqzforge/keyvalue.hpp"

namespace sqz {

enum class XKind { wavelength_nm, time_s, frequency_hz, power_mw };

inline const char* to_string(XKind k) {
  switch (k) {
    case XKind::wavelength_nm: return "wavelength_nm";
    case XKind::time_s: return "time_s";
    case XKind::frequency_hz: return "frequency_hz";
    case XKind::power_mw: return "power_mw";
  }
  return "?";
}

inline XKind parse_xkind(std::string_view s) {
  for (XKind k : {XKind::wavelength_nm, XKind::time_s, XKind::frequency_hz, XKind::power_mw})
    if (s == to_string(k)) return k;
  throw InputError("unknown x_kind '" + std::string(s) + "' (expected wavelength_nm, time_s, frequency_hz or power_mw)");
}

/// Formats a double compactly and reproducibly (shortest form that round-trips
/// at 12 significant digits).
inline std::string format_number(double v, int digits = 12) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

using Meta = std::vector<std::pair<std::string, std::string>>;

inline const std::string* meta_find(const Meta& m, std::string_view key) {
  for (const auto& [k, v] : m)
    if (k == key) return &v;
  return nullptr;
}

inline void meta_set(Meta& m, const std::string& key, const std::string& value) {
  for (auto& [k, v] : m) {
    if (k == key) {
      v = value;
      return;
    }
  }
  m.emplace_back(key, value);
}

struct Table {
  Meta meta;
  std::vector<std::string> columns;           // first one is x
  std::vector<std::vector<double>> values;  // values[c][row]

  [[nodiscard]] std::size_t rows() const { return values.empty() ? 0 : values.front().size(); }

  [[nodiscard]] int column(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<int>(i);
    return -1;
  }

  [[nodiscard]] const std::vector<double>& require(std::string_view name, std::string_view source = "table") const {
    const int c = column(name);
    if (c < 0) throw InputError(std::string(source) + ": missing column '" + std::string(name) + "'");
    return values[static_cast<std::size_t>(c)];
  }

  [[nodiscard]] std::string to_csv() const {
    std::ostringstream out;
    for (const auto& [k, v] : meta) out << '#' << k << '=' << v << '\n';
    for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << columns[c];
    out << '\n';
    for (std::size_t r = 0; r < rows(); ++r) {
      for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << format_number(values[c][r]);
      out << '\n';
    }
    return out.str();
  }

  /// Parses the CSV layout above. Rows must have as many fields as the header,
  /// every field must be a finite number and the first column strictly monotone;
  /// violations raise InputError naming the line.
  [[nodiscard]] static Table parse(std::string_view text, const std::string& source = "<csv>") {
    Table t;
    int line_no = 0;
    bool header = false;
    auto fail = [&](const std::string& what) {
      throw InputError(source + ":" + std::to_string(line_no) + ": " + what);
    };
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const auto nl = text.find('\n', pos);
      std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
      pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
      ++line_no;
      line = kv::detail::trim(line);
      if (line.empty()) continue;
      if (line.front() == '#') {
        if (header) fail("metadata lines must precede the header row");
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) continue;  // plain comment
        const auto key = std::string(kv::detail::trim(line.substr(1, eq - 1)));
        if (key.empty()) fail("metadata line without a key");
        meta_set(t.meta, key, std::string(kv::detail::trim(line.substr(eq + 1))));
        continue;
      }
      std::vector<std::string_view> fields;
      std::size_t start = 0;
      while (true) {
        const auto comma = line.find(',', start);
        fields.push_back(kv::detail::trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                                               : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
      }
      if (!header) {
        if (fields.size() < 2) fail("header row needs an x column and at least one y column");
        for (auto f : fields) {
          if (f.empty()) fail("empty column name in header row");
          t.columns.emplace_back(f);
        }
        t.values.assign(t.columns.size(), {});
        header = true;
        continue;
      }
      if (fields.size() != t.columns.size())
        fail("expected " + std::to_string(t.columns.size()) + " fields, found " + std::to_string(fields.size()));
      for (std::size_t c = 0; c < fields.size(); ++c) {
        const auto v = kv::detail::parse_double(fields[c]);
        if (!v || !std::isfinite(*v)) fail("field " + std::to_string(c + 1) + " is not a finite number");
        t.values[c].push_back(*v);
      }
      const auto& x = t.values.front();
      const std::size_t n = x.size();
      if (n >= 2) {
        const bool up = x[1] > x[0];
        if (x[1] == x[0] || (n > 2 && (up ? !(x[n - 1] > x[n - 2]) : !(x[n - 1] < x[n - 2]))))
          fail("x column must be strictly monotone (schema rule: x strictly increasing or decreasing)");
      }
    }
    if (!header) throw InputError(source + ": no header row");
    if (t.rows() == 0) throw InputError(source + ": no data rows");
    return t;
  }

  [[nodiscard]] static Table load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }
};

/// Two-column sampled series.
struct Trace {
  XKind x_kind = XKind::wavelength_nm;
  std::string y_name = "transmission_fraction";
  std::vector<double> x;
  std::vector<double> y;
  Meta meta;

  void validate() const {
    if (x.size() != y.size()) throw InputError("trace: x and y differ in length");
    if (x.size() < 2) return;
    const bool up = x[1] > x[0];
    for (std::size_t i = 1; i < x.size(); ++i)
      if (up ? !(x[i] > x[i - 1]) : !(x[i] < x[i - 1])) throw InputError("trace: x must be strictly monotone");
  }

  [[nodiscard]] std::string meta_or(std::string_view key, std::string fallback) const {
    const auto* v = meta_find(meta, key);
    return v ? *v : fallback;
  }

  [[nodiscard]] double meta_double(std::string_view key) const {
    const auto* v = meta_find(meta, key);
    if (!v) throw InputError("trace: missing metadata '" + std::string(key) + "'");
    const auto d = kv::detail::parse_double(*v);
    if (!d) throw InputError("trace: metadata '" + std::string(key) + "' is not a number");
    return *d;
  }

  [[nodiscard]] Table to_table() const {
    validate();
    Table t;
    t.meta.emplace_back("x_kind", to_string(x_kind));
    for (const auto& kv : meta)
      if (kv.first != "x_kind") t.meta.push_back(kv);
    t.columns = {to_string(x_kind), y_name};
    t.values = {x, y};
    return t;
  }

  [[nodiscard]] std::string to_csv() const { return to_table().to_csv(); }

  [[nodiscard]] static Trace from_table(const Table& t, const std::string& source = "<csv>") {
    if (t.columns.size() != 2)
      throw InputError(source + ": a trace has exactly two columns, found " + std::to_string(t.columns.size()));
    Trace tr;
    const auto* kind = meta_find(t.meta, "x_kind");
    tr.x_kind = parse_xkind(kind ? *kind : t.columns[0]);
    if (t.columns[0] != to_string(tr.x_kind))
      throw InputError(source + ": x column '" + t.columns[0] + "' does not match x_kind " + to_string(tr.x_kind));
    tr.y_name = t.columns[1];
    tr.x = t.values[0];
    tr.y = t.values[1];
    for (const auto& kv : t.meta)
      if (kv.first != "x_kind") tr.meta.push_back(kv);
    return tr;
  }

  [[nodiscard]] static Trace parse(std::string_view text, const std::string& source = "<csv>") {
    return from_table(Table::parse(text, source), source);
  }
  [[nodiscard]] static Trace load(const std::string& path) { return from_table(Table::load(path), path); }
};

}  // namespace sqz
