#pragma once

// Run configuration for the command-line front end. One key/value file holds
// every section a command may read; all sections and keys are checked up front,
// whichever command runs, so a typo never silently falls back to a default.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sqzforge/cavity.hpp"
#include "sqzforge/errors.hpp"
#include "sqzforge/geometry.hpp"
#include "sqzforge/keyvalue.hpp"
#include "sqzforge/modesolver.hpp"
#include "sqzforge/opo.hpp"
#include "sqzforge/trace.hpp"

#ifndef SQZ_DEFAULT_MATERIALS
#define SQZ_DEFAULT_MATERIALS "materials.kv"
#endif

namespace sqz {

namespace fs = std::filesystem;

/// Section kinds and their keys. `fit` sections carry the subcommand as name.
inline const std::map<std::string, std::vector<std::string>>& config_schema() {
  static const std::map<std::string, std::vector<std::string>> schema = {
      {"run", {"materials", "out", "seed", "jobs"}},
      {"geometry",
       {"top_width_um", "sidewall_angle_deg", "film_thickness_um", "etch_depth_um", "box_thickness_um", "substrate",
        "box", "film", "cladding"}},
      {"modes",
       {"signal_wavelength_um", "signal_mode", "pump_wavelength_um", "pump_mode", "widths_um", "grid_spacing_um",
        "temperature_k", "n_modes", "field_maps"}},
      {"cavity", {"lambda0_nm", "q_loaded", "escape_efficiency", "kappa0_hz", "kappae_hz"}},
      {"photorefractive",
       {"beta_nm_per_mw", "target_slope_nm_per_mw", "calibration_speed_nm_per_s", "calibration_powers_mw", "tau_s",
        "buildup_norm"}},
      {"scan", {"powers_mw", "speeds_nm_per_s", "direction", "samples_per_fwhm", "margin_fwhm"}},
      {"squeezer", {"eta", "ratio", "pth_mw", "pp_mw", "fs_mhz", "f_mhz"}},
      {"gain", {"pp_mw", "pth_mw", "points", "ripple_per_nm"}},
      {"threshold", {"g_plus", "g_minus", "pp_mw"}},
      {"budget", {}},  // free-form factor names, checked by budget_from_section
      {"project", {"eta", "measured_db", "external_efficiency"}},
      {"homodyne", {"f_mhz", "lo_scan_hz", "duration_s", "rbw_hz", "vbw_hz", "sample_rate_hz"}},
      {"fit", {"data", "f_mhz", "fs_mhz", "free_fs", "db_domain", "sigma", "fix", "model", "regime", "power_mw", "speed_nm_per_s"}},
  };
  return schema;
}

/// Parses "a:b:n" (n evenly spaced values, ends included) or a comma list.
inline std::vector<double> parse_range(std::string_view text, std::string_view what) {
  const std::string t(kv::detail::trim(text));
  auto bad = [&](const std::string& why) -> ConfigError {
    return ConfigError(std::string(what) + ": '" + t + "' " + why);
  };
  if (t.find(':') != std::string::npos) {
    std::vector<double> parts;
    std::size_t start = 0;
    while (true) {
      const auto colon = t.find(':', start);
      const auto v = kv::detail::parse_double(std::string_view(t).substr(start, colon == std::string::npos ? std::string::npos : colon - start));
      if (!v) throw bad("is not of the form start:stop:count");
      parts.push_back(*v);
      if (colon == std::string::npos) break;
      start = colon + 1;
    }
    if (parts.size() != 3) throw bad("is not of the form start:stop:count");
    const double n = parts[2];
    if (!(n >= 1.0) || n != std::floor(n) || n > 1e6) throw bad("needs a whole positive count");
    const auto count = static_cast<std::size_t>(n);
    if (count == 1) {
      if (parts[0] != parts[1]) throw bad("has one point but different ends");
      return {parts[0]};
    }
    if (parts[0] == parts[1]) throw bad("has equal ends but more than one point");
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i)
      out[i] = parts[0] + (parts[1] - parts[0]) * static_cast<double>(i) / static_cast<double>(count - 1);
    return out;
  }
  kv::Section tmp("range", "", "", 0);
  tmp.set("values", t);
  try {
    auto v = tmp.get_list("values");
    if (v.empty()) throw bad("is empty");
    return v;
  } catch (const ConfigError&) {
    throw bad("is neither start:stop:count nor a comma-separated list");
  }
}

inline bool parse_bool(const kv::Section& s, std::string_view key, bool fallback) {
  const auto* e = s.find(key);
  if (!e) return fallback;
  if (e->value == "yes" || e->value == "true" || e->value == "1") return true;
  if (e->value == "no" || e->value == "false" || e->value == "0") return false;
  throw ConfigError("line " + std::to_string(e->line) + ": key '" + e->key + "' expects yes/no, found '" + e->value + "'");
}

inline ModeSelector parse_mode(std::string_view label) {
  const std::string s(kv::detail::trim(label));
  if (s.size() < 3 || (s.rfind("TE", 0) != 0 && s.rfind("TM", 0) != 0))
    throw ConfigError("mode label '" + s + "' must look like TE0 or TM2");
  const auto order = kv::detail::parse_double(std::string_view(s).substr(2));
  if (!order || *order < 0 || *order != std::floor(*order) || *order > 50)
    throw ConfigError("mode label '" + s + "' has an invalid order");
  return {s[1] == 'E' ? Polarization::TE : Polarization::TM, static_cast<int>(*order), 0};
}

/// `[budget]`: qe, vis2, esc, and either `opt` or any number of `opt.<name>`
/// sub-factors. Values are linear fractions or transmissions in dB ("-1.2 dB").
inline EfficiencyBudget budget_from_section(const kv::Section& s) {
  auto value = [&](const kv::Entry& e) {
    std::string v(kv::detail::trim(e.value));
    bool db = false;
    if (v.size() > 2 && (v.ends_with("dB") || v.ends_with("db"))) {
      db = true;
      v = std::string(kv::detail::trim(std::string_view(v).substr(0, v.size() - 2)));
    }
    const auto d = kv::detail::parse_double(v);
    if (!d) throw ConfigError("line " + std::to_string(e.line) + ": budget factor '" + e.key + "' is not a number");
    return db ? from_db(*d) : *d;
  };
  EfficiencyBudget b;
  for (const auto& e : s.entries()) {
    if (e.key == "qe") b.qe = value(e);
    else if (e.key == "vis2") b.vis2 = value(e);
    else if (e.key == "esc") b.esc = value(e);
    else if (e.key == "opt") b.opt = value(e);
    else if (e.key.rfind("opt.", 0) == 0 && e.key.size() > 4) b.opt_factors.push_back({e.key.substr(4), value(e)});
    else throw ConfigError("line " + std::to_string(e.line) + ": unknown key '" + e.key + "' in [budget]");
  }
  b.validate();
  return b;
}

inline ScanDirection parse_direction(std::string_view s) {
  if (s == "decreasing") return ScanDirection::decreasing;
  if (s == "increasing") return ScanDirection::increasing;
  throw ConfigError("scan direction must be 'increasing' or 'decreasing', found '" + std::string(s) + "'");
}

/// `[cavity]`: λ0 plus either (q_loaded, escape_efficiency) or (kappa0_hz, kappae_hz).
inline CavityParams cavity_from_section(const kv::Section* s) {
  if (!s) throw ConfigError("config needs a [cavity] section");
  CavityParams c;
  c.lambda0_nm = s->get_double_or("lambda0_nm", 775.0);
  const bool by_q = s->has("q_loaded") || s->has("escape_efficiency");
  const bool by_kappa = s->has("kappa0_hz") || s->has("kappae_hz");
  if (by_q == by_kappa) throw ConfigError("[cavity] needs either q_loaded + escape_efficiency or kappa0_hz + kappae_hz");
  if (by_q) {
    c = CavityParams::from_q(c.lambda0_nm, s->get_double("q_loaded"), s->get_double("escape_efficiency"));
  } else {
    c.kappa0_hz = s->get_double("kappa0_hz");
    c.kappae_hz = s->get_double("kappae_hz");
  }
  c.validate();
  return c;
}

struct RunConfig {
  kv::Document doc;
  fs::path base_dir = ".";
  std::string materials_path;
  fs::path out_dir = ".";
  std::uint64_t seed = 1;
  unsigned jobs = 0;
  bool quiet = false;

  [[nodiscard]] const kv::Section* section(std::string_view kind, std::string_view name = {}) const {
    return doc.find(kind, name);
  }
  /// Empty section stand-in so callers can use get_*_or uniformly.
  [[nodiscard]] const kv::Section& section_or_empty(std::string_view kind, std::string_view name = {}) const {
    static const kv::Section empty;
    const auto* s = section(kind, name);
    return s ? *s : empty;
  }
  /// Paths inside the config are relative to the config file.
  [[nodiscard]] std::string resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path.string() : (base_dir / path).lexically_normal().string();
  }
};

inline void validate_schema(const kv::Document& doc) {
  const auto& schema = config_schema();
  for (const auto& s : doc.sections()) {
    const auto it = schema.find(s.kind());
    if (it == schema.end())
      throw ConfigError(doc.source() + ":" + std::to_string(s.line()) + ": unknown section [" + s.label() + "]");
    if (s.kind() == "fit" && s.name() != "power" && s.name() != "frequency" && s.name() != "lineshape")
      throw ConfigError(doc.source() + ":" + std::to_string(s.line()) + ": fit sections are [fit power], [fit frequency] or [fit lineshape]");
    if (s.kind() != "fit" && !s.name().empty())
      throw ConfigError(doc.source() + ":" + std::to_string(s.line()) + ": section [" + s.kind() + "] takes no name");
    if (s.kind() == "budget") continue;
    for (const auto& e : s.entries())
      if (std::find(it->second.begin(), it->second.end(), e.key) == it->second.end())
        throw ConfigError(doc.source() + ":" + std::to_string(e.line) + ": unknown key '" + e.key + "' in [" + s.label() + "]");
  }
}

/// Loads and checks a config file (or an empty one when `path` is empty).
inline RunConfig load_run_config(const std::string& path) {
  RunConfig rc;
  if (!path.empty()) {
    if (!fs::exists(path)) throw ConfigError("config file '" + path + "' does not exist");
    rc.doc = kv::Document::load(path);
    rc.base_dir = fs::path(path).parent_path();
    if (rc.base_dir.empty()) rc.base_dir = ".";
  }
  validate_schema(rc.doc);
  const auto& run = rc.section_or_empty("run");
  rc.materials_path = run.has("materials") ? rc.resolve(run.get("materials")) : std::string(SQZ_DEFAULT_MATERIALS);
  if (run.has("out")) rc.out_dir = rc.resolve(run.get("out"));
  if (run.has("seed")) {
    const auto& v = run.get("seed");
    std::uint64_t seed = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), seed);
    if (ec != std::errc{} || ptr != v.data() + v.size()) throw ConfigError("[run] seed must be an unsigned 64-bit integer");
    rc.seed = seed;
  }
  if (run.has("jobs")) {
    const double j = run.get_double("jobs");
    if (!(j >= 0.0) || j != std::floor(j) || j > 4096) throw ConfigError("[run] jobs must be a whole number >= 0");
    rc.jobs = static_cast<unsigned>(j);
  }
  return rc;
}

/// Writes `content` to `dir/name` through a temporary file and a rename, so a
/// reader never sees a half-written artifact.
inline fs::path write_atomic(const fs::path& dir, const std::string& name, const std::string& content) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());
  const fs::path target = dir / name;
  const fs::path tmp = dir / ("." + name + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw ConfigError("write to '" + tmp.string() + "' failed");
  }
  fs::rename(tmp, target, ec);
  if (ec) throw ConfigError("cannot move '" + tmp.string() + "' to '" + target.string() + "': " + ec.message());
  return target;
}

/// Plain CSV with text cells allowed; used for summaries that mix labels and numbers.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}
  void meta(const std::string& k, const std::string& v) { meta_.emplace_back(k, v); }
  void row(std::vector<std::string> cells) {
    if (cells.size() != header_.size()) throw ConfigError("csv: row width differs from header");
    rows_.push_back(std::move(cells));
  }
  [[nodiscard]] std::string str() const {
    std::string out;
    for (const auto& [k, v] : meta_) out += '#' + k + '=' + v + '\n';
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
      out += '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out;
  }

 private:
  std::vector<std::string> header_;
  Meta meta_;
  std::vector<std::vector<std::string>> rows_;
};

/// Number cell; NaN becomes an empty cell.
inline std::string cell(double v) { return std::isnan(v) ? std::string() : format_number(v); }

}  // namespace sqz
