#pragma once

#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sqzforge/errors.hpp"
#include "sqzforge/keyvalue.hpp"

namespace sqz {

/// Sellmeier dispersion with a linear thermo-optic correction:
///   n^2(λ) = A + Σ B_i λ² / (λ² − C_i),   n(λ,T) = n(λ) + (T − T_ref)·dn/dT
/// with λ in µm and C_i in µm².
struct DispersionModel {
  std::string name;
  double a = 1.0;
  std::vector<double> b;
  std::vector<double> c;
  double min_um = 0.0;
  double max_um = 0.0;
  double dn_dt = 0.0;      // 1/K
  double t_ref_k = 293.15;  // K
  std::string source;

  [[nodiscard]] double index(double wavelength_um, double temperature_k) const {
    if (!(wavelength_um >= min_um && wavelength_um <= max_um)) {
      std::ostringstream msg;
      msg << "material '" << name << "': wavelength " << wavelength_um << " um outside validity range [" << min_um
          << ", " << max_um << "] um";
      throw RangeError(msg.str());
    }
    const double l2 = wavelength_um * wavelength_um;
    double n2 = a;
    for (std::size_t i = 0; i < b.size(); ++i) n2 += b[i] * l2 / (l2 - c[i]);
    return std::sqrt(n2) + (temperature_k - t_ref_k) * dn_dt;
  }
};

/// Free-function form of DispersionModel::index.
inline double index(const DispersionModel& m, double wavelength_um, double temperature_k) {
  return m.index(wavelength_um, temperature_k);
}

/// A material as seen by the permittivity builder: isotropic media use the same
/// model for both entries. For uniaxial media the optic axis is vertical (Z-cut),
/// so `ordinary` acts on x/z field components and `extraordinary` on y.
struct Medium {
  std::string name;
  const DispersionModel* ordinary = nullptr;
  const DispersionModel* extraordinary = nullptr;

  [[nodiscard]] bool isotropic() const { return ordinary == extraordinary; }
};

class MaterialLibrary {
 public:
  /// Parses `[material <name>]` and `[uniaxial <name>]` sections.
  [[nodiscard]] static MaterialLibrary from_document(const kv::Document& doc) {
    doc.require_known_kinds({"library", "material", "uniaxial"});
    MaterialLibrary lib;
    if (const auto* head = doc.find("library")) {
      head->require_known({"name", "version"});
      lib.version_ = head->get_or("name", "") + " " + head->get_or("version", "");
    }
    for (const auto* s : doc.all("material")) {
      s->require_known({"formula", "a", "b", "c", "min_um", "max_um", "dn_dT", "t_ref_K", "source"});
      if (s->name().empty()) throw ConfigError(doc.source() + ": [material] section without a name");
      if (s->get_or("formula", "sellmeier") != "sellmeier")
        throw ConfigError(doc.source() + ": material '" + s->name() + "': unsupported formula '" + s->get("formula") + "'");
      DispersionModel m;
      m.name = s->name();
      m.a = s->get_double_or("a", 1.0);
      m.b = s->has("b") ? s->get_list("b") : std::vector<double>{};
      m.c = s->has("c") ? s->get_list("c") : std::vector<double>{};
      if (m.b.size() != m.c.size())
        throw ConfigError(doc.source() + ": material '" + m.name + "': b and c lists differ in length");
      m.min_um = s->get_double("min_um");
      m.max_um = s->get_double("max_um");
      if (!(m.min_um > 0.0 && m.max_um > m.min_um))
        throw ConfigError(doc.source() + ": material '" + m.name + "': invalid validity range");
      m.dn_dt = s->get_double("dn_dT");
      m.t_ref_k = s->get_double_or("t_ref_K", 293.15);
      m.source = s->get_or("source", "");
      lib.models_[m.name] = std::move(m);
    }
    for (const auto* s : doc.all("uniaxial")) {
      s->require_known({"ordinary", "extraordinary"});
      lib.uniaxial_[s->name()] = {s->get("ordinary"), s->get("extraordinary")};
    }
    for (const auto& [name, pair] : lib.uniaxial_) {
      if (!lib.models_.count(pair.first) || !lib.models_.count(pair.second))
        throw ConfigError(doc.source() + ": uniaxial '" + name + "' references an unknown material");
    }
    return lib;
  }

  [[nodiscard]] static MaterialLibrary load(const std::string& path) {
    return from_document(kv::Document::load(path));
  }

  [[nodiscard]] kv::Document to_document() const {
    kv::Document doc;
    for (const auto& [name, m] : models_) {
      auto& s = doc.add("material", name);
      s.set("formula", "sellmeier");
      s.set("a", fmt(m.a));
      if (!m.b.empty()) {
        s.set("b", join(m.b));
        s.set("c", join(m.c));
      }
      s.set("min_um", fmt(m.min_um));
      s.set("max_um", fmt(m.max_um));
      s.set("dn_dT", fmt(m.dn_dt));
      s.set("t_ref_K", fmt(m.t_ref_k));
      if (!m.source.empty()) s.set("source", m.source);
    }
    for (const auto& [name, pair] : uniaxial_) {
      auto& s = doc.add("uniaxial", name);
      s.set("ordinary", pair.first);
      s.set("extraordinary", pair.second);
    }
    return doc;
  }

  [[nodiscard]] const DispersionModel& model(const std::string& name) const {
    auto it = models_.find(name);
    if (it == models_.end()) throw ConfigError("unknown material '" + name + "'");
    return it->second;
  }

  [[nodiscard]] Medium medium(const std::string& name) const {
    if (auto it = uniaxial_.find(name); it != uniaxial_.end())
      return {name, &model(it->second.first), &model(it->second.second)};
    const auto& m = model(name);
    return {name, &m, &m};
  }

  [[nodiscard]] bool contains(const std::string& name) const {
    return models_.count(name) > 0 || uniaxial_.count(name) > 0;
  }

  [[nodiscard]] const std::map<std::string, DispersionModel>& models() const { return models_; }
  [[nodiscard]] const std::string& version() const { return version_; }

  void add(DispersionModel m) { models_[m.name] = std::move(m); }
  void add_uniaxial(const std::string& name, const std::string& ordinary, const std::string& extraordinary) {
    uniaxial_[name] = {ordinary, extraordinary};
  }

 private:
  static std::string fmt(double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
  }
  static std::string join(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + fmt(v[i]);
    return out;
  }

  std::string version_;
  std::map<std::string, DispersionModel> models_;
  std::map<std::string, std::pair<std::string, std::string>> uniaxial_;
};

/// Vertical layer stack of the thin-film platform. Heights in µm; y = 0 is the
/// film/box interface.
struct LayerStack {
  double film_thickness = 0.5;
  double etch_depth = 0.40;
  double box_thickness = 4.7;
  std::string substrate = "silicon";
  std::string box = "silica";
  std::string film = "lithium_niobate";
  std::string cladding = "air";

  [[nodiscard]] double slab_thickness() const { return film_thickness - etch_depth; }

  void validate() const {
    if (!(film_thickness > 0.0)) throw ConfigError("layer stack: film_thickness must be positive");
    if (!(etch_depth > 0.0 && etch_depth <= film_thickness))
      throw ConfigError("layer stack: etch_depth must satisfy 0 < etch_depth <= film_thickness");
    if (!(box_thickness > 0.0)) throw ConfigError("layer stack: box_thickness must be positive");
  }

  [[nodiscard]] static LayerStack from_section(const kv::Section& s) {
    s.require_known({"film_thickness_um", "etch_depth_um", "box_thickness_um", "substrate", "box", "film", "cladding"});
    LayerStack st;
    st.film_thickness = s.get_double_or("film_thickness_um", st.film_thickness);
    st.etch_depth = s.get_double_or("etch_depth_um", st.etch_depth);
    st.box_thickness = s.get_double_or("box_thickness_um", st.box_thickness);
    st.substrate = s.get_or("substrate", st.substrate);
    st.box = s.get_or("box", st.box);
    st.film = s.get_or("film", st.film);
    st.cladding = s.get_or("cladding", st.cladding);
    st.validate();
    return st;
  }

  void to_section(kv::Section& s) const {
    std::ostringstream a, b, c;
    a.precision(17);
    b.precision(17);
    c.precision(17);
    a << film_thickness;
    b << etch_depth;
    c << box_thickness;
    s.set("film_thickness_um", a.str());
    s.set("etch_depth_um", b.str());
    s.set("box_thickness_um", c.str());
    s.set("substrate", substrate);
    s.set("box", box);
    s.set("film", film);
    s.set("cladding", cladding);
  }
};

}  // namespace sqz
