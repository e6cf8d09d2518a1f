#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sqzforge/errors.hpp"
#include "sqzforge/material.hpp"
#include "sqzforge/units.hpp"

namespace sqz {

/// Uniform rectangular grid. Node (i, j) sits at (x0 + i·dx, y0 + j·dy); cell
/// (i, j) spans [x_i, x_i + dx] × [y_j, y_j + dy]. Lengths in µm.
struct Grid2D {
  int nx = 0;
  int ny = 0;
  double dx = 0.0;
  double dy = 0.0;
  double x0 = 0.0;
  double y0 = 0.0;

  Grid2D() = default;
  Grid2D(int nx_, int ny_, double dx_, double dy_, double x0_ = 0.0, double y0_ = 0.0)
      : nx(nx_), ny(ny_), dx(dx_), dy(dy_), x0(x0_), y0(y0_) {
    validate();
  }

  void validate() const {
    if (nx < 16 || ny < 16) throw ConfigError("grid: nx and ny must be at least 16");
    if (!(dx > 0.0 && dy > 0.0)) throw ConfigError("grid: dx and dy must be positive");
  }

  [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny); }
  [[nodiscard]] std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(nx) * static_cast<std::size_t>(j);
  }
  [[nodiscard]] double x(double i) const { return x0 + i * dx; }
  [[nodiscard]] double y(double j) const { return y0 + j * dy; }
  [[nodiscard]] double x_max() const { return x0 + nx * dx; }
  [[nodiscard]] double y_max() const { return y0 + ny * dy; }
};

/// Ridge waveguide cross-section: trapezoidal ridge of the given top width,
/// centred on x = 0, etched into the film of `stack`.
struct CrossSection {
  double top_width = 1.02;        // µm
  double sidewall_angle = 65.0;   // degrees, 90 = vertical
  LayerStack stack;

  void validate() const {
    if (!(top_width > 0.0)) throw ConfigError("cross-section: top_width must be positive");
    if (!(sidewall_angle >= 60.0 && sidewall_angle <= 90.0))
      throw ConfigError("cross-section: sidewall_angle must lie in [60, 90] degrees");
    stack.validate();
  }

  /// Horizontal run of the sidewall from top to bottom of the etched part.
  [[nodiscard]] double sidewall_run() const {
    if (sidewall_angle >= 90.0) return 0.0;
    return stack.etch_depth / std::tan(sidewall_angle * kPi / 180.0);
  }
  [[nodiscard]] double bottom_width() const { return top_width + 2.0 * sidewall_run(); }

  /// `[geometry]` section: top_width_um, sidewall_angle_deg plus the stack keys.
  [[nodiscard]] static CrossSection from_section(const kv::Section& s) {
    s.require_known({"top_width_um", "sidewall_angle_deg", "film_thickness_um", "etch_depth_um", "box_thickness_um",
                     "substrate", "box", "film", "cladding"});
    kv::Section stack_only("stack", "", "", s.line());
    for (const auto& e : s.entries())
      if (e.key != "top_width_um" && e.key != "sidewall_angle_deg") stack_only.set(e.key, e.value, e.line);
    CrossSection cs;
    cs.top_width = s.get_double_or("top_width_um", cs.top_width);
    cs.sidewall_angle = s.get_double_or("sidewall_angle_deg", cs.sidewall_angle);
    cs.stack = LayerStack::from_section(stack_only);
    cs.validate();
    return cs;
  }

  void to_section(kv::Section& s) const {
    std::ostringstream w, a;
    w.precision(17);
    a.precision(17);
    w << top_width;
    a << sidewall_angle;
    s.set("top_width_um", w.str());
    s.set("sidewall_angle_deg", a.str());
    stack.to_section(s);
  }
};

enum class Region { cladding, film, box, substrate };

/// Which layer the point (x, y) belongs to.
inline Region region_at(const CrossSection& cs, double x, double y) {
  const auto& st = cs.stack;
  const double top = st.film_thickness;
  const double slab_top = st.slab_thickness();
  if (y >= top) return Region::cladding;
  if (y >= slab_top) {
    const double half = 0.5 * cs.top_width + (top - y) / std::max(st.etch_depth, 1e-300) * cs.sidewall_run();
    return std::abs(x) <= half ? Region::film : Region::cladding;
  }
  if (y >= 0.0) return Region::film;
  if (y >= -st.box_thickness) return Region::box;
  return Region::substrate;
}

/// Diagonal relative permittivity per Yee cell. Within cell (i, j) the three
/// components are sampled where the matching E component lives: εxx at
/// (x_i + dx/2, y_j), εyy at (x_i, y_j + dy/2), εzz at the node (x_i, y_j).
struct PermittivityMap {
  Grid2D grid;
  std::vector<double> exx;
  std::vector<double> eyy;
  std::vector<double> ezz;

  PermittivityMap() = default;
  explicit PermittivityMap(const Grid2D& g) : grid(g), exx(g.size(), 1.0), eyy(g.size(), 1.0), ezz(g.size(), 1.0) {}

  /// Uniform isotropic map (handy for tests and plane-wave limits).
  [[nodiscard]] static PermittivityMap uniform(const Grid2D& g, double eps) {
    PermittivityMap m(g);
    std::fill(m.exx.begin(), m.exx.end(), eps);
    std::fill(m.eyy.begin(), m.eyy.end(), eps);
    std::fill(m.ezz.begin(), m.ezz.end(), eps);
    return m;
  }

  [[nodiscard]] std::array<double, 3> at(int i, int j) const {
    const auto k = grid.index(i, j);
    return {exx[k], eyy[k], ezz[k]};
  }

  void validate() const {
    const auto n = grid.size();
    if (exx.size() != n || eyy.size() != n || ezz.size() != n)
      throw ConfigError("permittivity map: component arrays do not match the grid");
    for (std::size_t k = 0; k < n; ++k) {
      if (!(exx[k] > 0.0 && eyy[k] > 0.0 && ezz[k] > 0.0) || !std::isfinite(exx[k]) || !std::isfinite(eyy[k]) ||
          !std::isfinite(ezz[k]))
        throw ConfigError("permittivity map: non-positive or non-finite permittivity");
    }
  }

  /// Largest index sampled on the top and bottom rows of the window: the
  /// cladding/box level a guided mode must exceed.
  [[nodiscard]] double outer_index() const {
    double e = 0.0;
    for (int i = 0; i < grid.nx; ++i) {
      for (int j : {0, grid.ny - 1}) {
        const auto c = at(i, j);
        e = std::max({e, c[0], c[1], c[2]});
      }
    }
    return std::sqrt(e);
  }

  [[nodiscard]] double max_index() const {
    double e = 0.0;
    for (std::size_t k = 0; k < exx.size(); ++k) e = std::max({e, exx[k], eyy[k], ezz[k]});
    return std::sqrt(e);
  }

  [[nodiscard]] double min_index() const {
    double e = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < exx.size(); ++k) e = std::min({e, exx[k], eyy[k], ezz[k]});
    return std::sqrt(e);
  }
};

/// Lateral and vertical margin the window must leave around the waveguide core.
inline constexpr double kMinWindowMargin = 1.5;  // µm

/// Builds a grid with spacing h that holds the ridge plus `margin` on every side
/// (measured from the bottom width laterally and from the film vertically).
/// The film interfaces fall on grid lines whenever they are multiples of h.
inline Grid2D make_window(const CrossSection& cs, double h, double margin = kMinWindowMargin) {
  cs.validate();
  if (!(h > 0.0)) throw ConfigError("grid spacing must be positive");
  const double half = 0.5 * cs.bottom_width() + margin;
  const int nx = static_cast<int>(std::ceil(2.0 * half / h - 1e-9));
  const double y_lo = -margin;
  const double y_hi = cs.stack.film_thickness + margin;
  const int jlo = static_cast<int>(std::floor(y_lo / h + 1e-9));
  const int jhi = static_cast<int>(std::ceil(y_hi / h - 1e-9));
  return Grid2D(nx, jhi - jlo, h, h, -0.5 * nx * h, jlo * h);
}

/// Right half of make_window, starting on the mirror plane x = 0, for solves
/// that exploit the left/right symmetry of the ridge.
inline Grid2D make_half_window(const CrossSection& cs, double h, double margin = kMinWindowMargin) {
  const Grid2D full = make_window(cs, h, margin);
  const int nx = static_cast<int>(std::ceil((0.5 * cs.bottom_width() + margin) / h - 1e-9));
  return Grid2D(std::max(nx, 16), full.ny, h, h, 0.0, full.y0);
}

/// Ordinary/extraordinary permittivity of one point of a cross-section. The
/// extraordinary axis is vertical (y).
struct PointEps {
  double o = 1.0;
  double e = 1.0;
};

/// Samples an arbitrary piecewise-constant permittivity function on `grid`.
///
/// Each component is averaged over a dx × dy box centred on its Yee sample
/// point, using `subsamples`² points. The component normal to an interface is
/// averaged harmonically along its own axis and arithmetically across it (εxx:
/// harmonic in x, εyy: harmonic in y); εzz is a plain area average. Cells made of
/// a single material get that material's tensor exactly.
template <class EpsAt>
PermittivityMap rasterize(const Grid2D& grid, EpsAt&& eps_at, int subsamples = 8) {
  grid.validate();
  PermittivityMap map(grid);
  const int s = std::max(1, subsamples);
  std::vector<double> buf(static_cast<std::size_t>(s) * s);

  auto sample = [&](double cx, double cy, bool extraordinary) {
    for (int b = 0; b < s; ++b) {
      const double y = cy + ((b + 0.5) / s - 0.5) * grid.dy;
      for (int a = 0; a < s; ++a) {
        const double x = cx + ((a + 0.5) / s - 0.5) * grid.dx;
        const PointEps p = eps_at(x, y);
        buf[static_cast<std::size_t>(a + s * b)] = extraordinary ? p.e : p.o;
      }
    }
  };
  auto uniform = [&]() { return std::all_of(buf.begin(), buf.end(), [&](double v) { return v == buf[0]; }); };
  auto arithmetic = [&]() {
    double acc = 0.0;
    for (double v : buf) acc += v;
    return acc / static_cast<double>(buf.size());
  };
  // harmonic along the axis selected by `along_x`, arithmetic across it
  auto directional = [&](bool along_x) {
    double outer = 0.0;
    for (int p = 0; p < s; ++p) {
      double inv = 0.0;
      for (int q = 0; q < s; ++q) {
        const int a = along_x ? q : p;
        const int b = along_x ? p : q;
        inv += 1.0 / buf[static_cast<std::size_t>(a + s * b)];
      }
      outer += s / inv;
    }
    return outer / s;
  };

  for (int j = 0; j < grid.ny; ++j) {
    for (int i = 0; i < grid.nx; ++i) {
      const auto k = grid.index(i, j);
      const double xn = grid.x(i);
      const double yn = grid.y(j);
      sample(xn + 0.5 * grid.dx, yn, false);
      map.exx[k] = uniform() ? buf[0] : directional(true);
      sample(xn, yn + 0.5 * grid.dy, true);
      map.eyy[k] = uniform() ? buf[0] : directional(false);
      sample(xn, yn, false);
      map.ezz[k] = uniform() ? buf[0] : arithmetic();
    }
  }
  return map;
}

/// Samples the diagonal permittivity tensor of the cross-section on `grid`
/// (see rasterize for the averaging rule). The window must hold the ridge with
/// at least kMinWindowMargin on every side; a window starting exactly at x = 0
/// is taken as the right half of a mirror-symmetric solve.
inline PermittivityMap permittivity_tensor(const MaterialLibrary& lib, const CrossSection& cs, double wavelength_um,
                                           double temperature_k, const Grid2D& grid, int subsamples = 8) {
  cs.validate();
  grid.validate();
  const double core_half = 0.5 * cs.bottom_width();
  const double margin = kMinWindowMargin - 1e-9;
  const bool half = grid.x0 == 0.0;
  if ((!half && grid.x0 > -core_half - margin) || grid.x_max() < core_half + margin || grid.y0 > -margin ||
      grid.y_max() < cs.stack.film_thickness + margin)
    throw ConfigError("grid window must contain the ridge with at least 1.5 um margin on every side");

  std::map<Region, PointEps> cache;
  auto layer = [&](Region r) -> const PointEps& {
    auto it = cache.find(r);
    if (it != cache.end()) return it->second;
    const std::string& id = r == Region::cladding ? cs.stack.cladding
                            : r == Region::film   ? cs.stack.film
                            : r == Region::box    ? cs.stack.box
                                                  : cs.stack.substrate;
    const Medium m = lib.medium(id);
    const double no = m.ordinary->index(wavelength_um, temperature_k);
    const double ne = m.extraordinary->index(wavelength_um, temperature_k);
    return cache.emplace(r, PointEps{no * no, ne * ne}).first->second;
  };
  return rasterize(grid, [&](double x, double y) { return layer(region_at(cs, x, y)); }, subsamples);
}

}  // namespace sqz
