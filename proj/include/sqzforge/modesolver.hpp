#pragma once

// Full-vector finite-difference eigenmode solver for waveguide cross-sections
// with a diagonal permittivity tensor.
//
// The fields live on a 2-D Yee lattice: in cell (i, j) Ex and Hy sit at
// (i+½, j), Ey and Hx at (i, j+½), Ez at (i, j) and Hz at (i+½, j+½). With
// fields ∝ exp(−jβz) and H scaled by the vacuum impedance, eliminating Ez and Hz
// from the curl equations gives
//
//     β E = (1/k0) P H,   β H = (1/k0) Q E,   β² H = (1/k0²) Q P H
//
// with forward differences U and backward differences V = −Uᵀ. The solver
// factors the transverse-H operator A = Q P / k0⁴, whose eigenvalue is n_eff².
// Outside the window every field sample is zero.

#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <iomanip>
#include <optional>
#include <string>
#include <vector>

#include "sqzforge/errors.hpp"
#include "sqzforge/geometry.hpp"
#include "sqzforge/shift_invert.hpp"
#include "sqzforge/units.hpp"

namespace sqz {

enum class Polarization { TE, TM };

inline const char* to_string(Polarization p) { return p == Polarization::TE ? "TE" : "TM"; }

struct ModeLabel {
  Polarization polarization = Polarization::TE;
  int order = 0;
  bool hybrid = false;

  [[nodiscard]] std::string str() const {
    return std::string(to_string(polarization)) + std::to_string(order) + (hybrid ? "(hybrid)" : "");
  }
};

/// Mode selector used by sweeps: polarization plus horizontal order, and the
/// number of vertical nodes (0 = fundamental in the vertical direction).
struct ModeSelector {
  Polarization polarization = Polarization::TE;
  int order = 0;
  int vertical_nodes = 0;
};

/// Mirror symmetry about x = 0, used to halve the problem for symmetric ridges.
/// The class is named after the even field: `ex_even` holds TE0, TE2, TM1, ...
/// and `ey_even` holds TM0, TM2, TE1, ...
enum class Mirror { none, ex_even, ey_even };

/// Mirror class that contains the mode picked by `sel`.
inline Mirror mirror_class(const ModeSelector& sel) {
  const bool even = sel.order % 2 == 0;
  if (sel.polarization == Polarization::TE) return even ? Mirror::ex_even : Mirror::ey_even;
  return even ? Mirror::ey_even : Mirror::ex_even;
}

struct ModeSolution {
  double wavelength_um = 0.0;
  double n_eff = 0.0;
  Grid2D grid;
  // Transverse magnetic field (impedance-scaled), normalised so that
  // Σ (Hx² + Hy²)·dx·dy = 1.
  std::vector<double> hx, hy;
  // Derived fields. Ez and Hz are 90° out of phase with the transverse fields;
  // the stored arrays hold their imaginary parts.
  std::vector<double> ex, ey, ez, hz;
  double te_fraction = 0.0;
  int horizontal_nodes = 0;
  int vertical_nodes = 0;
  ModeLabel label;
  double residual = 0.0;  // ‖A v − λ v‖ / ‖λ v‖ on the assembled operator
};

struct SolveOptions {
  bool guided_only = true;
  /// Height of the line used to count horizontal sign changes; defaults to the
  /// row carrying the most energy of the dominant E component.
  std::optional<double> probe_y;
  int ncv = 0;
  double tol = 1e-13;
  /// With a mirror class set, the map must cover only x ≥ 0 (grid.x0 = 0); the
  /// returned modes are expanded back onto the full window.
  Mirror mirror = Mirror::none;
};

struct SolveReport {
  std::vector<ModeSolution> modes;
  int eigen_restarts = 0;
  int linear_solves = 0;
  std::size_t unknowns = 0;
  double outer_index = 0.0;  // guided modes must exceed this
  double core_index = 0.0;   // and stay below this
};

/// The assembled discrete operators for one map and wavelength.
struct TransverseOperator {
  eig::SparseMatrix a;  // Q P / k0⁴, eigenvalue n_eff²
  eig::SparseMatrix p;  // P / k0²: E·n_eff = P H
  eig::SparseMatrix sp; // symmetric Jᵀ P / k0², the left-eigenvector map
  eig::SparseMatrix ux, uy, vx, vy;
  std::vector<double> inv_ezz;
  double k0 = 0.0;
  Mirror mirror = Mirror::none;
};

namespace detail {

using Triplets = std::vector<Eigen::Triplet<double>>;

inline void append_block(Triplets& t, const eig::SparseMatrix& m, int row0, int col0, double scale = 1.0) {
  for (int c = 0; c < m.outerSize(); ++c)
    for (eig::SparseMatrix::InnerIterator it(m, c); it; ++it)
      t.emplace_back(static_cast<int>(it.row()) + row0, static_cast<int>(it.col()) + col0, scale * it.value());
}

inline eig::SparseMatrix diag(const std::vector<double>& d) {
  eig::SparseMatrix m(static_cast<int>(d.size()), static_cast<int>(d.size()));
  Triplets t;
  t.reserve(d.size());
  for (std::size_t k = 0; k < d.size(); ++k) t.emplace_back(static_cast<int>(k), static_cast<int>(k), d[k]);
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

inline eig::SparseMatrix identity(int n) {
  eig::SparseMatrix m(n, n);
  m.setIdentity();
  return m;
}

// Forward difference along x or y with a zero sample beyond the last node.
// `drop_first_column` treats the x = x0 column as identically zero (odd field on
// a mirror plane).
inline eig::SparseMatrix forward_difference(const Grid2D& g, bool along_x, bool drop_first_column = false) {
  const int n = static_cast<int>(g.size());
  eig::SparseMatrix m(n, n);
  Triplets t;
  t.reserve(2 * g.size());
  const double inv = 1.0 / (along_x ? g.dx : g.dy);
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const int k = static_cast<int>(g.index(i, j));
      if (!(drop_first_column && i == 0)) t.emplace_back(k, k, -inv);
      if (along_x && i + 1 < g.nx) t.emplace_back(k, static_cast<int>(g.index(i + 1, j)), inv);
      if (!along_x && j + 1 < g.ny) t.emplace_back(k, static_cast<int>(g.index(i, j + 1)), inv);
    }
  }
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

inline eig::SparseMatrix block2(const eig::SparseMatrix& a, const eig::SparseMatrix& b, const eig::SparseMatrix& c,
                                const eig::SparseMatrix& d) {
  const int n = static_cast<int>(a.rows());
  Triplets t;
  t.reserve(static_cast<std::size_t>(a.nonZeros() + b.nonZeros() + c.nonZeros() + d.nonZeros()));
  append_block(t, a, 0, 0);
  append_block(t, b, 0, n);
  append_block(t, c, n, 0);
  append_block(t, d, n, n);
  eig::SparseMatrix m(2 * n, 2 * n);
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

// Sign changes along a sampled line, ignoring samples below `rel` of the peak.
inline int count_sign_changes(const std::vector<double>& line, double rel = 0.05) {
  double peak = 0.0;
  for (double v : line) peak = std::max(peak, std::abs(v));
  if (peak == 0.0) return 0;
  int changes = 0;
  int last = 0;
  for (double v : line) {
    if (std::abs(v) < rel * peak) continue;
    const int s = v > 0.0 ? 1 : -1;
    if (last != 0 && s != last) ++changes;
    last = s;
  }
  return changes;
}

}  // namespace detail

/// Assembles the transverse-H operator for `map` at `wavelength_um`. With a
/// mirror class the left edge of the map is the symmetry plane: node-column
/// fields (Ey, Ez, Hx) and half-column fields (Ex, Hy, Hz) get the parities of
/// that class, and odd Hx samples on the plane are pinned to zero.
inline TransverseOperator assemble_operator(const PermittivityMap& map, double wavelength_um,
                                            Mirror mirror = Mirror::none) {
  using detail::block2;
  using detail::diag;
  map.validate();
  const Grid2D& g = map.grid;
  if (mirror != Mirror::none && g.x0 != 0.0)
    throw ConfigError("mirror-symmetric solve needs a map that starts on the plane x = 0");
  const int n = static_cast<int>(g.size());
  TransverseOperator op;
  op.k0 = 2.0 * kPi / wavelength_um;
  op.mirror = mirror;
  const double k2 = op.k0 * op.k0;

  op.ux = detail::forward_difference(g, true, mirror == Mirror::ex_even);
  op.uy = detail::forward_difference(g, false);
  op.vx = -eig::SparseMatrix(op.ux.transpose());
  op.vy = -eig::SparseMatrix(op.uy.transpose());
  if (mirror == Mirror::ey_even) {
    // odd half-column field: f(−dx/2) = −f(dx/2) doubles the plane difference
    for (int j = 0; j < g.ny; ++j) {
      const int k = static_cast<int>(g.index(0, j));
      op.vx.coeffRef(k, k) *= 2.0;
    }
  }
  op.inv_ezz.resize(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) op.inv_ezz[k] = 1.0 / map.ezz[k];
  const eig::SparseMatrix iez = diag(op.inv_ezz);
  const eig::SparseMatrix id = detail::identity(n);
  const eig::SparseMatrix exx = diag(map.exx);
  const eig::SparseMatrix eyy = diag(map.eyy);

  // Q and P scaled by 1/k0² each.
  const double s = 1.0 / k2;
  const eig::SparseMatrix q = block2(s * eig::SparseMatrix(op.vx * op.uy), -(eyy + s * eig::SparseMatrix(op.vx * op.ux)),
                                     exx + s * eig::SparseMatrix(op.vy * op.uy), -s * eig::SparseMatrix(op.vy * op.ux));
  const eig::SparseMatrix uxz = op.ux * iez;
  const eig::SparseMatrix uyz = op.uy * iez;
  op.p = block2(-s * eig::SparseMatrix(uxz * op.vy), id + s * eig::SparseMatrix(uxz * op.vx),
                -(id + s * eig::SparseMatrix(uyz * op.vy)), s * eig::SparseMatrix(uyz * op.vx));
  op.sp = block2(id + s * eig::SparseMatrix(uyz * op.vy), -s * eig::SparseMatrix(uyz * op.vx),
                 -s * eig::SparseMatrix(uxz * op.vy), id + s * eig::SparseMatrix(uxz * op.vx));
  if (mirror == Mirror::ex_even) {
    std::vector<double> keep(2 * g.size(), 1.0);
    for (int j = 0; j < g.ny; ++j) keep[g.index(0, j)] = 0.0;
    const eig::SparseMatrix m = diag(keep);
    op.p = op.p * m;
    op.a = m * q * op.p;
  } else {
    op.a = q * op.p;
  }
  op.a.makeCompressed();
  return op;
}

/// Relative eigen-residual ‖A v − λ v‖ / ‖λ v‖.
inline double eigen_residual(const eig::SparseMatrix& a, const Eigen::VectorXd& v, double lambda) {
  const Eigen::VectorXd r = a * v - lambda * v;
  return r.norm() / (std::abs(lambda) * v.norm());
}

/// Dominant transverse E component of a solved mode (Ex for TE-like, Ey otherwise).
inline const std::vector<double>& dominant_field(const ModeSolution& m) {
  return m.te_fraction > 0.5 ? m.ex : m.ey;
}

/// Labels a mode: TE when te_fraction > 0.5, order from the sign changes of the
/// dominant E component along the horizontal line at `probe_y`. The label is
/// flagged hybrid when te_fraction lies within 0.5 ± 0.05.
inline ModeLabel classify_mode(ModeSolution& mode, std::optional<double> probe_y = std::nullopt) {
  if (mode.ex.empty() || mode.ey.empty()) throw ConfigError("classify_mode: mode carries no field maps");
  const Grid2D& g = mode.grid;
  const auto& f = dominant_field(mode);
  int row = 0;
  if (probe_y) {
    const double yj = (*probe_y - g.y0) / g.dy;
    row = std::clamp(static_cast<int>(std::lround(yj)), 0, g.ny - 1);
  } else {
    double best = -1.0;
    for (int j = 0; j < g.ny; ++j) {
      double e = 0.0;
      for (int i = 0; i < g.nx; ++i) e += f[g.index(i, j)] * f[g.index(i, j)];
      if (e > best) {
        best = e;
        row = j;
      }
    }
  }
  std::vector<double> line(static_cast<std::size_t>(g.nx));
  int col = 0;
  double peak = -1.0;
  for (int i = 0; i < g.nx; ++i) {
    line[static_cast<std::size_t>(i)] = f[g.index(i, row)];
    if (std::abs(line[static_cast<std::size_t>(i)]) > peak) {
      peak = std::abs(line[static_cast<std::size_t>(i)]);
      col = i;
    }
  }
  mode.horizontal_nodes = detail::count_sign_changes(line);
  std::vector<double> column(static_cast<std::size_t>(g.ny));
  for (int j = 0; j < g.ny; ++j) column[static_cast<std::size_t>(j)] = f[g.index(col, j)];
  mode.vertical_nodes = detail::count_sign_changes(column);
  mode.label.polarization = mode.te_fraction > 0.5 ? Polarization::TE : Polarization::TM;
  mode.label.order = mode.horizontal_nodes;
  mode.label.hybrid = std::abs(mode.te_fraction - 0.5) <= 0.05;
  return mode.label;
}

/// Normalised E×H overlap Σ (E_a × H_b)·ẑ between two modes on the same grid.
/// Vanishes for distinct modes of the discrete operator.
inline double cross_overlap(const ModeSolution& a, const ModeSolution& b) {
  auto raw = [](const ModeSolution& e, const ModeSolution& h) {
    double acc = 0.0;
    for (std::size_t k = 0; k < e.ex.size(); ++k) acc += e.ex[k] * h.hy[k] - e.ey[k] * h.hx[k];
    return acc;
  };
  const double ab = raw(a, b);
  const double aa = raw(a, a);
  const double bb = raw(b, b);
  return ab / std::sqrt(std::abs(aa * bb));
}

namespace detail {

// Mirrors a half-window field onto the full window. Node-column samples
// (`node_column`) sit on x = i·dx, the others on x = (i + ½)·dx.
inline std::vector<double> mirror_expand(const Grid2D& half, const Eigen::VectorXd& f, bool node_column, double parity) {
  const int nx = half.nx;
  std::vector<double> out(static_cast<std::size_t>(2 * nx) * static_cast<std::size_t>(half.ny), 0.0);
  for (int j = 0; j < half.ny; ++j) {
    const std::size_t row = static_cast<std::size_t>(2 * nx) * static_cast<std::size_t>(j);
    for (int i = 0; i < nx; ++i) out[row + static_cast<std::size_t>(nx + i)] = f(static_cast<Eigen::Index>(half.index(i, j)));
    for (int big = 0; big < nx; ++big) {
      const int src = node_column ? nx - big : nx - 1 - big;
      if (src >= nx || src < 0) continue;
      out[row + static_cast<std::size_t>(big)] = parity * f(static_cast<Eigen::Index>(half.index(src, j)));
    }
  }
  return out;
}

inline ModeSolution build_mode(const TransverseOperator& op, const Grid2D& g, Eigen::VectorXd h, double n2,
                               double wavelength_um, const SolveOptions& opt) {
  const std::size_t n = g.size();
  const auto ni = static_cast<Eigen::Index>(n);
  ModeSolution m;
  m.wavelength_um = wavelength_um;
  m.n_eff = std::sqrt(n2);
  m.residual = eigen_residual(op.a, h, n2);

  const Eigen::VectorXd e = op.p * h / m.n_eff;
  const Eigen::VectorXd hx = h.head(ni), hy = h.tail(ni);
  const Eigen::VectorXd exv = e.head(ni), eyv = e.tail(ni);
  // Ez = (Vx Hy − Vy Hx)/(j k0 εzz), Hz = j (Ux Ey − Uy Ex)/k0
  const Eigen::VectorXd ez = -Eigen::VectorXd(op.vx * hy - op.vy * hx).cwiseProduct(
                                 Eigen::Map<const Eigen::VectorXd>(op.inv_ezz.data(), ni)) /
                             op.k0;
  const Eigen::VectorXd hz = (op.ux * eyv - op.uy * exv) / op.k0;

  auto to_std = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  if (op.mirror == Mirror::none) {
    m.grid = g;
    m.hx = to_std(hx);
    m.hy = to_std(hy);
    m.ex = to_std(exv);
    m.ey = to_std(eyv);
    m.ez = to_std(ez);
    m.hz = to_std(hz);
  } else {
    const double half_col = op.mirror == Mirror::ex_even ? 1.0 : -1.0;  // Ex, Hy, Hz
    const double node_col = -half_col;                                   // Ey, Ez, Hx
    m.grid = Grid2D(2 * g.nx, g.ny, g.dx, g.dy, -g.nx * g.dx, g.y0);
    m.hx = mirror_expand(g, hx, true, node_col);
    m.hy = mirror_expand(g, hy, false, half_col);
    m.ex = mirror_expand(g, exv, false, half_col);
    m.ey = mirror_expand(g, eyv, true, node_col);
    m.ez = mirror_expand(g, ez, true, node_col);
    m.hz = mirror_expand(g, hz, false, half_col);
  }

  // normalise Σ(Hx² + Hy²)·dx·dy = 1 on the full window
  double hh = 0.0;
  for (std::size_t k = 0; k < m.hx.size(); ++k) hh += m.hx[k] * m.hx[k] + m.hy[k] * m.hy[k];
  double scale = 1.0 / std::sqrt(hh * m.grid.dx * m.grid.dy);
  double ex2 = 0.0, ey2 = 0.0;
  for (std::size_t k = 0; k < m.ex.size(); ++k) {
    ex2 += m.ex[k] * m.ex[k];
    ey2 += m.ey[k] * m.ey[k];
  }
  // deterministic sign: the largest dominant-E sample is positive
  const auto& dom = ex2 >= ey2 ? m.ex : m.ey;
  const auto at = std::max_element(dom.begin(), dom.end(), [](double x, double y) { return std::abs(x) < std::abs(y); });
  if (*at < 0.0) scale = -scale;
  for (auto* f : {&m.hx, &m.hy, &m.ex, &m.ey, &m.ez, &m.hz})
    for (double& v : *f) v *= scale;
  m.te_fraction = ex2 / (ex2 + ey2);
  classify_mode(m, opt.probe_y);
  return m;
}

}  // namespace detail

/// Solves for up to `n_modes` eigenmodes nearest n_eff_guess, returned in
/// descending n_eff (ties within 1e-9 broken by te_fraction, descending). With
/// `guided_only` set, modes outside (outer_index, core_index) are dropped; an
/// empty list means nothing guided was found near the guess.
inline SolveReport solve_modes(const PermittivityMap& map, double wavelength_um, int n_modes, double n_eff_guess,
                               const SolveOptions& opt = {}) {
  if (n_modes < 1) throw ConfigError("solve_modes: n_modes must be at least 1");
  if (!(wavelength_um > 0.0)) throw ConfigError("solve_modes: wavelength must be positive");
  const double n_lo = map.min_index();
  const double n_hi = map.max_index();
  if (!(n_eff_guess >= n_lo && n_eff_guess <= n_hi))
    throw ConfigError("solve_modes: n_eff_guess must lie between the minimum and maximum material index");

  const TransverseOperator op = assemble_operator(map, wavelength_um, opt.mirror);
  SolveReport rep;
  rep.unknowns = 2 * map.grid.size();
  rep.outer_index = map.outer_index();
  rep.core_index = n_hi;

  eig::ShiftInvertOptions eo;
  eo.nev = n_modes;
  eo.sigma = n_eff_guess * n_eff_guess;
  eo.ncv = opt.ncv;
  eo.tol = opt.tol;
  const eig::ShiftInvertResult res = eig::shift_invert_eigs(op.a, eo);
  rep.eigen_restarts = res.restarts;
  rep.linear_solves = res.solves;

  for (std::size_t i = 0; i < res.values.size(); ++i) {
    const auto lam = res.values[i];
    if (std::abs(lam.imag()) > 1e-9 * std::abs(lam.real()) || lam.real() <= 0.0) continue;
    // rotate the (complex) Ritz vector onto the real axis
    const Eigen::VectorXcd& z = res.vectors.col(static_cast<Eigen::Index>(i));
    Eigen::Index at = 0;
    z.cwiseAbs().maxCoeff(&at);
    const auto phase = std::conj(z(at)) / std::abs(z(at));
    Eigen::VectorXd v = (z * phase).real();
    // two-sided Rayleigh quotient with the left eigenvector Sᴾv; the mirrored
    // operator lacks that symmetry, so it gets the one-sided quotient
    const Eigen::VectorXd w = op.mirror == Mirror::none ? Eigen::VectorXd(op.sp * v) : v;
    const double n2 = w.dot(op.a * v) / w.dot(v);
    const double neff = std::sqrt(n2);
    if (opt.guided_only && !(neff > rep.outer_index && neff < rep.core_index)) continue;
    rep.modes.push_back(detail::build_mode(op, map.grid, std::move(v), n2, wavelength_um, opt));
  }
  std::sort(rep.modes.begin(), rep.modes.end(), [](const ModeSolution& a, const ModeSolution& b) {
    if (std::abs(a.n_eff - b.n_eff) <= 1e-9) return a.te_fraction > b.te_fraction;
    return a.n_eff > b.n_eff;
  });
  return rep;
}

/// First mode (highest n_eff) matching the selector, if any.
inline const ModeSolution* select_mode(const std::vector<ModeSolution>& modes, const ModeSelector& sel) {
  for (const auto& m : modes) {
    if (m.label.polarization == sel.polarization && m.label.order == sel.order &&
        m.vertical_nodes == sel.vertical_nodes)
      return &m;
  }
  return nullptr;
}

/// Writes one mode as CSV: x_um, y_um and every stored field component. Ez and
/// Hz are written as imaginary parts, the transverse fields as real parts.
/// Each component is reported at its own Yee location inside cell (i, j).
inline void write_field_csv(const ModeSolution& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << "# wavelength_um=" << std::setprecision(10) << m.wavelength_um << "\n";
  out << "# n_eff=" << std::setprecision(12) << m.n_eff << "\n";
  out << "# label=" << m.label.str() << "\n";
  out << "x_um,y_um,Re_Ex,Im_Ex,Re_Ey,Im_Ey,Re_Ez,Im_Ez,Re_Hx,Im_Hx,Re_Hy,Im_Hy,Re_Hz,Im_Hz\n";
  out << std::setprecision(9);
  const Grid2D& g = m.grid;
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const auto k = g.index(i, j);
      out << g.x(i) << ',' << g.y(j) << ',' << m.ex[k] << ",0," << m.ey[k] << ",0,0," << m.ez[k] << ',' << m.hx[k]
          << ",0," << m.hy[k] << ",0,0," << m.hz[k] << '\n';
    }
  }
}

/// Richardson-style grid refinement study.
struct ConvergenceStudy {
  std::vector<double> spacing;
  std::vector<double> n_eff;
  double extrapolated = 0.0;
  double observed_order = 0.0;
  bool monotone = true;
  std::vector<std::string> warnings;
};

/// Runs `solve(h)` → n_eff for each spacing (strictly decreasing, at least three)
/// and extrapolates from the finest three.
template <class SolveAtSpacing>
ConvergenceStudy refine_convergence(SolveAtSpacing&& solve, const std::vector<double>& spacings) {
  if (spacings.size() < 3) throw ConfigError("refine_convergence: at least three grid spacings are required");
  for (std::size_t i = 1; i < spacings.size(); ++i)
    if (!(spacings[i] < spacings[i - 1]))
      throw ConfigError("refine_convergence: grid spacings must be strictly decreasing");
  ConvergenceStudy st;
  st.spacing = spacings;
  for (double h : spacings) st.n_eff.push_back(solve(h));
  const std::size_t n = spacings.size();
  for (std::size_t i = 2; i < n; ++i) {
    const double d1 = st.n_eff[i - 1] - st.n_eff[i - 2];
    const double d2 = st.n_eff[i] - st.n_eff[i - 1];
    if (d1 * d2 < 0.0 || std::abs(d2) > std::abs(d1)) st.monotone = false;
  }
  const double d1 = st.n_eff[n - 2] - st.n_eff[n - 3];
  const double d2 = st.n_eff[n - 1] - st.n_eff[n - 2];
  const double r = spacings[n - 2] / spacings[n - 1];
  if (!st.monotone) st.warnings.push_back("non-monotone convergence");
  if (d2 == 0.0) {
    st.extrapolated = st.n_eff.back();
    st.observed_order = 0.0;
  } else if (d1 * d2 > 0.0 && std::abs(d2) < std::abs(d1)) {
    st.observed_order = std::log(std::abs(d1 / d2)) / std::log(spacings[n - 3] / spacings[n - 2]);
    st.extrapolated = st.n_eff.back() + d2 / (std::pow(r, st.observed_order) - 1.0);
  } else {
    st.extrapolated = st.n_eff.back();
    st.observed_order = 0.0;
  }
  return st;
}

}  // namespace sqz
