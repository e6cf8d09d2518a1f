#pragma once

// Width sweeps of a selected guided mode, phase-matching and pulley-coupler
// index matching, ring resonance combs and double-resonance temperature tuning.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sqzforge/errors.hpp"
#include "sqzforge/geometry.hpp"
#include "sqzforge/interpolate.hpp"
#include "sqzforge/material.hpp"
#include "sqzforge/modesolver.hpp"
#include "sqzforge/parallel.hpp"
#include "sqzforge/units.hpp"

namespace sqz {

/// n_eff of one (wavelength, mode) pair against a swept geometry variable.
struct DispersionCurve {
  std::string variable = "top_width_um";
  std::string mode;  // e.g. "TE0"
  double wavelength_um = 0.0;
  std::vector<double> x;
  std::vector<double> n_eff;  // NaN where the mode was not found
  std::vector<bool> guided;
  std::vector<std::string> diagnostics;  // one line per missing point

  [[nodiscard]] std::size_t guided_count() const {
    return static_cast<std::size_t>(std::count(guided.begin(), guided.end(), true));
  }
  [[nodiscard]] bool empty() const { return guided_count() == 0; }
  [[nodiscard]] std::string column_name() const {
    std::ostringstream s;
    s << "n_eff_" << mode << '_' << std::lround(wavelength_um * 1000.0) << "nm_riu";
    return s.str();
  }

  /// Guided samples in ascending x.
  [[nodiscard]] std::pair<std::vector<double>, std::vector<double>> guided_points() const {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (guided[i]) pts.emplace_back(x[i], n_eff[i]);
    std::sort(pts.begin(), pts.end());
    std::pair<std::vector<double>, std::vector<double>> out;
    for (const auto& [a, b] : pts) {
      out.first.push_back(a);
      out.second.push_back(b);
    }
    return out;
  }

  /// Curve built from explicit samples (all guided).
  [[nodiscard]] static DispersionCurve from_samples(std::vector<double> x, std::vector<double> n, std::string mode = "",
                                                    double wavelength_um = 0.0) {
    if (x.size() != n.size()) throw ConfigError("dispersion curve: x and n_eff differ in length");
    DispersionCurve c;
    c.mode = std::move(mode);
    c.wavelength_um = wavelength_um;
    c.x = std::move(x);
    c.n_eff = std::move(n);
    c.guided.assign(c.x.size(), true);
    for (double v : c.n_eff)
      if (!std::isfinite(v)) throw ConfigError("dispersion curve: non-finite n_eff sample");
    return c;
  }
};

struct SweepOptions {
  double grid_spacing_um = 0.02;
  double temperature_k = 294.15;
  int n_modes = 6;
  /// Target for the eigen-solver shift, per swept width. Unset: 0.98·n_core.
  std::function<double(double)> n_eff_guess;
  bool use_mirror = true;  // solve one symmetry class on the half window
  unsigned jobs = 1;
  int subsamples = 8;
};

namespace detail {

inline void check_monotone(const std::vector<double>& v, const char* what) {
  if (v.empty()) throw ConfigError(std::string(what) + ": empty sweep");
  if (v.size() < 2) return;
  const bool up = v[1] > v[0];
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (up ? !(v[i] > v[i - 1]) : !(v[i] < v[i - 1]))
      throw ConfigError(std::string(what) + ": sweep values must be strictly monotone");
  }
}

}  // namespace detail

/// Solves the selected mode of `base` (with top_width replaced) at each width.
/// Widths where the mode is not among the guided solutions are marked cut off.
inline std::optional<ModeSolution> solve_selected(const MaterialLibrary& lib, const CrossSection& cs,
                                                  double wavelength_um, const ModeSelector& sel,
                                                  const SweepOptions& opt, std::string* diagnostic = nullptr) {
  const Mirror mirror = opt.use_mirror ? mirror_class(sel) : Mirror::none;
  const Grid2D grid =
      mirror == Mirror::none ? make_window(cs, opt.grid_spacing_um) : make_half_window(cs, opt.grid_spacing_um);
  const PermittivityMap map = permittivity_tensor(lib, cs, wavelength_um, opt.temperature_k, grid, opt.subsamples);
  SolveOptions so;
  so.mirror = mirror;
  so.probe_y = 0.5 * cs.stack.film_thickness;
  double guess = opt.n_eff_guess ? opt.n_eff_guess(cs.top_width) : 0.98 * map.max_index();
  guess = std::clamp(guess, map.min_index(), map.max_index());
  int n_modes = opt.n_modes;
  for (int attempt = 0; attempt < 2; ++attempt, n_modes *= 2) {
    const SolveReport rep = solve_modes(map, wavelength_um, n_modes, guess, so);
    if (const ModeSolution* m = select_mode(rep.modes, sel)) return *m;
    if (diagnostic) {
      std::ostringstream d;
      d << "width " << cs.top_width << " um: " << to_string(sel.polarization) << sel.order << " not among "
        << rep.modes.size() << " guided modes near n_eff " << guess;
      *diagnostic = d.str();
    }
  }
  return std::nullopt;
}

/// n_eff of the selected mode against top width. Points are independent and run
/// on `opt.jobs` workers; the result is ordered like `widths`.
inline DispersionCurve sweep_neff(const MaterialLibrary& lib, const CrossSection& base,
                                  const std::vector<double>& widths, double wavelength_um, const ModeSelector& sel,
                                  const SweepOptions& opt = {}) {
  detail::check_monotone(widths, "sweep_neff");
  DispersionCurve c;
  c.mode = std::string(to_string(sel.polarization)) + std::to_string(sel.order);
  c.wavelength_um = wavelength_um;
  c.x = widths;
  c.n_eff.assign(widths.size(), std::numeric_limits<double>::quiet_NaN());
  c.guided.assign(widths.size(), false);
  std::vector<std::string> diag(widths.size());
  parallel_for(widths.size(), opt.jobs, [&](std::size_t i) {
    CrossSection cs = base;
    cs.top_width = widths[i];
    if (auto m = solve_selected(lib, cs, wavelength_um, sel, opt, &diag[i])) {
      c.n_eff[i] = m->n_eff;
      c.guided[i] = true;
    }
  });
  for (std::size_t i = 0; i < widths.size(); ++i)
    if (!c.guided[i]) c.diagnostics.push_back(diag[i]);
  if (c.empty()) c.diagnostics.push_back(c.mode + ": not found at any width (cut off over the whole sweep)");
  return c;
}

struct CrossingResult {
  bool found = false;
  double width = std::numeric_limits<double>::quiet_NaN();
  double delta = std::numeric_limits<double>::quiet_NaN();  // |Δn_eff| achieved at `width`
  int crossings = 0;                                         // sign changes seen on the overlap
  double min_abs_delta = std::numeric_limits<double>::quiet_NaN();
  double min_at = std::numeric_limits<double>::quiet_NaN();
  std::string message;
};

namespace detail {

inline CrossingResult find_crossing(const std::function<double(double)>& diff, std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  CrossingResult r;
  r.min_abs_delta = std::numeric_limits<double>::infinity();
  std::vector<double> d(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    d[i] = diff(xs[i]);
    if (std::abs(d[i]) < r.min_abs_delta) {
      r.min_abs_delta = std::abs(d[i]);
      r.min_at = xs[i];
    }
  }
  std::optional<std::pair<double, double>> bracket;
  std::optional<double> exact;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (d[i] == 0.0) {
      ++r.crossings;
      if (!bracket && !exact) exact = xs[i];
      continue;
    }
    if (i + 1 < xs.size() && d[i + 1] != 0.0 && (d[i] < 0.0) != (d[i + 1] < 0.0)) {
      ++r.crossings;
      if (!bracket && !exact) bracket = std::make_pair(xs[i], xs[i + 1]);
    }
  }
  if (exact) {
    r.found = true;
    r.width = *exact;
    r.delta = 0.0;
    return r;
  }
  if (!bracket) {
    std::ostringstream m;
    m << "no crossing: min |dn_eff| = " << r.min_abs_delta << " at " << r.min_at;
    r.message = m.str();
    return r;
  }
  double lo = bracket->first, hi = bracket->second;
  double flo = diff(lo);
  for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = diff(mid);
    if (fm == 0.0) {
      lo = hi = mid;
      break;
    }
    if ((fm < 0.0) == (flo < 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  r.found = true;
  r.width = 0.5 * (lo + hi);
  r.delta = std::abs(diff(r.width));
  if (!(r.delta < 1e-5)) throw ConvergenceError("phase matching: bisection did not reach |dn_eff| < 1e-5", r.delta);
  return r;
}

inline MonotoneCubic curve_interpolant(const DispersionCurve& c, const char* which) {
  auto [x, y] = c.guided_points();
  if (x.size() < 2) throw DomainError(std::string(which) + ": fewer than two guided samples");
  return MonotoneCubic(std::move(x), std::move(y));
}

}  // namespace detail

/// Width where two dispersion curves cross, using monotone-cubic interpolation
/// of the guided samples and bisection. When the difference changes sign more
/// than once, the smallest crossing width is returned and `crossings` says how
/// many were seen.
inline CrossingResult find_phasematch_width(const DispersionCurve& a, const DispersionCurve& b) {
  const MonotoneCubic fa = detail::curve_interpolant(a, "phase matching (first curve)");
  const MonotoneCubic fb = detail::curve_interpolant(b, "phase matching (second curve)");
  const double lo = std::max(fa.lo(), fb.lo());
  const double hi = std::min(fa.hi(), fb.hi());
  if (!(hi > lo)) throw DomainError("phase matching: the curves share no width interval");
  std::vector<double> xs{lo, hi};
  for (const auto* c : {&a, &b}) {
    for (std::size_t i = 0; i < c->x.size(); ++i)
      if (c->guided[i] && c->x[i] >= lo && c->x[i] <= hi) xs.push_back(c->x[i]);
  }
  double spread = 0.0;
  for (double x : xs) spread = std::max(spread, std::abs(fa(x) - fb(x)));
  if (spread <= 1e-12) throw DomainError("phase matching: degenerate input, the curves coincide everywhere");
  return detail::find_crossing([&](double w) { return fa(w) - fb(w); }, xs);
}

/// Bus width whose n_eff equals the fixed ring-mode index `target`.
inline CrossingResult find_pulley_match(const DispersionCurve& bus, double target) {
  const MonotoneCubic f = detail::curve_interpolant(bus, "pulley match");
  auto [x, y] = bus.guided_points();
  (void)y;
  return detail::find_crossing([&](double w) { return f(w) - target; }, x);
}

/// Effective index of a ring path as a function of wavelength and temperature,
/// with a linear thermo-optic term. A missing dn/dT is allowed until a
/// temperature-dependent operation needs it.
struct IndexModel {
  std::function<double(double)> n_of_lambda;  // λ in µm
  std::optional<double> dn_dT;               // 1/K
  double t_ref_k = 294.15;
  double min_um = 0.0;
  double max_um = std::numeric_limits<double>::infinity();

  [[nodiscard]] double operator()(double wavelength_um, double temperature_k) const {
    if (!(wavelength_um >= min_um && wavelength_um <= max_um)) {
      std::ostringstream m;
      m << "n_eff model undefined at " << wavelength_um << " um (valid [" << min_um << ", " << max_um << "] um)";
      throw RangeError(m.str());
    }
    const double n = n_of_lambda(wavelength_um);
    if (!std::isfinite(n)) throw RangeError("n_eff model returned a non-finite value");
    return n + (temperature_k - t_ref_k) * dn_dT.value_or(0.0);
  }

  [[nodiscard]] static IndexModel constant(double n, std::optional<double> dn_dT = std::nullopt,
                                           double t_ref_k = 294.15) {
    return {[n](double) { return n; }, dn_dT, t_ref_k};
  }
  /// n(λ) = n0 + slope·(λ − λ0).
  [[nodiscard]] static IndexModel linear(double n0, double lambda0_um, double slope_per_um,
                                         std::optional<double> dn_dT = std::nullopt, double t_ref_k = 294.15) {
    return {[=](double l) { return n0 + slope_per_um * (l - lambda0_um); }, dn_dT, t_ref_k};
  }
};

struct RingGeometry {
  double radius_um = 70.0;
  IndexModel n_eff;

  void validate() const {
    if (!(radius_um > 0.0)) throw ConfigError("ring: radius must be positive");
    if (!n_eff.n_of_lambda) throw ConfigError("ring: no n_eff model");
  }
};

struct Resonance {
  int m = 0;
  double wavelength_um = 0.0;
  double residual_um = 0.0;  // |m·λ − 2πR·n_eff(λ)|
};

/// All resonances m·λ = 2πR·n_eff(λ, T) inside [lo_um, hi_um], ordered by
/// increasing m (decreasing λ).
inline std::vector<Resonance> ring_resonances(const RingGeometry& ring, double lo_um, double hi_um,
                                              double temperature_k) {
  ring.validate();
  if (!(lo_um > 0.0 && hi_um > lo_um)) throw ConfigError("ring_resonances: invalid wavelength window");
  const double circ = 2.0 * kPi * ring.radius_um;
  auto phase = [&](double l) { return circ * ring.n_eff(l, temperature_k) / l; };  // = m at resonance
  const double p_lo = phase(lo_um);
  const double p_hi = phase(hi_um);
  const int m_min = static_cast<int>(std::ceil(std::min(p_lo, p_hi)));
  const int m_max = static_cast<int>(std::floor(std::max(p_lo, p_hi)));
  std::vector<Resonance> out;
  for (int m = m_min; m <= m_max; ++m) {
    auto g = [&](double l) { return m * l - circ * ring.n_eff(l, temperature_k); };
    double a = lo_um, b = hi_um;
    double ga = g(a);
    if ((ga < 0.0) == (g(b) < 0.0)) continue;  // phase not monotone over the window
    for (int it = 0; it < 200 && b - a > 1e-15; ++it) {
      const double mid = 0.5 * (a + b);
      const double gm = g(mid);
      if ((gm < 0.0) == (ga < 0.0)) {
        a = mid;
        ga = gm;
      } else {
        b = mid;
      }
    }
    const double l = 0.5 * (a + b);
    const double res = std::abs(g(l));
    if (!(res < 1e-6)) throw ConvergenceError("ring_resonances: resonance condition not met", res);
    out.push_back({m, l, res});
  }
  return out;
}

/// Ring carrying the signal and pump families on separate n_eff models.
struct DoubleRing {
  double radius_um = 70.0;
  IndexModel signal;
  IndexModel pump;
};

struct DoubleResonance {
  int signal_m = 0;
  double signal_um = 0.0;
  int pump_m = 0;
  double pump_um = 0.0;
  double detuning_ghz = 0.0;  // c/(λs/2) − c/λp
  bool reachable = false;
  double delta_t_k = std::numeric_limits<double>::quiet_NaN();
  std::string message;
};

/// Detuning of the pump resonance nearest λs/2 and the temperature change
/// (within ±dt_max_k) that nulls it, keeping both azimuthal orders fixed.
/// `signal_um` should be a signal resonance at `temperature_k`; the nearest
/// signal resonance is used.
inline DoubleResonance double_resonance_detuning(const DoubleRing& ring, double signal_um, double temperature_k,
                                                 double dt_max_k = 10.0) {
  if (!ring.signal.dn_dT || !ring.pump.dn_dT)
    throw ConfigError("double resonance: both n_eff models need a dn/dT");
  if (!(dt_max_k >= 0.0)) throw ConfigError("double resonance: dt_max must be non-negative");
  const double circ = 2.0 * kPi * ring.radius_um;
  DoubleResonance r;

  auto solve_order = [&](const IndexModel& model, int m, double guess, double t) {
    // m·λ = circ·n(λ, T): fixed point λ ← circ·n(λ)/m, then Newton-free polish
    double l = guess;
    for (int it = 0; it < 200; ++it) {
      const double next = circ * model(l, t) / m;
      if (std::abs(next - l) < 1e-15) {
        l = next;
        break;
      }
      l = next;
    }
    return l;
  };

  r.signal_m = static_cast<int>(std::lround(circ * ring.signal(signal_um, temperature_k) / signal_um));
  r.signal_um = solve_order(ring.signal, r.signal_m, signal_um, temperature_k);
  const double target = 0.5 * r.signal_um;
  r.pump_m = static_cast<int>(std::lround(circ * ring.pump(target, temperature_k) / target));
  r.pump_um = solve_order(ring.pump, r.pump_m, target, temperature_k);

  auto detuning = [&](double dt) {
    const double ls = solve_order(ring.signal, r.signal_m, r.signal_um, temperature_k + dt);
    const double lp = solve_order(ring.pump, r.pump_m, r.pump_um, temperature_k + dt);
    return (kSpeedOfLight / (0.5 * ls * 1e-6) - kSpeedOfLight / (lp * 1e-6)) * 1e-9;
  };
  r.detuning_ghz = detuning(0.0);
  if (r.detuning_ghz == 0.0) {
    r.reachable = true;
    r.delta_t_k = 0.0;
    return r;
  }
  if (dt_max_k == 0.0) {
    r.message = "not reachable within +/-0 K";
    return r;
  }
  // scan outward from ΔT = 0 for the nearest sign change, then bisect
  const int steps = 400;
  double best_lo = 0.0, best_hi = 0.0;
  bool found = false;
  for (int side : {+1, -1}) {
    double prev_t = 0.0, prev_d = r.detuning_ghz;
    for (int k = 1; k <= steps; ++k) {
      const double t = side * dt_max_k * k / steps;
      const double d = detuning(t);
      if (d == 0.0 || (d < 0.0) != (prev_d < 0.0)) {
        if (!found || std::abs(t) < std::max(std::abs(best_lo), std::abs(best_hi))) {
          best_lo = prev_t;
          best_hi = t;
          found = true;
        }
        break;
      }
      prev_t = t;
      prev_d = d;
    }
  }
  if (!found) {
    std::ostringstream m;
    m << "not reachable within +/-" << dt_max_k << " K";
    r.message = m.str();
    return r;
  }
  double a = best_lo, b = best_hi, fa = detuning(a);
  for (int it = 0; it < 200 && std::abs(b - a) > 1e-13; ++it) {
    const double mid = 0.5 * (a + b);
    const double fm = detuning(mid);
    if (fm == 0.0) {
      a = b = mid;
      break;
    }
    if ((fm < 0.0) == (fa < 0.0)) {
      a = mid;
      fa = fm;
    } else {
      b = mid;
    }
  }
  r.reachable = true;
  r.delta_t_k = 0.5 * (a + b);
  return r;
}

/// Writes curves sharing one sweep as CSV: the sweep column followed by one
/// n_eff column per curve (empty cell where the mode is cut off).
inline std::string sweep_csv(const std::vector<DispersionCurve>& curves) {
  if (curves.empty()) throw ConfigError("sweep_csv: no curves");
  const auto& x = curves.front().x;
  for (const auto& c : curves)
    if (c.x != x) throw ConfigError("sweep_csv: curves use different sweep values");
  std::ostringstream out;
  out << curves.front().variable;
  for (const auto& c : curves) out << ',' << c.column_name();
  out << '\n' << std::setprecision(12);
  for (std::size_t i = 0; i < x.size(); ++i) {
    out << x[i];
    for (const auto& c : curves) {
      out << ',';
      if (c.guided[i]) out << c.n_eff[i];
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace sqz
