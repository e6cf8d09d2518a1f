#pragma once

// Lorentzian resonance algebra and the photorefractive scan simulator.
//
// Rates convention: κ0 and κe are given in Hz as their contributions to the
// full linewidth, so the loaded FWHM is κ0 + κe and Q = ν0 / (κ0 + κe). (They
// are the energy decay rates divided by 2π.)

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sqzforge/errors.hpp"
#include "sqzforge/trace.hpp"
#include "sqzforge/units.hpp"

namespace sqz {

enum class Regime { under, critical, over };

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::under: return "under";
    case Regime::critical: return "critical";
    case Regime::over: return "over";
  }
  return "?";
}

inline Regime parse_regime(std::string_view s) {
  if (s == "under") return Regime::under;
  if (s == "critical") return Regime::critical;
  if (s == "over") return Regime::over;
  throw ConfigError("regime must be under, critical or over (got '" + std::string(s) + "')");
}

struct CavityParams {
  double lambda0_nm = 775.0;
  double kappa0_hz = 0.0;
  double kappae_hz = 0.0;

  void validate() const {
    if (!(lambda0_nm > 0.0)) throw ConfigError("cavity: resonance wavelength must be positive");
    if (!(kappa0_hz > 0.0 && kappae_hz > 0.0)) throw ConfigError("cavity: decay rates must be positive");
  }

  [[nodiscard]] double nu0_hz() const { return kSpeedOfLight / (lambda0_nm * 1e-9); }
  [[nodiscard]] double fwhm_hz() const { return kappa0_hz + kappae_hz; }
  [[nodiscard]] double q_loaded() const { return nu0_hz() / fwhm_hz(); }
  [[nodiscard]] double q_intrinsic() const { return nu0_hz() / kappa0_hz; }
  [[nodiscard]] double fwhm_nm() const { return lambda0_nm / q_loaded(); }
  [[nodiscard]] double escape_efficiency() const { return kappae_hz / (kappa0_hz + kappae_hz); }

  [[nodiscard]] Regime regime() const {
    if (std::abs(kappae_hz - kappa0_hz) / (kappae_hz + kappa0_hz) < 1e-3) return Regime::critical;
    return kappae_hz > kappa0_hz ? Regime::over : Regime::under;
  }

  /// Parameters from a loaded Q and the escape efficiency κe/(κ0+κe).
  [[nodiscard]] static CavityParams from_q(double lambda0_nm, double q_loaded, double escape) {
    if (!(q_loaded > 0.0)) throw ConfigError("cavity: Q must be positive");
    if (!(escape > 0.0 && escape < 1.0)) throw ConfigError("cavity: escape efficiency must lie in (0, 1)");
    CavityParams p;
    p.lambda0_nm = lambda0_nm;
    const double total = p.nu0_hz() / q_loaded;
    p.kappae_hz = escape * total;
    p.kappa0_hz = total - p.kappae_hz;
    return p;
  }
};

/// Transmitted power fraction at detuning δ (Hz):
///   T = (δ² + (κ0 − κe)²/4) / (δ² + (κ0 + κe)²/4).
inline double lorentzian_transmission(double detuning_hz, const CavityParams& p) {
  const double d2 = detuning_hz * detuning_hz;
  const double a = p.kappa0_hz - p.kappae_hz;
  const double b = p.kappa0_hz + p.kappae_hz;
  return (d2 + 0.25 * a * a) / (d2 + 0.25 * b * b);
}

/// Same, for a wavelength offset from λ0 (nm).
inline double lorentzian_transmission_nm(double offset_nm, const CavityParams& p) {
  const double l0 = p.lambda0_nm * 1e-9;
  return lorentzian_transmission(kSpeedOfLight * offset_nm * 1e-9 / (l0 * l0), p);
}

struct Linewidth {
  double fwhm_hz = 0.0;
  double fwhm_nm = 0.0;
};

inline Linewidth q_linewidth(double q_loaded, double lambda0_nm) {
  if (!(q_loaded > 0.0)) throw ConfigError("q_linewidth: Q must be positive");
  if (!(lambda0_nm > 0.0)) throw ConfigError("q_linewidth: wavelength must be positive");
  return {kSpeedOfLight / (lambda0_nm * 1e-9) / q_loaded, lambda0_nm / q_loaded};
}

inline double escape_efficiency(const CavityParams& p) {
  p.validate();
  return p.escape_efficiency();
}

/// Single-pole photorefractive response: the resonance shift Δ (nm) relaxes
/// toward −β·P_circ with time constant τ, where P_circ = P_in·buildup_norm·L(δ)
/// and L is the unit-peak Lorentzian buildup at the instantaneous detuning.
struct PhotorefractiveParams {
  double beta_nm_per_mw = 0.0;
  double tau_s = 1.0;
  double buildup_norm = 1.0;

  void validate() const {
    if (!(tau_s > 0.0)) throw ConfigError("photorefractive: tau must be positive");
    if (!(beta_nm_per_mw >= 0.0)) throw ConfigError("photorefractive: beta must be non-negative");
    if (!(buildup_norm >= 0.0)) throw ConfigError("photorefractive: buildup_norm must be non-negative");
  }
};

enum class ScanDirection { increasing, decreasing };

struct ScanSettings {
  double speed_nm_per_s = 0.5;
  double power_mw = 1.0;
  double lo_nm = 0.0;  // window
  double hi_nm = 0.0;
  ScanDirection direction = ScanDirection::decreasing;
  int samples_per_fwhm = 100;
  std::size_t max_samples = 5'000'000;
};

struct ScanResult {
  Trace transmission;  // ascending wavelength
  Trace buildup;       // L(δ) at the same samples, 1 on resonance
  double final_shift_nm = 0.0;
};

/// Integrates the shift ODE with fixed-step RK4 while the laser sweeps the
/// window. The output step is FWHM/samples_per_fwhm in wavelength; each output
/// step is split further when the relaxation is stiff.
inline ScanResult simulate_scan(const CavityParams& cav, const PhotorefractiveParams& pr, const ScanSettings& scan) {
  cav.validate();
  pr.validate();
  if (!(scan.speed_nm_per_s > 0.0)) throw ConfigError("simulate_scan: scan speed must be positive");
  if (!(scan.power_mw >= 0.0)) throw ConfigError("simulate_scan: input power must be non-negative");
  if (!(scan.hi_nm > scan.lo_nm)) throw ConfigError("simulate_scan: empty wavelength window");
  if (!(cav.lambda0_nm >= scan.lo_nm && cav.lambda0_nm <= scan.hi_nm))
    throw ConfigError("simulate_scan: window must contain the resonance");
  if (scan.samples_per_fwhm < 2) throw ConfigError("simulate_scan: samples_per_fwhm must be at least 2");

  const double fwhm = cav.fwhm_nm();
  const double hw = 0.5 * fwhm;
  const double dl = fwhm / scan.samples_per_fwhm;
  const double span = scan.hi_nm - scan.lo_nm;
  const double steps_d = std::ceil(span / dl);
  if (!(steps_d < static_cast<double>(scan.max_samples)))
    throw ConfigError("simulate_scan: window too wide for the requested resolution (" + format_number(steps_d, 6) +
                      " samples)");
  const auto steps = static_cast<std::size_t>(steps_d);
  const double step_nm = span / static_cast<double>(steps);
  const double dt_out = step_nm / scan.speed_nm_per_s;

  const double drive = pr.beta_nm_per_mw * scan.power_mw * pr.buildup_norm;  // nm at full buildup
  // fastest local relaxation rate: 1/τ plus the drive's slope through L
  const double rate = (1.0 + drive * (3.0 * std::sqrt(3.0) / 8.0) / hw) / pr.tau_s;
  const int sub = std::max(1, static_cast<int>(std::ceil(dt_out * rate / 2.5)));
  const double dt = dt_out / sub;
  const double sgn = scan.direction == ScanDirection::increasing ? 1.0 : -1.0;
  const double start = scan.direction == ScanDirection::increasing ? scan.lo_nm : scan.hi_nm;

  auto lorentz = [&](double det) { return hw * hw / (det * det + hw * hw); };
  auto rhs = [&](double t, double shift) {
    const double laser = start + sgn * scan.speed_nm_per_s * t;
    return -(shift + drive * lorentz(laser - cav.lambda0_nm - shift)) / pr.tau_s;
  };

  std::vector<double> xs(steps + 1), ts(steps + 1), bs(steps + 1);
  double shift = 0.0;
  double t = 0.0;
  for (std::size_t k = 0;; ++k) {
    const double laser = start + sgn * step_nm * static_cast<double>(k);
    const double det = laser - cav.lambda0_nm - shift;
    xs[k] = laser;
    ts[k] = lorentzian_transmission_nm(det, cav);
    bs[k] = lorentz(det);
    if (k == steps) break;
    if (pr.beta_nm_per_mw == 0.0) {
      t += dt_out;
      continue;
    }
    for (int s = 0; s < sub; ++s) {
      const double k1 = rhs(t, shift);
      const double k2 = rhs(t + 0.5 * dt, shift + 0.5 * dt * k1);
      const double k3 = rhs(t + 0.5 * dt, shift + 0.5 * dt * k2);
      const double k4 = rhs(t + dt, shift + dt * k3);
      shift += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      t += dt;
    }
  }
  if (scan.direction == ScanDirection::decreasing) {
    std::reverse(xs.begin(), xs.end());
    std::reverse(ts.begin(), ts.end());
    std::reverse(bs.begin(), bs.end());
  }

  ScanResult out;
  out.final_shift_nm = shift;
  Meta meta = {{"scan_speed_nm_per_s", format_number(scan.speed_nm_per_s)},
               {"input_power_mw", format_number(scan.power_mw)},
               {"scan_direction", scan.direction == ScanDirection::increasing ? "increasing" : "decreasing"},
               {"lambda0_nm", format_number(cav.lambda0_nm)},
               {"kappa0_hz", format_number(cav.kappa0_hz)},
               {"kappae_hz", format_number(cav.kappae_hz)},
               {"beta_nm_per_mw", format_number(pr.beta_nm_per_mw)},
               {"tau_s", format_number(pr.tau_s)},
               {"buildup_norm", format_number(pr.buildup_norm)}};
  out.transmission.x_kind = XKind::wavelength_nm;
  out.transmission.y_name = "transmission_fraction";
  out.transmission.x = xs;
  out.transmission.y = std::move(ts);
  out.transmission.meta = meta;
  out.buildup.x_kind = XKind::wavelength_nm;
  out.buildup.y_name = "buildup_fraction";
  out.buildup.x = std::move(xs);
  out.buildup.y = std::move(bs);
  out.buildup.meta = std::move(meta);
  return out;
}

/// Dip shape summary. The centre is the minimum-transmission sample; half
/// widths are measured from it to the half-depth level (linear interpolation
/// between samples), with the baseline taken as the larger end value.
struct DipShape {
  double center = 0.0;
  double depth = 0.0;
  double left_half_width = 0.0;
  double right_half_width = 0.0;
  [[nodiscard]] double fwhm() const { return left_half_width + right_half_width; }
  /// (right − left)/FWHM; positive when the dip trails toward larger x.
  [[nodiscard]] double asymmetry() const { return (right_half_width - left_half_width) / fwhm(); }
};

inline DipShape dip_shape(const Trace& tr) {
  tr.validate();
  const std::size_t n = tr.x.size();
  if (n < 3) throw InputError("dip_shape: trace too short");
  const auto it = std::min_element(tr.y.begin(), tr.y.end());
  const std::size_t im = static_cast<std::size_t>(it - tr.y.begin());
  const double base = std::max(tr.y.front(), tr.y.back());
  DipShape d;
  d.center = tr.x[im];
  d.depth = base - *it;
  if (!(d.depth > 1e-9 * std::max(1.0, std::abs(base)))) throw ConvergenceError("dip_shape: trace has no dip", d.depth);
  const double half = *it + 0.5 * d.depth;
  auto crossing = [&](int step) -> double {
    std::size_t i = im;
    while (true) {
      if ((step < 0 && i == 0) || (step > 0 && i == n - 1))
        throw InputError("dip_shape: dip does not recover to half depth inside the window");
      const std::size_t j = step < 0 ? i - 1 : i + 1;
      if (tr.y[j] >= half) {
        const double f = (half - tr.y[i]) / (tr.y[j] - tr.y[i]);
        return std::abs(tr.x[i] + f * (tr.x[j] - tr.x[i]) - tr.x[im]);
      }
      i = j;
    }
  };
  const bool ascending = tr.x[1] > tr.x[0];
  const double w_lo = crossing(-1);
  const double w_hi = crossing(+1);
  d.left_half_width = ascending ? w_lo : w_hi;
  d.right_half_width = ascending ? w_hi : w_lo;
  return d;
}

inline double asymmetry(const Trace& tr) { return dip_shape(tr).asymmetry(); }

/// Largest |trace − static Lorentzian| over the samples.
inline double lorentzian_deviation(const Trace& tr, const CavityParams& cav) {
  double worst = 0.0;
  for (std::size_t i = 0; i < tr.x.size(); ++i)
    worst = std::max(worst, std::abs(tr.y[i] - lorentzian_transmission_nm(tr.x[i] - cav.lambda0_nm, cav)));
  return worst;
}

struct ShiftRegression {
  std::vector<double> power_mw;
  std::vector<double> center_nm;
  double slope_nm_per_mw = 0.0;
  double intercept_nm = 0.0;
  double r_squared = 0.0;
};

/// Least-squares line through (power, centre) pairs.
inline ShiftRegression regress_centers(std::vector<double> p, std::vector<double> c) {
  if (p.size() != c.size() || p.size() < 2) throw ConfigError("regression: need at least two (power, centre) pairs");
  const double n = static_cast<double>(p.size());
  double sp = 0, sc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    sp += p[i];
    sc += c[i];
  }
  const double mp = sp / n, mc = sc / n;
  double spp = 0, spc = 0, scc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    spp += (p[i] - mp) * (p[i] - mp);
    spc += (p[i] - mp) * (c[i] - mc);
    scc += (c[i] - mc) * (c[i] - mc);
  }
  if (spp == 0.0) throw ConfigError("regression: powers must not all be equal");
  ShiftRegression r;
  r.slope_nm_per_mw = spc / spp;
  r.intercept_nm = mc - r.slope_nm_per_mw * mp;
  r.r_squared = scc == 0.0 ? 1.0 : spc * spc / (spp * scc);
  r.power_mw = std::move(p);
  r.center_nm = std::move(c);
  return r;
}

/// Window that holds the dragged dip for the given drive: from the largest
/// expected blue shift (plus margin) to a few linewidths above λ0.
inline std::pair<double, double> scan_window(const CavityParams& cav, const PhotorefractiveParams& pr,
                                             double max_power_mw, double margin_fwhm = 40.0) {
  const double fwhm = cav.fwhm_nm();
  const double drag = pr.beta_nm_per_mw * pr.buildup_norm * max_power_mw;
  return {cav.lambda0_nm - 1.1 * drag - margin_fwhm * fwhm, cav.lambda0_nm + margin_fwhm * fwhm};
}

/// Dip centres against power at one scan speed and their regression line.
inline ShiftRegression center_shift(const CavityParams& cav, const PhotorefractiveParams& pr,
                                    const std::vector<double>& powers_mw, double speed_nm_per_s,
                                    ScanDirection dir = ScanDirection::decreasing) {
  if (powers_mw.empty()) throw ConfigError("center_shift: empty power ladder");
  const auto [lo, hi] = scan_window(cav, pr, *std::max_element(powers_mw.begin(), powers_mw.end()));
  std::vector<double> centers;
  for (double p : powers_mw) {
    ScanSettings s;
    s.speed_nm_per_s = speed_nm_per_s;
    s.power_mw = p;
    s.lo_nm = lo;
    s.hi_nm = hi;
    s.direction = dir;
    centers.push_back(dip_shape(simulate_scan(cav, pr, s).transmission).center);
  }
  return regress_centers(powers_mw, centers);
}

/// β that makes the centre-vs-power slope equal `target_slope` (nm/mW, negative
/// for a blue shift) at the given speed. Secant iteration on the slope, which
/// is close to −β·buildup_norm in the dragged regime.
inline double calibrate_beta(const CavityParams& cav, PhotorefractiveParams pr, const std::vector<double>& powers_mw,
                             double speed_nm_per_s, double target_slope, double rel_tol = 1e-4) {
  if (!(target_slope < 0.0)) throw ConfigError("calibrate_beta: target slope must be negative (blue shift)");
  if (!(pr.buildup_norm > 0.0)) throw ConfigError("calibrate_beta: buildup_norm must be positive");
  auto slope_at = [&](double beta) {
    pr.beta_nm_per_mw = beta;
    return center_shift(cav, pr, powers_mw, speed_nm_per_s).slope_nm_per_mw;
  };
  double b0 = -target_slope / pr.buildup_norm;
  double s0 = slope_at(b0);
  double b1 = b0 * target_slope / s0;
  for (int it = 0; it < 30; ++it) {
    const double s1 = slope_at(b1);
    if (std::abs(s1 - target_slope) <= rel_tol * std::abs(target_slope)) return b1;
    const double denom = s1 - s0;
    const double next = denom != 0.0 ? b1 - (s1 - target_slope) * (b1 - b0) / denom : b1 * target_slope / s1;
    b0 = b1;
    s0 = s1;
    b1 = next > 0.0 ? next : 0.5 * b1;
  }
  throw ConvergenceError("calibrate_beta: slope did not converge", std::abs(slope_at(b1) - target_slope));
}

}  // namespace sqz
