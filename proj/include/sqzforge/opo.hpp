#pragma once

// Below-threshold degenerate OPO: parametric gain, squeezing spectrum,
// detection efficiency and loss bookkeeping.
//
// With x = sqrt(Pp/Pth) and sideband f against the signal HWHM fs:
//   S± = 1 ± 4ηx / ((1 ∓ x)² + (f/fs)²)

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sqzforge/errors.hpp"
#include "sqzforge/trace.hpp"
#include "sqzforge/units.hpp"

namespace sqz {

struct SqueezerParams {
  double eta = 0.23;
  double pth_mw = 1.0;
  double fs_mhz = 310.0;
  double pp_mw = 0.0;

  void validate() const {
    if (!(eta > 0.0 && eta <= 1.0)) throw DomainError("efficiency must lie in (0, 1]");
    if (!(pth_mw > 0.0)) throw DomainError("threshold power must be positive");
    if (!(fs_mhz > 0.0)) throw DomainError("cavity half-width must be positive");
    if (!(pp_mw >= 0.0)) throw DomainError("pump power must be non-negative");
  }

  [[nodiscard]] double ratio() const { return pp_mw / pth_mw; }
  [[nodiscard]] double x() const { return std::sqrt(ratio()); }

  /// Pump expressed as Pp/Pth (threshold normalised to 1 mW).
  [[nodiscard]] static SqueezerParams from_ratio(double eta, double ratio, double fs_mhz) {
    return {eta, 1.0, fs_mhz, ratio};
  }
};

struct NoisePower {
  double s_minus = 1.0;
  double s_plus = 1.0;
  [[nodiscard]] double minus_db() const { return to_db(s_minus); }
  [[nodiscard]] double plus_db() const { return to_db(s_plus); }
};

/// One branch of the spectrum; sign = −1 for squeezing, +1 for anti-squeezing.
inline double noise_branch(double eta, double x, double fs_mhz, double f_mhz, int sign) {
  const double phi = (f_mhz / fs_mhz) * (f_mhz / fs_mhz);
  const double d = (1.0 - sign * x) * (1.0 - sign * x) + phi;
  return 1.0 + sign * 4.0 * eta * x / d;
}

inline NoisePower noise_power(const SqueezerParams& p, double f_mhz) {
  p.validate();
  if (!(p.pp_mw < p.pth_mw)) throw DomainError("noise_power: pump at/above threshold");
  const double x = p.x();
  return {noise_branch(p.eta, x, p.fs_mhz, f_mhz, -1), noise_branch(p.eta, x, p.fs_mhz, f_mhz, +1)};
}

struct GainEnvelope {
  double g_plus = 1.0;
  double g_minus = 1.0;
  /// Quadrature decomposition G(θ) = G₊cos²θ + G₋sin²θ.
  [[nodiscard]] double at(double theta) const {
    const double c = std::cos(theta), s = std::sin(theta);
    return g_plus * c * c + g_minus * s * s;
  }
};

inline GainEnvelope gain_envelope(double x) {
  if (!(x >= 0.0 && x < 1.0)) throw DomainError("parametric gain: pump at/above threshold");
  return {1.0 / ((1.0 - x) * (1.0 - x)), 1.0 / ((1.0 + x) * (1.0 + x))};
}

inline GainEnvelope gain_envelope(double pp_mw, double pth_mw) {
  if (!(pth_mw > 0.0)) throw DomainError("parametric gain: threshold must be positive");
  if (!(pp_mw >= 0.0)) throw DomainError("parametric gain: pump power must be non-negative");
  if (!(pp_mw < pth_mw)) throw DomainError("parametric gain: pump at/above threshold");
  return gain_envelope(std::sqrt(pp_mw / pth_mw));
}

inline double parametric_gain(double pp_mw, double pth_mw, double theta) {
  return gain_envelope(pp_mw, pth_mw).at(theta);
}

struct ThresholdEstimate {
  double pth_mw = 0.0;                // from G₊
  std::optional<double> pth_minus_mw;  // from G₋ when given
  [[nodiscard]] std::optional<double> spread_mw() const {
    if (!pth_minus_mw) return std::nullopt;
    return std::abs(*pth_minus_mw - pth_mw);
  }
};

inline ThresholdEstimate threshold_from_gain(double g_plus, double pp_mw, std::optional<double> g_minus = {}) {
  if (!(g_plus > 1.0)) throw DomainError("threshold_from_gain: amplification must exceed 1");
  if (!(pp_mw > 0.0)) throw DomainError("threshold_from_gain: pump power must be positive");
  ThresholdEstimate e;
  const double x = 1.0 - 1.0 / std::sqrt(g_plus);
  e.pth_mw = pp_mw / (x * x);
  if (g_minus) {
    if (!(*g_minus > 0.0 && *g_minus < 1.0)) throw DomainError("threshold_from_gain: deamplification must lie in (0, 1)");
    const double xm = 1.0 / std::sqrt(*g_minus) - 1.0;
    e.pth_minus_mw = pp_mw / (xm * xm);
  }
  return e;
}

/// Product of detection efficiencies. `opt` may instead be given as a list of
/// named sub-factors (grating couplers, fibre, ...); when both are present they
/// must agree.
struct EfficiencyBudget {
  struct Factor {
    std::string name;
    double value = 1.0;
  };

  double qe = 1.0;
  double vis2 = 1.0;
  std::optional<double> opt;
  std::vector<Factor> opt_factors;
  double esc = 1.0;

  [[nodiscard]] double optical() const {
    if (opt_factors.empty()) return opt.value_or(1.0);
    double prod = 1.0;
    for (const auto& f : opt_factors) prod *= f.value;
    return prod;
  }

  void validate() const {
    auto check = [](const std::string& name, double v) {
      if (!(v > 0.0 && v <= 1.0)) throw DomainError("budget: " + name + " = " + format_number(v) + " outside (0, 1]");
    };
    check("qe", qe);
    check("vis2", vis2);
    check("esc", esc);
    if (opt) check("opt", *opt);
    for (const auto& f : opt_factors) check(f.name, f.value);
    if (opt && !opt_factors.empty() && std::abs(optical() - *opt) > 1e-6 * *opt)
      throw DomainError("budget: opt = " + format_number(*opt) + " disagrees with the product of its factors (" +
                        format_number(optical()) + ")");
  }

  /// Efficiency outside the chip: everything except the escape efficiency.
  [[nodiscard]] double external() const {
    validate();
    return qe * vis2 * optical();
  }
};

inline double budget_total(const EfficiencyBudget& b) {
  b.validate();
  return b.qe * b.vis2 * b.optical() * b.esc;
}

/// Beam-splitter loss: S_out = ηS_in + (1 − η).
inline double propagate_loss(double s_in, double eta) {
  if (!(s_in > 0.0)) throw DomainError("propagate_loss: noise power must be positive");
  if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError("propagate_loss: efficiency must lie in [0, 1]");
  return eta * s_in + (1.0 - eta);
}

inline double infer_onchip(double s_meas, double eta_external) {
  if (!(eta_external > 0.0 && eta_external <= 1.0)) throw DomainError("infer_onchip: efficiency must lie in (0, 1]");
  if (!(s_meas > 1.0 - eta_external)) throw DomainError("infer_onchip: unphysical measurement for stated efficiency");
  return (s_meas - (1.0 - eta_external)) / eta_external;
}

struct EtaX {
  double eta = std::numeric_limits<double>::quiet_NaN();
  double x = 0.0;
  bool eta_identifiable = true;
};

/// Solves the two branches for (η, x). With R = (S₊ − 1)/(1 − S₋) and
/// φ = (f/fs)², eliminating η leaves
///   (1 − R)x² + (2 + 2R)x + (1 − R)(1 + φ) = 0,
/// whose roots multiply to 1 + φ; the smaller one is below threshold.
inline EtaX infer_eta_x(double s_minus, double s_plus, double f_mhz, double fs_mhz) {
  if (!(fs_mhz > 0.0)) throw DomainError("infer_eta_x: cavity half-width must be positive");
  if (!(s_minus > 0.0 && s_plus > 0.0)) throw DomainError("infer_eta_x: noise powers must be positive");
  if (s_minus == 1.0 && s_plus == 1.0) return {std::numeric_limits<double>::quiet_NaN(), 0.0, false};
  if (!(s_plus > 1.0 && s_minus < 1.0)) throw DomainError("infer_eta_x: need S+ > 1 > S-");
  const double phi = (f_mhz / fs_mhz) * (f_mhz / fs_mhz);
  const double r = (s_plus - 1.0) / (1.0 - s_minus);
  if (!(r > 1.0)) throw DomainError("infer_eta_x: inconsistent pair (anti-squeezing must exceed squeezing)");
  const double a = r - 1.0, b = r + 1.0;
  const double disc = b * b - a * a * (1.0 + phi);
  if (disc < 0.0) throw DomainError("infer_eta_x: inconsistent pair (no real solution)");
  const double x = (1.0 + phi) * a / (b + std::sqrt(disc));  // stable form of the smaller root
  const double eta = (1.0 - s_minus) * ((1.0 + x) * (1.0 + x) + phi) / (4.0 * x);
  if (eta > 1.0 + 1e-9) throw DomainError("infer_eta_x: inconsistent pair (eta = " + format_number(eta) + " > 1)");
  return {eta, x, true};
}

/// S₋ at f = 0 as Pp → Pth: 1 − η. Returns 0 for η = 1 (callers print −inf dB).
inline double project_threshold_limit(double eta) {
  if (!(eta > 0.0 && eta <= 1.0)) throw DomainError("project_threshold_limit: efficiency must lie in (0, 1]");
  return 1.0 - eta;
}

struct HomodyneSettings {
  double f_mhz = 5.0;
  double lo_scan_hz = 0.5;
  double duration_s = 4.0;
  double rbw_hz = 1e6;
  double vbw_hz = 100.0;
  double sample_rate_hz = 0.0;  // 0: ten samples per video time constant
  std::uint64_t seed = 1;
};

/// Spectrum-analyser zero-span trace while the LO phase sweeps. Estimator noise
/// is multiplicative with relative std 1/sqrt(rbw/vbw) after a single-pole
/// video filter; white noise is pre-scaled so the filtered std hits that value.
inline Trace homodyne_trace(const SqueezerParams& p, const HomodyneSettings& h) {
  if (!(h.rbw_hz > 0.0 && h.vbw_hz > 0.0)) throw ConfigError("homodyne: bandwidths must be positive");
  if (!(h.vbw_hz < h.rbw_hz)) throw ConfigError("homodyne: video bandwidth must be below the resolution bandwidth");
  if (!(h.lo_scan_hz > 0.0 && h.duration_s > 0.0)) throw ConfigError("homodyne: scan rate and duration must be positive");
  if (!(h.duration_s * h.lo_scan_hz >= 1.0)) throw ConfigError("homodyne: duration must cover at least one LO period");
  const NoisePower np = noise_power(p, h.f_mhz);

  const double fsamp = h.sample_rate_hz > 0.0 ? h.sample_rate_hz : 20.0 * kPi * h.vbw_hz;
  const double dt = 1.0 / fsamp;
  const auto n = static_cast<std::size_t>(std::floor(h.duration_s * fsamp)) + 1;
  if (n > 50'000'000) throw ConfigError("homodyne: too many samples");
  const double a = std::exp(-2.0 * kPi * h.vbw_hz * dt);
  const double rel = 1.0 / std::sqrt(h.rbw_hz / h.vbw_hz);
  const double pre = rel * std::sqrt((1.0 + a) / (1.0 - a));

  std::mt19937_64 rng(h.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Trace tr;
  tr.x_kind = XKind::time_s;
  tr.y_name = "noise_db_rel_shot";
  tr.x.resize(n);
  tr.y.resize(n);
  double filt = rel * normal(rng);  // start in the stationary state
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * dt;
    if (k > 0) filt = a * filt + (1.0 - a) * pre * normal(rng);
    const double th = 2.0 * kPi * h.lo_scan_hz * t;
    const double c = std::cos(th), s = std::sin(th);
    const double ideal = np.s_plus * c * c + np.s_minus * s * s;
    tr.x[k] = t;
    tr.y[k] = to_db(ideal * std::max(1.0 + filt, 1e-12));
  }
  tr.meta = {{"f_mhz", format_number(h.f_mhz)},
             {"lo_scan_hz", format_number(h.lo_scan_hz)},
             {"rbw_hz", format_number(h.rbw_hz)},
             {"vbw_hz", format_number(h.vbw_hz)},
             {"seed", std::to_string(h.seed)},
             {"eta", format_number(p.eta)},
             {"pump_ratio", format_number(p.ratio())},
             {"fs_mhz", format_number(p.fs_mhz)},
             {"s_minus_db", format_number(np.minus_db())},
             {"s_plus_db", format_number(np.plus_db())}};
  return tr;
}

/// Phase-sensitive gain along a pump scan. The local pump ratio follows the
/// cavity buildup; the relative phase slips linearly in wavelength.
inline Trace gain_trace(const Trace& buildup, double pp_mw, double pth_mw, double ripple_per_nm) {
  buildup.validate();
  if (buildup.x.empty()) throw InputError("gain_trace: empty buildup trace");
  if (!(pth_mw > 0.0 && pp_mw >= 0.0)) throw DomainError("gain_trace: invalid pump or threshold power");
  Trace out;
  out.x_kind = buildup.x_kind;
  out.y_name = "gain_factor";
  out.x = buildup.x;
  out.y.resize(buildup.x.size());
  const double start = buildup.x.front();
  for (std::size_t i = 0; i < buildup.x.size(); ++i) {
    const double ratio = pp_mw * std::max(buildup.y[i], 0.0) / pth_mw;
    if (!(ratio < 1.0))
      throw DomainError("gain_trace: above threshold in scan at x = " + format_number(buildup.x[i]));
    const double phase = 2.0 * kPi * ripple_per_nm * (buildup.x[i] - start);
    out.y[i] = gain_envelope(std::sqrt(ratio)).at(phase);
  }
  out.meta = {{"pump_power_mw", format_number(pp_mw)},
              {"threshold_mw", format_number(pth_mw)},
              {"ripple_per_nm", format_number(ripple_per_nm)}};
  return out;
}

}  // namespace sqz
