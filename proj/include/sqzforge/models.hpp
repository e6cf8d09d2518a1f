#pragma once

// Fit models: squeezing spectra against pump power or sideband frequency, and
// single-resonance lineshapes (static Lorentzian, photorefractive shark fin).

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sqzforge/cavity.hpp"
#include "sqzforge/errors.hpp"
#include "sqzforge/fit.hpp"
#include "sqzforge/opo.hpp"
#include "sqzforge/trace.hpp"

namespace sqz {

inline constexpr int kSqueezeTag = -1;
inline constexpr int kAntiSqueezeTag = +1;

/// Squeezing measurements sharing one sweep axis. Missing branch values are NaN.
struct SqueezeData {
  std::vector<double> x;  // pump power (mW) or sideband frequency (MHz)
  std::vector<double> s_minus;  // linear, shot noise = 1
  std::vector<double> s_plus;

  void validate() const {
    if (x.empty()) throw InputError("squeeze data: no points");
    if (s_minus.size() != x.size() || s_plus.size() != x.size()) throw InputError("squeeze data: column lengths differ");
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!std::isfinite(x[i])) throw InputError("squeeze data: non-finite x");
      for (double s : {s_minus[i], s_plus[i]})
        if (!std::isnan(s) && !(s > 0.0 && std::isfinite(s))) throw InputError("squeeze data: noise power must be positive");
    }
  }

  [[nodiscard]] bool has_minus() const {
    return std::any_of(s_minus.begin(), s_minus.end(), [](double v) { return !std::isnan(v); });
  }
  [[nodiscard]] bool has_plus() const {
    return std::any_of(s_plus.begin(), s_plus.end(), [](double v) { return !std::isnan(v); });
  }

  /// Reads `<x column>,s_minus_db,s_plus_db`; empty branch columns may be
  /// omitted. The x column must be named `x_column`.
  [[nodiscard]] static SqueezeData from_table(const Table& t, std::string_view x_column, const std::string& source) {
    if (t.columns.front() != x_column)
      throw InputError(source + ": first column must be '" + std::string(x_column) + "', found '" + t.columns.front() + "'");
    const int cm = t.column("s_minus_db");
    const int cp = t.column("s_plus_db");
    if (cm < 0 && cp < 0) throw InputError(source + ": need an s_minus_db and/or s_plus_db column");
    for (const auto& c : t.columns)
      if (c != x_column && c != "s_minus_db" && c != "s_plus_db")
        throw InputError(source + ": unknown column '" + c + "'");
    SqueezeData d;
    d.x = t.values.front();
    const auto n = d.x.size();
    d.s_minus.assign(n, std::nan(""));
    d.s_plus.assign(n, std::nan(""));
    for (std::size_t i = 0; i < n; ++i) {
      if (cm >= 0) d.s_minus[i] = from_db(t.values[static_cast<std::size_t>(cm)][i]);
      if (cp >= 0) d.s_plus[i] = from_db(t.values[static_cast<std::size_t>(cp)][i]);
    }
    d.validate();
    return d;
  }

  [[nodiscard]] Table to_table(std::string_view x_column, Meta meta = {}) const {
    Table t;
    t.meta = std::move(meta);
    t.columns = {std::string(x_column), "s_minus_db", "s_plus_db"};
    t.values.assign(3, {});
    for (std::size_t i = 0; i < x.size(); ++i) {
      t.values[0].push_back(x[i]);
      t.values[1].push_back(to_db(s_minus[i]));
      t.values[2].push_back(to_db(s_plus[i]));
    }
    return t;
  }
};

struct SqueezeFitOptions {
  bool db_domain = false;
  std::map<std::string, double> fixed;  // parameter name → held value
  std::optional<double> sigma;          // per-point σ in the fitting domain
  bool free_fs = false;                 // power fit: let fs float from the given start
};

namespace detail {

/// Branch value and its derivatives with respect to (η, x, fs).
struct BranchEval {
  double s;
  double ds_deta;
  double ds_dx;
  double ds_dfs;
};

inline BranchEval branch_eval(double eta, double x, double fs, double f, int sign) {
  const double phi = (f / fs) * (f / fs);
  const double a = 1.0 - sign * x;
  const double d = a * a + phi;
  const double dd_dx = -2.0 * sign * a;
  const double dd_dfs = -2.0 * phi / fs;
  const double num = sign * 4.0 * eta * x;
  return {1.0 + num / d, sign * 4.0 * x / d, sign * 4.0 * eta * (d - x * dd_dx) / (d * d), -num * dd_dfs / (d * d)};
}

inline std::vector<FitPoint> squeeze_points(const SqueezeData& d, bool db, double sigma) {
  std::vector<FitPoint> pts;
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    if (!std::isnan(d.s_minus[i])) pts.push_back({d.x[i], db ? to_db(d.s_minus[i]) : d.s_minus[i], sigma, kSqueezeTag});
    if (!std::isnan(d.s_plus[i])) pts.push_back({d.x[i], db ? to_db(d.s_plus[i]) : d.s_plus[i], sigma, kAntiSqueezeTag});
  }
  return pts;
}

inline std::vector<bool> fixed_mask(const std::vector<std::string>& names, const std::map<std::string, double>& fixed,
                                    Eigen::VectorXd& init) {
  std::vector<bool> mask(names.size(), false);
  for (const auto& [k, v] : fixed) {
    const auto it = std::find(names.begin(), names.end(), k);
    if (it == names.end()) throw ConfigError("cannot fix unknown parameter '" + k + "'");
    const auto i = static_cast<std::size_t>(it - names.begin());
    mask[i] = true;
    init[static_cast<Eigen::Index>(i)] = v;
  }
  return mask;
}

inline void flag_squeeze_common(FitResult& r, const SqueezeData& d) {
  if (!(d.has_minus() && d.has_plus())) r.flags.emplace_back("single_branch");
  bool flat = true;
  for (std::size_t i = 0; i < d.x.size(); ++i)
    for (double s : {d.s_minus[i], d.s_plus[i]})
      if (!std::isnan(s) && std::abs(s - 1.0) > 1e-9) flat = false;
  if (flat) r.flags.emplace_back("eta_unidentifiable");
}

}  // namespace detail

/// Parameters (eta, pth_mw, fs_mhz); x axis = on-chip pump power (mW) at a
/// fixed sideband frequency. fs is held at `fs_mhz` unless the options free it
/// by leaving it out of `fixed` (it is fixed by default).
struct PowerModel {
  double f_mhz = 5.0;
  bool db = false;

  static std::vector<std::string> names() { return {"eta", "pth_mw", "fs_mhz"}; }

  [[nodiscard]] double operator()(const Eigen::VectorXd& p, double pp, int tag) const {
    const double x = std::sqrt(std::max(pp, 0.0) / p[1]);
    const double s = noise_branch(p[0], x, p[2], f_mhz, tag);
    return db ? to_db(s) : s;
  }

  void jacobian(const Eigen::VectorXd& p, double pp, int tag, Eigen::Ref<Eigen::RowVectorXd> row) const {
    const double x = std::sqrt(std::max(pp, 0.0) / p[1]);
    const auto b = detail::branch_eval(p[0], x, p[2], f_mhz, tag);
    const double scale = db ? 10.0 / (std::log(10.0) * b.s) : 1.0;
    row[0] = scale * b.ds_deta;
    row[1] = scale * b.ds_dx * (-0.5 * x / p[1]);
    row[2] = scale * b.ds_dfs;
  }
};

/// Parameters (eta, ratio, fs_mhz); x axis = sideband frequency (MHz).
struct FrequencyModel {
  bool db = false;

  static std::vector<std::string> names() { return {"eta", "ratio", "fs_mhz"}; }

  [[nodiscard]] double operator()(const Eigen::VectorXd& p, double f, int tag) const {
    const double s = noise_branch(p[0], std::sqrt(std::max(p[1], 0.0)), p[2], f, tag);
    return db ? to_db(s) : s;
  }

  void jacobian(const Eigen::VectorXd& p, double f, int tag, Eigen::Ref<Eigen::RowVectorXd> row) const {
    const double x = std::sqrt(std::max(p[1], 0.0));
    const auto b = detail::branch_eval(p[0], x, p[2], f, tag);
    const double scale = db ? 10.0 / (std::log(10.0) * b.s) : 1.0;
    row[0] = scale * b.ds_deta;
    row[1] = x > 0.0 ? scale * b.ds_dx * 0.5 / x : 0.0;
    row[2] = scale * b.ds_dfs;
  }
};

template <class M>
FitProblem make_problem(const M& m) {
  FitProblem prob;
  prob.names = M::names();
  prob.model = [m](const Eigen::VectorXd& p, double x, int tag) { return m(p, x, tag); };
  prob.jacobian = [m](const Eigen::VectorXd& p, double x, int tag, Eigen::Ref<Eigen::RowVectorXd> row) {
    m.jacobian(p, x, tag, row);
  };
  return prob;
}

/// Joint fit of both branches against pump power at sideband `f_mhz`.
inline FitResult fit_squeezing_vs_power(const SqueezeData& d, double f_mhz, double fs_mhz,
                                        SqueezeFitOptions opt = {}) {
  d.validate();
  if (!(fs_mhz > 0.0)) throw ConfigError("fit: fs must be positive");
  for (double p : d.x)
    if (!(p > 0.0)) throw InputError("fit: pump powers must be positive");
  if (!opt.fixed.count("fs_mhz") && !opt.free_fs) opt.fixed["fs_mhz"] = fs_mhz;
  const double fs_start = opt.fixed.count("fs_mhz") ? opt.fixed.at("fs_mhz") : fs_mhz;

  auto prob = make_problem(PowerModel{f_mhz, opt.db_domain});
  prob.data = detail::squeeze_points(d, opt.db_domain, opt.sigma.value_or(1.0));
  prob.sigma_given = opt.sigma.has_value();
  const double pmax = *std::max_element(d.x.begin(), d.x.end());

  // warm start: closed-form inversion on the strongest point with both branches
  double eta0 = 0.2, pth0 = 20.0 * pmax;
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < d.x.size(); ++i)
    if (!std::isnan(d.s_minus[i]) && !std::isnan(d.s_plus[i]) && (!best || d.x[i] > d.x[*best])) best = i;
  if (best) {
    try {
      const auto ex = infer_eta_x(d.s_minus[*best], d.s_plus[*best], f_mhz, fs_start);
      if (ex.eta_identifiable && ex.x > 0.0) {
        eta0 = std::clamp(ex.eta, 1e-4, 1.0);
        pth0 = d.x[*best] / (ex.x * ex.x);
      }
    } catch (const DomainError&) {
    }
  }
  prob.initial = Eigen::Vector3d(eta0, std::clamp(pth0, 1.0001 * pmax, 1e9), fs_start);
  prob.lower = Eigen::Vector3d(1e-6, 1.0001 * pmax, 1e-3);
  prob.upper = Eigen::Vector3d(1.0, 1e9, 1e7);
  prob.fixed = detail::fixed_mask(prob.names, opt.fixed, prob.initial);
  prob.initial = prob.initial.cwiseMax(prob.lower).cwiseMin(prob.upper);
  auto r = least_squares(prob);
  detail::flag_squeeze_common(r, d);
  return r;
}

/// Joint fit of both branches against sideband frequency at a fixed pump.
inline FitResult fit_squeezing_vs_frequency(const SqueezeData& d, SqueezeFitOptions opt = {}) {
  d.validate();
  for (double f : d.x)
    if (!(f >= 0.0)) throw InputError("fit: sideband frequencies must be non-negative");

  auto prob = make_problem(FrequencyModel{opt.db_domain});
  prob.data = detail::squeeze_points(d, opt.db_domain, opt.sigma.value_or(1.0));
  prob.sigma_given = opt.sigma.has_value();
  std::size_t lo = 0, hi = 0;
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    if (d.x[i] < d.x[lo]) lo = i;
    if (d.x[i] > d.x[hi]) hi = i;
  }
  const double fmax = d.x[hi];
  double fs0 = opt.fixed.count("fs_mhz") ? opt.fixed.at("fs_mhz") : std::max(fmax, 1.0);
  double eta0 = 0.2, ratio0 = 0.01;
  if (!std::isnan(d.s_minus[lo]) && !std::isnan(d.s_plus[lo])) {
    try {
      const auto ex = infer_eta_x(d.s_minus[lo], d.s_plus[lo], d.x[lo], fs0);
      if (ex.eta_identifiable && ex.x > 0.0) {
        eta0 = std::clamp(ex.eta, 1e-4, 1.0);
        ratio0 = ex.x * ex.x;
        // fs from the squeezing branch at the highest frequency
        if (!opt.fixed.count("fs_mhz") && hi != lo && !std::isnan(d.s_minus[hi]) && d.s_minus[hi] < 1.0) {
          const double phi = 4.0 * eta0 * ex.x / (1.0 - d.s_minus[hi]) - (1.0 + ex.x) * (1.0 + ex.x);
          if (phi > 0.0) fs0 = fmax / std::sqrt(phi);
        }
      }
    } catch (const DomainError&) {
    }
  }
  prob.initial = Eigen::Vector3d(eta0, std::min(ratio0, 0.99), fs0);
  prob.lower = Eigen::Vector3d(1e-6, 0.0, 1e-3);
  prob.upper = Eigen::Vector3d(1.0, 0.999, 1e7);
  prob.fixed = detail::fixed_mask(prob.names, opt.fixed, prob.initial);
  prob.initial = prob.initial.cwiseMax(prob.lower).cwiseMin(prob.upper);
  auto r = least_squares(prob);
  detail::flag_squeeze_common(r, d);
  if (r.param("ratio") < 1e-12 && !r.has_flag("eta_unidentifiable")) r.flags.emplace_back("eta_unidentifiable");
  if (fmax < 0.3 * r.param("fs_mhz")) r.flags.emplace_back("fs_lower_bound_only");
  return r;
}

/// Static dip in wavelength: parameters (lambda0_nm, fwhm_nm, u) with
/// u = |κ0 − κe|/(κ0 + κe), so the on-resonance transmission is u².
struct LorentzianModel {
  static std::vector<std::string> names() { return {"lambda0_nm", "fwhm_nm", "u"}; }

  [[nodiscard]] double operator()(const Eigen::VectorXd& p, double x, int) const {
    const double d = x - p[0];
    const double hw = 0.5 * p[1];
    const double uh = p[2] * hw;
    return (d * d + uh * uh) / (d * d + hw * hw);
  }

  void jacobian(const Eigen::VectorXd& p, double x, int, Eigen::Ref<Eigen::RowVectorXd> row) const {
    const double d = x - p[0];
    const double hw = 0.5 * p[1];
    const double u = p[2];
    const double num = d * d + u * u * hw * hw;
    const double den = d * d + hw * hw;
    const double den2 = den * den;
    row[0] = (-2.0 * d * den + 2.0 * d * num) / den2;
    row[1] = 0.5 * (2.0 * u * u * hw * den - 2.0 * hw * num) / den2;
    row[2] = 2.0 * u * hw * hw / den;
  }
};

struct ResonanceFit {
  CavityParams cavity;
  std::optional<PhotorefractiveParams> photorefractive;
  FitResult fit;
  DipShape shape;
  std::string lineshape;  // "lorentzian" when |asymmetry| < 0.02, else "sharkfin"
};

namespace detail {

inline std::vector<FitPoint> trace_points(const Trace& tr) {
  std::vector<FitPoint> pts;
  pts.reserve(tr.x.size());
  for (std::size_t i = 0; i < tr.x.size(); ++i) pts.push_back({tr.x[i], tr.y[i], 1.0, 0});
  return pts;
}

inline CavityParams cavity_from_lorentzian(double lambda0_nm, double fwhm_nm, double u, Regime hint) {
  CavityParams c;
  c.lambda0_nm = lambda0_nm;
  const double kappa = kSpeedOfLight * fwhm_nm * 1e-9 / (lambda0_nm * 1e-9 * lambda0_nm * 1e-9);
  const double big = 0.5 * (1.0 + u) * kappa, small = 0.5 * (1.0 - u) * kappa;
  switch (hint) {
    case Regime::over: c.kappae_hz = big; c.kappa0_hz = small; break;
    case Regime::under: c.kappae_hz = small; c.kappa0_hz = big; break;
    case Regime::critical: c.kappae_hz = c.kappa0_hz = 0.5 * kappa; break;
  }
  return c;
}

inline std::string lineshape_label(const DipShape& s) { return std::abs(s.asymmetry()) < 0.02 ? "lorentzian" : "sharkfin"; }

}  // namespace detail

/// Lorentzian fit of a single dip; the coupling regime cannot be read from the
/// lineshape (κ0 ↔ κe symmetry) and comes from `hint`.
inline ResonanceFit fit_lorentzian(const Trace& tr, Regime hint) {
  tr.validate();
  const DipShape shape = dip_shape(tr);  // throws on a flat trace
  auto prob = make_problem(LorentzianModel{});
  prob.data = detail::trace_points(tr);
  const double ymin = *std::min_element(tr.y.begin(), tr.y.end());
  const double span = std::abs(tr.x.back() - tr.x.front());
  prob.initial = Eigen::Vector3d(shape.center, shape.fwhm(), std::sqrt(std::clamp(ymin, 0.0, 1.0)));
  prob.lower = Eigen::Vector3d(std::min(tr.x.front(), tr.x.back()), 1e-9 * span, 0.0);
  prob.upper = Eigen::Vector3d(std::max(tr.x.front(), tr.x.back()), span, 1.0);
  ResonanceFit out;
  out.fit = least_squares(prob);
  if (!out.fit.converged)
    throw ConvergenceError("lorentzian fit did not converge: " + out.fit.reason, out.fit.residual_norm);
  const auto& p = out.fit.params;
  out.cavity = detail::cavity_from_lorentzian(p[0], p[1], hint == Regime::critical ? 0.0 : p[2], hint);
  out.shape = shape;
  out.lineshape = detail::lineshape_label(shape);
  return out;
}

struct SharkfinSetup {
  CavityParams cavity;  // linewidth and coupling are held; λ0 is a starting value
  double buildup_norm = 1.0;
  double tau_s = 1.0;
  double speed_nm_per_s = 0.5;
  double power_mw = 1.0;
  ScanDirection direction = ScanDirection::decreasing;
};

/// Fits β and the cold resonance λ0 of a photorefractive scan by re-simulating
/// it over the trace's window.
inline ResonanceFit fit_sharkfin(const Trace& tr, const SharkfinSetup& s) {
  tr.validate();
  const DipShape shape = dip_shape(tr);
  if (!(s.power_mw > 0.0)) throw ConfigError("sharkfin fit: input power must be positive");
  const double lo = std::min(tr.x.front(), tr.x.back());
  const double hi = std::max(tr.x.front(), tr.x.back());

  struct Cache {
    Eigen::VectorXd key;
    Trace sim;
  };
  auto cache = std::make_shared<Cache>();
  auto simulate = [s, lo, hi, cache](const Eigen::VectorXd& p) -> const Trace& {
    if (cache->key.size() == p.size() && cache->key == p) return cache->sim;
    CavityParams c = s.cavity;
    c.lambda0_nm = p[1];
    PhotorefractiveParams pr{p[0], s.tau_s, s.buildup_norm};
    ScanSettings sc;
    sc.speed_nm_per_s = s.speed_nm_per_s;
    sc.power_mw = s.power_mw;
    sc.lo_nm = lo;
    sc.hi_nm = hi;
    sc.direction = s.direction;
    cache->sim = simulate_scan(c, pr, sc).transmission;
    cache->key = p;
    return cache->sim;
  };
  FitProblem prob;
  prob.names = {"beta_nm_per_mw", "lambda0_nm"};
  prob.model = [simulate](const Eigen::VectorXd& p, double x, int) {
    const Trace& t = simulate(p);
    const auto it = std::lower_bound(t.x.begin(), t.x.end(), x);
    if (it == t.x.begin()) return t.y.front();
    if (it == t.x.end()) return t.y.back();
    const auto j = static_cast<std::size_t>(it - t.x.begin());
    const double f = (x - t.x[j - 1]) / (t.x[j] - t.x[j - 1]);
    return t.y[j - 1] + f * (t.y[j] - t.y[j - 1]);
  };
  prob.data = detail::trace_points(tr);
  const double fwhm = s.cavity.fwhm_nm();
  // dragged dips end near λ0 − β·P·bn; the minimum sits just before release
  const double lambda_lo = std::max(lo, s.cavity.lambda0_nm - 50.0 * fwhm);
  const double lambda_hi = std::min(hi, s.cavity.lambda0_nm + 50.0 * fwhm);
  const double beta0 = std::max((s.cavity.lambda0_nm - shape.center) / (s.power_mw * s.buildup_norm), 0.0);
  prob.initial = Eigen::Vector2d(beta0, std::clamp(s.cavity.lambda0_nm, lambda_lo, lambda_hi));
  prob.lower = Eigen::Vector2d(0.0, lambda_lo);
  prob.upper = Eigen::Vector2d(std::max(10.0 * beta0, (hi - lo) / (s.power_mw * s.buildup_norm)), lambda_hi);
  ResonanceFit out;
  out.fit = least_squares(prob);
  if (!out.fit.converged)
    throw ConvergenceError("sharkfin fit did not converge: " + out.fit.reason, out.fit.residual_norm);
  out.cavity = s.cavity;
  out.cavity.lambda0_nm = out.fit.params[1];
  out.photorefractive = PhotorefractiveParams{out.fit.params[0], s.tau_s, s.buildup_norm};
  out.shape = shape;
  out.lineshape = detail::lineshape_label(shape);
  return out;
}

}  // namespace sqz
