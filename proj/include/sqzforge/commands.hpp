#pragma once

// Command implementations behind the `sqzforge` executable. Each command reads
// its sections from the run config, lets explicit flags override them, writes
// its artifacts atomically into the output directory and returns an exit code.
// Errors propagate as sqz::Error; the caller maps them onto exit codes.

#include <cstdio>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "sqzforge/config.hpp"
#include "sqzforge/sqzforge.hpp"

namespace sqz::cli {

using Json = nlohmann::ordered_json;

struct Console {
  bool quiet = false;
  void line(const std::string& s) const {
    if (!quiet) std::cout << s << '\n';
  }
};

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

inline std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline std::string signed_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%+.*f", decimals, v);
  return buf;
}

inline Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

template <class T>
T pick(const std::optional<T>& flag, const kv::Section& s, std::string_view key, T fallback) {
  if (flag) return *flag;
  if constexpr (std::is_same_v<T, double>) return s.get_double_or(key, fallback);
  else return s.get_or(key, fallback);
}

// ---------------------------------------------------------------- modes

struct ModesArgs {
  std::optional<std::string> widths;
  std::optional<double> grid_um;
  bool no_field_maps = false;
};

inline std::string field_map_csv(const ModeSolution& m) {
  CsvWriter w({"x_um", "y_um", "ex_au", "ey_au", "ez_au", "hx_au", "hy_au", "hz_au"});
  w.meta("mode", m.label.str());
  w.meta("wavelength_um", format_number(m.wavelength_um));
  w.meta("n_eff_riu", format_number(m.n_eff));
  w.meta("te_fraction", format_number(m.te_fraction));
  w.meta("layout", "cell centres; Ez and Hz hold the quadrature (imaginary) part");
  const auto& g = m.grid;
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const auto k = g.index(i, j);
      auto c = [](double v) { return format_number(v, 6); };
      w.row({c(g.x(i + 0.5)), c(g.y(j + 0.5)), c(m.ex[k]), c(m.ey[k]), c(m.ez[k]), c(m.hx[k]), c(m.hy[k]), c(m.hz[k])});
    }
  return w.str();
}

inline int run_modes(const RunConfig& rc, const ModesArgs& args, const Console& con) {
  const auto lib = MaterialLibrary::load(rc.materials_path);
  const CrossSection cs = rc.section("geometry") ? CrossSection::from_section(*rc.section("geometry")) : CrossSection{};
  cs.validate();
  const auto& m = rc.section_or_empty("modes");
  const double ls = m.get_double_or("signal_wavelength_um", 1.55);
  const double lp = m.get_double_or("pump_wavelength_um", 0.775);
  const ModeSelector ss = parse_mode(m.get_or("signal_mode", "TE0"));
  const ModeSelector ps = parse_mode(m.get_or("pump_mode", "TM2"));
  const auto widths = parse_range(args.widths ? *args.widths : m.get_or("widths_um", "0.85:1.25:9"), "widths_um");
  SweepOptions opt;
  opt.grid_spacing_um = args.grid_um ? *args.grid_um : m.get_double_or("grid_spacing_um", opt.grid_spacing_um);
  opt.temperature_k = m.get_double_or("temperature_k", opt.temperature_k);
  opt.n_modes = static_cast<int>(m.get_double_or("n_modes", opt.n_modes));
  opt.jobs = rc.jobs;
  if (!(opt.grid_spacing_um > 0.0 && opt.grid_spacing_um <= 0.1)) throw ConfigError("grid spacing must lie in (0, 0.1] um");
  if (opt.n_modes < 1) throw ConfigError("n_modes must be at least 1");
  const bool field_maps = !args.no_field_maps && parse_bool(m, "field_maps", true);

  con.line("sweeping " + std::to_string(widths.size()) + " widths at h = " + format_number(opt.grid_spacing_um) + " um");
  const DispersionCurve sig = sweep_neff(lib, cs, widths, ls, ss, opt);

  // the pump mode is searched near the signal index: they meet at phase matching
  SweepOptions popt = opt;
  const auto [sx, sn] = sig.guided_points();
  if (sx.size() >= 2) {
    const MonotoneCubic f(sx, sn);
    popt.n_eff_guess = [f](double w) { return f(w); };
  } else if (sx.size() == 1) {
    const double n = sn.front();
    popt.n_eff_guess = [n](double) { return n; };
  }
  const DispersionCurve pump = sweep_neff(lib, cs, widths, lp, ps, popt);
  write_atomic(rc.out_dir, "neff_sweep.csv", sweep_csv({sig, pump}));

  Json pm;
  pm["signal"] = {{"mode", sig.mode}, {"wavelength_um", ls}, {"guided_points", sig.guided_count()}};
  pm["pump"] = {{"mode", pump.mode}, {"wavelength_um", lp}, {"guided_points", pump.guided_count()}};
  pm["grid_spacing_um"] = opt.grid_spacing_um;
  pm["sidewall_angle_deg"] = cs.sidewall_angle;
  pm["found"] = false;
  std::optional<double> crossing;
  std::string note;
  if (sig.guided_count() >= 2 && pump.guided_count() >= 2) {
    try {
      const auto cr = find_phasematch_width(sig, pump);
      pm["found"] = cr.found;
      pm["crossing_width_um"] = number_or_null(cr.width);
      pm["delta_n_eff_riu"] = number_or_null(cr.delta);
      pm["crossings"] = cr.crossings;
      pm["min_abs_delta_n_eff_riu"] = number_or_null(cr.min_abs_delta);
      pm["min_abs_delta_at_um"] = number_or_null(cr.min_at);
      if (cr.found) crossing = cr.width;
      else note = "no crossing inside the swept widths";
    } catch (const DomainError& e) {
      note = e.what();
    }
  } else {
    note = "fewer than two guided points per curve; crossing not searched";
  }
  if (!note.empty()) pm["note"] = note;
  Json diag = Json::array();
  for (const auto* c : {&sig, &pump})
    for (const auto& d : c->diagnostics) diag.push_back(d);
  pm["diagnostics"] = diag;

  if (field_maps) {
    CrossSection at = cs;
    at.top_width = crossing ? *crossing : widths[widths.size() / 2];
    pm["field_map_width_um"] = at.top_width;
    Json files = Json::array();
    auto te = solve_selected(lib, at, ls, ss, opt);
    SweepOptions fopt = opt;
    if (te) {
      const double n = te->n_eff;
      fopt.n_eff_guess = [n](double) { return n; };
    }
    auto tm = solve_selected(lib, at, lp, ps, te ? fopt : popt);
    for (const auto* sol : {&te, &tm}) {
      if (!*sol) continue;
      const std::string name =
          "field_" + (*sol)->label.str() + "_" + std::to_string(std::lround((*sol)->wavelength_um * 1000.0)) + "nm.csv";
      write_atomic(rc.out_dir, name, field_map_csv(**sol));
      files.push_back(name);
    }
    pm["field_maps"] = files;
  }
  write_atomic(rc.out_dir, "phasematch.json", dump(pm));
  if (crossing)
    con.line("phase matching at top width " + fixed(*crossing, 4) + " um (" + sig.mode + " / " + pump.mode + ")");
  else
    con.line("no phase-matching crossing: " + note);
  return 0;
}

// ---------------------------------------------------------------- cavity

struct CavityArgs {
  std::optional<std::string> powers;
  std::optional<std::string> speeds;
  std::optional<double> beta;
  std::optional<std::string> direction;
};

struct ResolvedPhotorefractive {
  PhotorefractiveParams pr;
  bool calibrated = false;
  double target_slope = 0.0;
  double calibration_speed = 0.0;
};

inline ResolvedPhotorefractive resolve_photorefractive(const RunConfig& rc, const CavityParams& cav,
                                                       std::optional<double> beta_flag) {
  const auto& s = rc.section_or_empty("photorefractive");
  ResolvedPhotorefractive out;
  out.pr.tau_s = s.get_double_or("tau_s", 1.0);
  out.pr.buildup_norm = s.get_double_or("buildup_norm", 1.0);
  if (beta_flag) {
    out.pr.beta_nm_per_mw = *beta_flag;
  } else if (s.has("beta_nm_per_mw")) {
    if (s.has("target_slope_nm_per_mw")) throw ConfigError("[photorefractive] give beta_nm_per_mw or target_slope_nm_per_mw, not both");
    out.pr.beta_nm_per_mw = s.get_double("beta_nm_per_mw");
  } else if (s.has("target_slope_nm_per_mw")) {
    out.calibrated = true;
    out.target_slope = s.get_double("target_slope_nm_per_mw");
    out.calibration_speed = s.get_double_or("calibration_speed_nm_per_s", 0.5);
    const auto powers = s.has("calibration_powers_mw") ? s.get_list("calibration_powers_mw") : std::vector<double>{1.0, 2.0, 3.0, 5.0};
    out.pr.validate();
    out.pr.beta_nm_per_mw = calibrate_beta(cav, out.pr, powers, out.calibration_speed, out.target_slope);
  }
  out.pr.validate();
  return out;
}

inline int run_cavity(const RunConfig& rc, const CavityArgs& args, const Console& con) {
  const CavityParams cav = cavity_from_section(rc.section("cavity"));
  const auto rp = resolve_photorefractive(rc, cav, args.beta);
  const auto& sc = rc.section_or_empty("scan");
  const auto powers = parse_range(args.powers ? *args.powers : sc.get_or("powers_mw", "1,2,3,5"), "powers_mw");
  const auto speeds = parse_range(args.speeds ? *args.speeds : sc.get_or("speeds_nm_per_s", "0.5"), "speeds_nm_per_s");
  const ScanDirection dir = parse_direction(args.direction ? *args.direction : sc.get_or("direction", "decreasing"));
  const double spf = sc.get_double_or("samples_per_fwhm", 100.0);
  const double margin = sc.get_double_or("margin_fwhm", 40.0);
  if (!(spf >= 4.0) || spf != std::floor(spf)) throw ConfigError("[scan] samples_per_fwhm must be a whole number >= 4");
  if (!(margin > 0.0)) throw ConfigError("[scan] margin_fwhm must be positive");
  for (double p : powers)
    if (!(p > 0.0)) throw ConfigError("scan powers must be positive");
  for (double v : speeds)
    if (!(v > 0.0)) throw ConfigError("scan speeds must be positive");
  const Regime hint = cav.regime();

  CsvWriter summary({"speed_nm_per_s", "power_mw", "dip_center_nm", "center_shift_nm", "dip_fwhm_nm", "dip_depth_fraction",
                     "asymmetry_ratio", "lorentzian_deviation_fraction", "fit_lambda0_nm", "fit_fwhm_nm", "lineshape"});
  summary.meta("lambda0_nm", format_number(cav.lambda0_nm));
  summary.meta("beta_nm_per_mw", format_number(rp.pr.beta_nm_per_mw));
  summary.meta("tau_s", format_number(rp.pr.tau_s));
  Json regressions = Json::array();
  const double pmax = *std::max_element(powers.begin(), powers.end());
  for (double v : speeds) {
    const auto [lo, hi] = scan_window(cav, rp.pr, pmax, margin);
    std::vector<double> centers;
    for (double p : powers) {
      ScanSettings s;
      s.speed_nm_per_s = v;
      s.power_mw = p;
      s.lo_nm = lo;
      s.hi_nm = hi;
      s.direction = dir;
      s.samples_per_fwhm = static_cast<int>(spf);
      const auto res = simulate_scan(cav, rp.pr, s);
      const auto& tr = res.transmission;
      const DipShape shape = dip_shape(tr);
      centers.push_back(shape.center);
      double fl0 = std::nan(""), ffw = std::nan("");
      try {
        const auto f = fit_lorentzian(tr, hint);
        fl0 = f.fit.params[0];
        ffw = f.fit.params[1];
      } catch (const ConvergenceError&) {
      }
      const std::string name = "scan_v" + format_number(v) + "nmps_p" + format_number(p) + "mW.csv";
      write_atomic(rc.out_dir, name, tr.to_csv());
      summary.row({cell(v), cell(p), cell(shape.center), cell(shape.center - cav.lambda0_nm), cell(shape.fwhm()),
                   cell(1.0 - *std::min_element(tr.y.begin(), tr.y.end())), cell(shape.asymmetry()),
                   cell(lorentzian_deviation(tr, cav)), cell(fl0), cell(ffw), detail::lineshape_label(shape)});
      con.line("v = " + format_number(v) + " nm/s, P = " + format_number(p) + " mW: centre " + fixed(shape.center, 4) +
               " nm, asymmetry " + fixed(shape.asymmetry(), 4) + " (" + detail::lineshape_label(shape) + ")");
    }
    if (powers.size() >= 2) {
      const auto reg = regress_centers(powers, centers);
      regressions.push_back({{"speed_nm_per_s", v},
                             {"slope_nm_per_mw", reg.slope_nm_per_mw},
                             {"intercept_nm", reg.intercept_nm},
                             {"r_squared", reg.r_squared}});
      con.line("v = " + format_number(v) + " nm/s: centre slope " + fixed(reg.slope_nm_per_mw, 3) + " nm/mW, R^2 " +
               fixed(reg.r_squared, 5));
    }
  }
  write_atomic(rc.out_dir, "scan_summary.csv", summary.str());
  Json j;
  j["cavity"] = {{"lambda0_nm", cav.lambda0_nm},     {"kappa0_hz", cav.kappa0_hz},
                 {"kappae_hz", cav.kappae_hz},       {"q_loaded", cav.q_loaded()},
                 {"fwhm_nm", cav.fwhm_nm()},         {"escape_efficiency", cav.escape_efficiency()},
                 {"regime", to_string(cav.regime())}};
  j["photorefractive"] = {{"beta_nm_per_mw", rp.pr.beta_nm_per_mw},
                          {"tau_s", rp.pr.tau_s},
                          {"buildup_norm", rp.pr.buildup_norm},
                          {"calibrated", rp.calibrated}};
  if (rp.calibrated) {
    j["photorefractive"]["target_slope_nm_per_mw"] = rp.target_slope;
    j["photorefractive"]["calibration_speed_nm_per_s"] = rp.calibration_speed;
  }
  j["direction"] = dir == ScanDirection::decreasing ? "decreasing" : "increasing";
  j["regressions"] = regressions;
  write_atomic(rc.out_dir, "cavity.json", dump(j));
  return 0;
}

// ---------------------------------------------------------------- opo

struct SqueezerArgs {
  std::optional<double> eta, ratio, pth, pp, fs, f;
};

/// Squeezer from [squeezer] and flags. The pump is either `ratio` (Pp/Pth) or
/// the pair (pth_mw, pp_mw).
inline SqueezerParams resolve_squeezer(const RunConfig& rc, const SqueezerArgs& a, bool need_pth = false) {
  const auto& s = rc.section_or_empty("squeezer");
  SqueezerParams p;
  p.eta = pick(a.eta, s, "eta", 0.23);
  p.fs_mhz = pick(a.fs, s, "fs_mhz", 310.0);
  const bool have_ratio = a.ratio || (s.has("ratio") && !a.pth && !a.pp);
  if (have_ratio && !need_pth) {
    p = SqueezerParams::from_ratio(p.eta, pick(a.ratio, s, "ratio", 0.02), p.fs_mhz);
  } else if (a.pth || s.has("pth_mw")) {
    p.pth_mw = pick(a.pth, s, "pth_mw", 0.0);
    p.pp_mw = pick(a.pp, s, "pp_mw", 0.0);
  } else if (need_pth) {
    throw ConfigError("a pump-power axis needs the threshold: give --pth or [squeezer] pth_mw");
  } else {
    p = SqueezerParams::from_ratio(p.eta, 0.02, p.fs_mhz);
  }
  p.validate();
  return p;
}

struct SqueezeArgs {
  SqueezerArgs sq;
  std::optional<std::string> f_range;
  std::optional<std::string> pp_range;
  double noise = 0.0;
};

inline Json squeezer_json(const SqueezerParams& p) {
  return {{"eta", p.eta}, {"pump_ratio", p.ratio()}, {"pth_mw", p.pth_mw}, {"pp_mw", p.pp_mw}, {"fs_mhz", p.fs_mhz}};
}

inline int run_opo_squeeze(const RunConfig& rc, const SqueezeArgs& a, const Console& con) {
  const bool vs_power = a.pp_range.has_value();
  const SqueezerParams p = resolve_squeezer(rc, a.sq, vs_power);
  const double f = pick(a.sq.f, rc.section_or_empty("squeezer"), "f_mhz", 5.0);
  if (!(a.noise >= 0.0)) throw ConfigError("--noise must be non-negative");
  if (a.f_range && vs_power) throw ConfigError("give either --f-range or --pp-range, not both");
  std::mt19937_64 rng(rc.seed);
  std::normal_distribution<double> g(0.0, 1.0);
  auto noisy = [&](double s) {
    if (a.noise == 0.0) return s;
    const double v = s + a.noise * g(rng);
    if (!(v > 0.0)) throw DomainError("--noise drove a noise power non-positive; lower it");
    return v;
  };

  Json j;
  j["params"] = squeezer_json(p);
  const auto np = noise_power(p, f);
  j["f_mhz"] = f;
  j["s_minus"] = np.s_minus;
  j["s_plus"] = np.s_plus;
  j["s_minus_db"] = np.minus_db();
  j["s_plus_db"] = np.plus_db();
  con.line("f = " + format_number(f) + " MHz: S- = " + signed_fixed(np.minus_db(), 3) + " dB, S+ = " +
           signed_fixed(np.plus_db(), 3) + " dB");

  if (a.f_range || vs_power) {
    const auto xs = parse_range(vs_power ? *a.pp_range : *a.f_range, vs_power ? "--pp-range" : "--f-range");
    SqueezeData d;
    for (double x : xs) {
      SqueezerParams q = p;
      double fx = f;
      if (vs_power) q.pp_mw = x;
      else fx = x;
      const auto n = noise_power(q, fx);
      d.x.push_back(x);
      d.s_minus.push_back(noisy(n.s_minus));
      d.s_plus.push_back(noisy(n.s_plus));
    }
    Meta meta = {{"synthetic", a.noise > 0.0 ? "true" : "model"},
                 {"eta", format_number(p.eta)},
                 {"fs_mhz", format_number(p.fs_mhz)}};
    if (vs_power) {
      meta.emplace_back("pth_mw", format_number(p.pth_mw));
      meta.emplace_back("f_mhz", format_number(f));
    } else {
      meta.emplace_back("pump_ratio", format_number(p.ratio()));
    }
    if (a.noise > 0.0) {
      meta.emplace_back("noise_sigma_linear", format_number(a.noise));
      meta.emplace_back("seed", std::to_string(rc.seed));
    }
    const std::string name = vs_power ? "squeeze_vs_power.csv" : "squeeze_vs_frequency.csv";
    write_atomic(rc.out_dir, name, d.to_table(vs_power ? "pump_power_mw" : "frequency_mhz", meta).to_csv());
    j["table"] = name;
    con.line("wrote " + name + " (" + std::to_string(xs.size()) + " points)");
  }
  write_atomic(rc.out_dir, "squeeze.json", dump(j));
  return 0;
}

struct GainArgs {
  std::optional<double> pp, pth;
  std::optional<double> points;
  bool along_scan = false;
};

inline int run_opo_gain(const RunConfig& rc, const GainArgs& a, const Console& con) {
  const auto& s = rc.section_or_empty("gain");
  const double pp = pick(a.pp, s, "pp_mw", 10.0);
  const double pth = pick(a.pth, s, "pth_mw", 52.5);
  const double pts = pick(a.points, s, "points", 181.0);
  if (!(pts >= 2.0) || pts != std::floor(pts) || pts > 1e6) throw ConfigError("gain points must be a whole number >= 2");
  const auto n = static_cast<std::size_t>(pts);
  const auto env = gain_envelope(pp, pth);
  const double x = std::sqrt(pp / pth);

  CsvWriter phase({"phase_rad", "gain_factor"});
  for (std::size_t i = 0; i < n; ++i) {
    const double th = kPi * static_cast<double>(i) / static_cast<double>(n - 1);
    phase.row({cell(th), cell(env.at(th))});
  }
  write_atomic(rc.out_dir, "gain_vs_phase.csv", phase.str());
  CsvWriter power({"pump_power_mw", "g_plus_factor", "g_minus_factor"});
  for (std::size_t i = 0; i < n; ++i) {
    const double p = 0.95 * pth * static_cast<double>(i) / static_cast<double>(n - 1);
    const auto e = gain_envelope(p, pth);
    power.row({cell(p), cell(e.g_plus), cell(e.g_minus)});
  }
  write_atomic(rc.out_dir, "gain_vs_power.csv", power.str());

  Json j = {{"pp_mw", pp},
            {"pth_mw", pth},
            {"x", x},
            {"g_plus", env.g_plus},
            {"g_minus", env.g_minus},
            {"g_plus_db", to_db(env.g_plus)},
            {"g_minus_db", to_db(env.g_minus)}};
  if (a.along_scan) {
    const CavityParams cav = cavity_from_section(rc.section("cavity"));
    const auto rp = resolve_photorefractive(rc, cav, std::nullopt);
    const auto& sc = rc.section_or_empty("scan");
    const auto powers = parse_range(sc.get_or("powers_mw", "1"), "powers_mw");
    const auto speeds = parse_range(sc.get_or("speeds_nm_per_s", "0.5"), "speeds_nm_per_s");
    ScanSettings ss;
    ss.power_mw = powers.front();
    ss.speed_nm_per_s = speeds.front();
    std::tie(ss.lo_nm, ss.hi_nm) = scan_window(cav, rp.pr, ss.power_mw, sc.get_double_or("margin_fwhm", 40.0));
    ss.direction = parse_direction(sc.get_or("direction", "decreasing"));
    const auto res = simulate_scan(cav, rp.pr, ss);
    const double ripple = s.get_double_or("ripple_per_nm", 25.0);
    const Trace gt = gain_trace(res.buildup, pp, pth, ripple);
    write_atomic(rc.out_dir, "gain_scan.csv", gt.to_csv());
    j["scan"] = {{"power_mw", ss.power_mw}, {"speed_nm_per_s", ss.speed_nm_per_s}, {"ripple_per_nm", ripple},
                 {"max_gain", *std::max_element(gt.y.begin(), gt.y.end())}};
  }
  write_atomic(rc.out_dir, "gain.json", dump(j));
  con.line("Pp = " + format_number(pp) + " mW, P_th = " + format_number(pth) + " mW: G+ = " + fixed(env.g_plus, 3) +
           ", G- = " + fixed(env.g_minus, 3));
  return 0;
}

struct ThresholdArgs {
  std::optional<double> gplus, gminus, pp;
};

inline int run_opo_threshold(const RunConfig& rc, const ThresholdArgs& a, const Console& con) {
  const auto& s = rc.section_or_empty("threshold");
  if (!a.gplus && !s.has("g_plus")) throw ConfigError("threshold needs --gplus (or [threshold] g_plus)");
  const double gp = pick(a.gplus, s, "g_plus", 0.0);
  const double pp = pick(a.pp, s, "pp_mw", 10.0);
  std::optional<double> gm = a.gminus;
  if (!gm && s.has("g_minus")) gm = s.get_double("g_minus");
  const auto est = threshold_from_gain(gp, pp, gm);
  const double g_minus_pred = gain_envelope(pp, est.pth_mw).g_minus;
  Json j = {{"g_plus", gp}, {"pp_mw", pp}, {"pth_mw", est.pth_mw}, {"predicted_g_minus", g_minus_pred}};
  con.line("P_th = " + fixed(est.pth_mw, 1) + " mW (from G+ = " + format_number(gp) + " at Pp = " + format_number(pp) +
           " mW); predicted G- = " + fixed(g_minus_pred, 3));
  if (gm) {
    j["g_minus"] = *gm;
    j["pth_from_g_minus_mw"] = *est.pth_minus_mw;
    j["spread_mw"] = *est.spread_mw();
    j["relative_spread"] = *est.spread_mw() / est.pth_mw;
    con.line("both-branch consistency: P_th from G- = " + format_number(*gm) + " is " + fixed(*est.pth_minus_mw, 1) +
             " mW, spread " + fixed(*est.spread_mw(), 1) + " mW (" + fixed(100.0 * *est.spread_mw() / est.pth_mw, 1) +
             " %); measured vs predicted G-: " + fixed(*gm, 3) + " vs " + fixed(g_minus_pred, 3));
  }
  write_atomic(rc.out_dir, "threshold.json", dump(j));
  return 0;
}

struct BudgetArgs {
  std::optional<double> qe, vis2, opt, esc;
};

inline int run_opo_budget(const RunConfig& rc, const BudgetArgs& a, const Console& con) {
  EfficiencyBudget b = rc.section("budget") ? budget_from_section(*rc.section("budget")) : EfficiencyBudget{};
  if (a.qe) b.qe = *a.qe;
  if (a.vis2) b.vis2 = *a.vis2;
  if (a.esc) b.esc = *a.esc;
  if (a.opt) {
    b.opt = *a.opt;
    b.opt_factors.clear();
  }
  const double total = budget_total(b);
  Json factors = Json::array();
  for (const auto& f : b.opt_factors) factors.push_back({{"name", f.name}, {"value", f.value}});
  Json j = {{"qe", b.qe},
            {"vis2", b.vis2},
            {"opt", b.optical()},
            {"opt_factors", factors},
            {"esc", b.esc},
            {"external", b.external()},
            {"total", total},
            {"total_db", to_db(total)}};
  write_atomic(rc.out_dir, "budget.json", dump(j));
  con.line("total efficiency " + fixed(total, 3) + " (" + fixed(to_db(total), 2) + " dB); outside the chip " +
           fixed(b.external(), 3));
  return 0;
}

struct ProjectArgs {
  std::optional<double> eta, measured_db, external;
};

inline int run_opo_project(const RunConfig& rc, const ProjectArgs& a, const Console& con) {
  const auto& s = rc.section_or_empty("project");
  Json j;
  const bool want_limit = a.eta || s.has("eta");
  const bool want_onchip = a.measured_db || s.has("measured_db");
  if (!want_limit && !want_onchip) throw ConfigError("project needs --eta and/or --measured-db with --external");
  if (want_limit) {
    const double eta = pick(a.eta, s, "eta", 0.0);
    const double lim = project_threshold_limit(eta);
    const double db = lim > 0.0 ? to_db(lim) : -std::numeric_limits<double>::infinity();
    j["threshold_limit"] = {{"eta", eta}, {"s_minus", lim}, {"s_minus_db", number_or_null(db)}};
    con.line("threshold limit at eta = " + format_number(eta) + ": " + (lim > 0.0 ? signed_fixed(db, 2) : "-inf") + " dB");
  }
  if (want_onchip) {
    if (!a.external && !s.has("external_efficiency")) throw ConfigError("--measured-db needs --external");
    const double mdb = pick(a.measured_db, s, "measured_db", 0.0);
    const double ext = pick(a.external, s, "external_efficiency", 0.0);
    const double on = infer_onchip(from_db(mdb), ext);
    j["onchip"] = {{"measured_db", mdb}, {"external_efficiency", ext}, {"s_onchip", on}, {"s_onchip_db", to_db(on)}};
    con.line("on-chip squeezing for " + format_number(mdb) + " dB measured at external efficiency " + format_number(ext) +
             ": " + signed_fixed(to_db(on), 2) + " dB");
  }
  write_atomic(rc.out_dir, "project.json", dump(j));
  return 0;
}

struct HomodyneArgs {
  SqueezerArgs sq;
  std::optional<double> lo_scan, duration, rbw, vbw, sample_rate;
};

inline int run_opo_homodyne(const RunConfig& rc, const HomodyneArgs& a, const Console& con) {
  const SqueezerParams p = resolve_squeezer(rc, a.sq);
  const auto& s = rc.section_or_empty("homodyne");
  HomodyneSettings h;
  h.f_mhz = a.sq.f ? *a.sq.f : s.get_double_or("f_mhz", rc.section_or_empty("squeezer").get_double_or("f_mhz", h.f_mhz));
  h.lo_scan_hz = pick(a.lo_scan, s, "lo_scan_hz", h.lo_scan_hz);
  h.duration_s = pick(a.duration, s, "duration_s", h.duration_s);
  h.rbw_hz = pick(a.rbw, s, "rbw_hz", h.rbw_hz);
  h.vbw_hz = pick(a.vbw, s, "vbw_hz", h.vbw_hz);
  h.sample_rate_hz = pick(a.sample_rate, s, "sample_rate_hz", h.sample_rate_hz);
  h.seed = rc.seed;
  const Trace tr = homodyne_trace(p, h);
  write_atomic(rc.out_dir, "homodyne_trace.csv", tr.to_csv());
  const auto np = noise_power(p, h.f_mhz);
  const auto [mn, mx] = std::minmax_element(tr.y.begin(), tr.y.end());
  Json j = {{"params", squeezer_json(p)},
            {"f_mhz", h.f_mhz},
            {"seed", rc.seed},
            {"samples", tr.x.size()},
            {"s_minus_db", np.minus_db()},
            {"s_plus_db", np.plus_db()},
            {"trace_min_db", *mn},
            {"trace_max_db", *mx}};
  write_atomic(rc.out_dir, "homodyne.json", dump(j));
  con.line("homodyne trace: " + std::to_string(tr.x.size()) + " samples, ideal floors " + signed_fixed(np.minus_db(), 3) +
           " / " + signed_fixed(np.plus_db(), 3) + " dB");
  return 0;
}

// ---------------------------------------------------------------- fit

struct FitArgs {
  std::optional<std::string> data;
  std::optional<double> f, fs, sigma;
  std::vector<std::string> fix;
  bool db = false;
  bool free_fs = false;
  std::optional<std::string> model, regime;
  std::optional<double> power, speed;
};

inline std::string canonical_param(const std::string& k) {
  if (k == "fs") return "fs_mhz";
  if (k == "pth") return "pth_mw";
  return k;
}

inline std::map<std::string, double> parse_fixes(const std::vector<std::string>& items) {
  std::map<std::string, double> out;
  for (const auto& raw : items) {
    std::string_view rest = raw;
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const auto item = kv::detail::trim(rest.substr(0, comma));
      rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
      if (item.empty()) continue;
      const auto eq = item.find('=');
      if (eq == std::string_view::npos) throw ConfigError("fix '" + std::string(item) + "' must look like name=value");
      const auto v = kv::detail::parse_double(item.substr(eq + 1));
      if (!v) throw ConfigError("fix '" + std::string(item) + "': value is not a number");
      out[canonical_param(std::string(kv::detail::trim(item.substr(0, eq))))] = *v;
    }
  }
  return out;
}

inline Json fit_json(const FitResult& r, const std::string& model, const std::string& data) {
  Json j = to_json(r);
  Json out;
  out["model"] = model;
  out["data"] = data;
  for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = it.value();
  return out;
}

inline int run_fit_squeeze(const RunConfig& rc, const FitArgs& a, bool vs_power, const Console& con) {
  const char* sub = vs_power ? "power" : "frequency";
  const auto& s = rc.section_or_empty("fit", sub);
  std::string data;
  if (a.data) data = *a.data;
  else if (s.has("data")) data = rc.resolve(s.get("data"));
  else throw ConfigError(std::string("fit ") + sub + " needs --data (or [fit " + sub + "] data)");
  const std::string xcol = vs_power ? "pump_power_mw" : "frequency_mhz";
  const SqueezeData d = SqueezeData::from_table(Table::load(data), xcol, data);

  SqueezeFitOptions opt;
  opt.db_domain = a.db || parse_bool(s, "db_domain", false);
  if (a.sigma) opt.sigma = *a.sigma;
  else if (s.has("sigma")) opt.sigma = s.get_double("sigma");
  std::vector<std::string> fixes;
  if (s.has("fix")) fixes.push_back(s.get("fix"));
  fixes.insert(fixes.end(), a.fix.begin(), a.fix.end());
  opt.fixed = parse_fixes(fixes);

  FitResult r;
  double f_mhz = 0.0;
  if (vs_power) {
    f_mhz = pick(a.f, s, "f_mhz", 5.0);
    opt.free_fs = a.free_fs || parse_bool(s, "free_fs", false);
    if (opt.free_fs && opt.fixed.count("fs_mhz")) throw ConfigError("fs cannot be both freed and fixed");
    const double fs = opt.fixed.count("fs_mhz") ? opt.fixed.at("fs_mhz") : pick(a.fs, s, "fs_mhz", 310.0);
    r = fit_squeezing_vs_power(d, f_mhz, fs, opt);
  } else {
    if (a.fs || s.has("fs_mhz")) throw ConfigError("fit frequency fits fs; hold it with --fix fs=<MHz>");
    r = fit_squeezing_vs_frequency(d, opt);
  }

  // overlay: data and model on the data axis
  CsvWriter ov({xcol, "s_minus_db", "s_plus_db", "fit_s_minus_db", "fit_s_plus_db"});
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    NoisePower np;
    if (vs_power) np = noise_power({r.param("eta"), r.param("pth_mw"), r.param("fs_mhz"), d.x[i]}, f_mhz);
    else np = noise_power(SqueezerParams::from_ratio(r.param("eta"), r.param("ratio"), r.param("fs_mhz")), d.x[i]);
    ov.row({cell(d.x[i]), cell(to_db(d.s_minus[i])), cell(to_db(d.s_plus[i])), cell(np.minus_db()), cell(np.plus_db())});
  }
  Json j = fit_json(r, vs_power ? "squeezing_vs_power" : "squeezing_vs_frequency", data);
  if (vs_power) j["f_mhz"] = f_mhz;
  j["domain"] = opt.db_domain ? "db" : "linear";
  const std::string stem = std::string("fit_") + sub;
  write_atomic(rc.out_dir, stem + ".json", dump(j));
  write_atomic(rc.out_dir, stem + "_overlay.csv", ov.str());
  std::ostringstream msg;
  for (std::size_t k = 0; k < r.names.size(); ++k)
    msg << (k ? ", " : "") << r.names[k] << " = " << format_number(r.params[static_cast<Eigen::Index>(k)], 6) << " +- "
        << format_number(r.std_errors[static_cast<Eigen::Index>(k)], 3);
  con.line(msg.str());
  for (const auto& fl : r.flags) con.line("flag: " + fl);
  if (!r.converged) {
    std::cerr << "sqzforge: fit did not converge: " << r.reason << " (residual " << format_number(r.residual_norm) << ")\n";
    return 1;
  }
  return 0;
}

inline int run_fit_lineshape(const RunConfig& rc, const FitArgs& a, const Console& con) {
  const auto& s = rc.section_or_empty("fit", "lineshape");
  std::string data;
  if (a.data) data = *a.data;
  else if (s.has("data")) data = rc.resolve(s.get("data"));
  else throw ConfigError("fit lineshape needs --data (or [fit lineshape] data)");
  const Trace tr = Trace::load(data);
  tr.validate();
  if (tr.x_kind != XKind::wavelength_nm) throw InputError(data + ": a lineshape trace needs a wavelength_nm axis");
  const std::string model = pick(a.model, s, "model", std::string("auto"));
  if (model != "auto" && model != "lorentzian" && model != "sharkfin")
    throw ConfigError("lineshape model must be auto, lorentzian or sharkfin");
  const auto* cav_sec = rc.section("cavity");
  auto has_meta = [&](std::string_view key) { return !tr.meta_or(key, "").empty(); };
  // [cavity] wins over the parameters recorded in the trace header
  auto cavity = [&] {
    if (cav_sec || !has_meta("kappa0_hz")) return cavity_from_section(cav_sec);
    CavityParams c;
    c.lambda0_nm = tr.meta_double("lambda0_nm");
    c.kappa0_hz = tr.meta_double("kappa0_hz");
    c.kappae_hz = tr.meta_double("kappae_hz");
    c.validate();
    return c;
  };
  const std::string regime_s = a.regime ? *a.regime : s.get_or("regime", "");
  const Regime hint = !regime_s.empty()                        ? parse_regime(regime_s)
                      : (cav_sec || has_meta("kappa0_hz")) ? cavity().regime()
                                                           : Regime::over;
  auto need = [&](const std::optional<double>& flag, std::string_view key, std::string_view meta_key) {
    if (flag) return *flag;
    if (s.has(key)) return s.get_double(key);
    if (!has_meta(meta_key))
      throw ConfigError("shark-fin fit needs " + std::string(key) + ": give a flag, [fit lineshape] " + std::string(key) +
                        " or #" + std::string(meta_key) + " in the trace");
    return tr.meta_double(meta_key);
  };
  const auto& prs = rc.section_or_empty("photorefractive");
  const std::string direction = tr.meta_or("scan_direction", "decreasing");

  const DipShape shape = dip_shape(tr);
  const bool use_fin = model == "sharkfin" || (model == "auto" && detail::lineshape_label(shape) == "sharkfin");
  ResonanceFit rf;
  double su_power = 0.0, su_speed = 0.0;
  if (use_fin) {
    SharkfinSetup su;
    su.cavity = cavity();
    su.tau_s = prs.get_double_or("tau_s", has_meta("tau_s") ? tr.meta_double("tau_s") : 1.0);
    su.buildup_norm = prs.get_double_or("buildup_norm", has_meta("buildup_norm") ? tr.meta_double("buildup_norm") : 1.0);
    su.power_mw = need(a.power, "power_mw", "input_power_mw");
    su.speed_nm_per_s = need(a.speed, "speed_nm_per_s", "scan_speed_nm_per_s");
    su.direction = parse_direction(direction);
    su_power = su.power_mw;
    su_speed = su.speed_nm_per_s;
    rf = fit_sharkfin(tr, su);
  } else {
    rf = fit_lorentzian(tr, hint);
  }
  Json j = fit_json(rf.fit, use_fin ? "sharkfin" : "lorentzian", data);
  j["lineshape"] = rf.lineshape;
  j["asymmetry"] = rf.shape.asymmetry();
  j["cavity"] = {{"lambda0_nm", rf.cavity.lambda0_nm},
                 {"kappa0_hz", rf.cavity.kappa0_hz},
                 {"kappae_hz", rf.cavity.kappae_hz},
                 {"q_loaded", rf.cavity.q_loaded()},
                 {"regime", to_string(rf.cavity.regime())}};
  if (rf.photorefractive) j["photorefractive"] = {{"beta_nm_per_mw", rf.photorefractive->beta_nm_per_mw}, {"tau_s", rf.photorefractive->tau_s}};

  // overlay on the data samples
  CsvWriter ov({"wavelength_nm", "transmission_fraction", "fit_transmission_fraction"});
  std::vector<double> model_y(tr.x.size());
  if (use_fin) {
    ScanSettings sc;
    sc.speed_nm_per_s = su_speed;
    sc.power_mw = su_power;
    sc.lo_nm = std::min(tr.x.front(), tr.x.back());
    sc.hi_nm = std::max(tr.x.front(), tr.x.back());
    sc.direction = parse_direction(direction);
    const Trace sim = simulate_scan(rf.cavity, *rf.photorefractive, sc).transmission;
    for (std::size_t i = 0; i < tr.x.size(); ++i) {
      const auto it = std::lower_bound(sim.x.begin(), sim.x.end(), tr.x[i]);
      const auto k = std::min<std::size_t>(static_cast<std::size_t>(it - sim.x.begin()), sim.x.size() - 1);
      model_y[i] = sim.y[k];
    }
  } else {
    const LorentzianModel lm;
    for (std::size_t i = 0; i < tr.x.size(); ++i) model_y[i] = lm(rf.fit.params, tr.x[i], 0);
  }
  for (std::size_t i = 0; i < tr.x.size(); ++i) ov.row({cell(tr.x[i]), cell(tr.y[i]), cell(model_y[i])});
  write_atomic(rc.out_dir, "fit_lineshape.json", dump(j));
  write_atomic(rc.out_dir, "fit_lineshape_overlay.csv", ov.str());
  con.line(std::string(use_fin ? "sharkfin" : "lorentzian") + " fit: lambda0 = " + fixed(rf.cavity.lambda0_nm, 5) +
           " nm, Q = " + format_number(rf.cavity.q_loaded(), 4) + (rf.photorefractive ? ", beta = " + format_number(rf.photorefractive->beta_nm_per_mw, 5) + " nm/mW" : std::string()) +
           " (" + rf.lineshape + ")");
  return 0;
}

}  // namespace sqz::cli
