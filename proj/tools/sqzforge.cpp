#include <exception>
#include <iostream>

#include "CLI11.hpp"

#include "sqzforge/commands.hpp"

namespace {

template <class T>
void opt(CLI::App* app, const std::string& name, std::optional<T>& into, const std::string& help) {
  app->add_option_function<T>(name, [&into](const T& v) { into = v; }, help);
}

}  // namespace

int main(int argc, char** argv) {
  using namespace sqz::cli;
  CLI::App app{"sqzforge: thin-film lithium niobate squeezer design and analysis"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "sqzforge 0.1.0");

  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  bool quiet = false;
  app.add_option("--config", config_path, "Run config (key = value sections)")->check(CLI::ExistingFile);
  opt(&app, "--out", out_dir, "Output directory (default: out)");
  opt(&app, "--seed", seed, "Seed for synthetic noise");
  opt(&app, "--jobs", jobs, "Worker threads for width sweeps");
  app.add_flag("--quiet,-q", quiet, "Suppress console summaries");
  for (auto* o : app.get_options()) o->configurable(false);
  app.fallthrough();

  // modes
  ModesArgs modes;
  auto* c_modes = app.add_subcommand("modes", "Effective-index sweeps, phase-matching width and field maps");
  auto* c_modes_sweep = c_modes->add_subcommand("sweep", "Sweep the signal and pump modes over top width");
  c_modes->require_subcommand(1);
  opt(c_modes_sweep, "--widths", modes.widths, "Top widths in um: a:b:n or a,b,c");
  opt(c_modes_sweep, "--grid", modes.grid_um, "Grid spacing in um");
  c_modes_sweep->add_flag("--no-field-maps", modes.no_field_maps, "Skip field-map export");

  // cavity
  CavityArgs cav;
  auto* c_cav = app.add_subcommand("cavity", "Thermo-optic and photorefractive resonance scans");
  auto* c_cav_scan = c_cav->add_subcommand("scan", "Simulate transmission scans over power and speed");
  c_cav->require_subcommand(1);
  opt(c_cav_scan, "--powers", cav.powers, "On-chip powers in mW");
  opt(c_cav_scan, "--speeds", cav.speeds, "Scan speeds in nm/s");
  opt(c_cav_scan, "--beta", cav.beta, "Photorefractive shift coefficient in nm/mW");
  opt(c_cav_scan, "--direction", cav.direction, "increasing or decreasing");

  // opo
  auto* c_opo = app.add_subcommand("opo", "Degenerate OPO squeezing, gain and budgets");
  c_opo->require_subcommand(1);
  auto squeezer_flags = [](CLI::App* a, SqueezerArgs& s) {
    opt(a, "--eta", s.eta, "Total detection efficiency");
    opt(a, "--ratio", s.ratio, "Pump ratio Pp/Pth");
    opt(a, "--pth", s.pth, "Threshold power in mW");
    opt(a, "--pp", s.pp, "Pump power in mW");
    opt(a, "--fs", s.fs, "Squeezing bandwidth (HWHM) in MHz");
    opt(a, "--f", s.f, "Sideband frequency in MHz");
  };
  SqueezeArgs sq;
  auto* c_sq = c_opo->add_subcommand("squeeze", "Quadrature noise powers and model tables");
  squeezer_flags(c_sq, sq.sq);
  opt(c_sq, "--f-range", sq.f_range, "Frequency axis in MHz for a table");
  opt(c_sq, "--pp-range", sq.pp_range, "Pump-power axis in mW for a table");
  c_sq->add_option("--noise", sq.noise, "Gaussian noise sigma (linear units) added to tables");

  GainArgs gain;
  auto* c_gain = c_opo->add_subcommand("gain", "Phase-sensitive gain envelope");
  opt(c_gain, "--pp", gain.pp, "Pump power in mW");
  opt(c_gain, "--pth", gain.pth, "Threshold power in mW");
  opt(c_gain, "--points", gain.points, "Samples per curve");
  c_gain->add_flag("--along-scan", gain.along_scan, "Also sample the gain along a cavity scan");

  ThresholdArgs thr;
  auto* c_thr = c_opo->add_subcommand("threshold", "Threshold from measured amplification");
  opt(c_thr, "--gplus", thr.gplus, "Measured amplification factor");
  opt(c_thr, "--gminus", thr.gminus, "Measured deamplification factor");
  opt(c_thr, "--pp", thr.pp, "Pump power in mW");

  BudgetArgs bud;
  auto* c_bud = c_opo->add_subcommand("budget", "Detection efficiency budget");
  opt(c_bud, "--qe", bud.qe, "Detector quantum efficiency");
  opt(c_bud, "--vis2", bud.vis2, "Squared homodyne visibility");
  opt(c_bud, "--opt", bud.opt, "Optical transmission");
  opt(c_bud, "--esc", bud.esc, "Escape efficiency");

  ProjectArgs proj;
  auto* c_proj = c_opo->add_subcommand("project", "Threshold-limit projection and on-chip inference");
  opt(c_proj, "--eta", proj.eta, "Total efficiency for the threshold limit");
  opt(c_proj, "--measured-db", proj.measured_db, "Measured squeezing in dB");
  opt(c_proj, "--external", proj.external, "Efficiency outside the chip");

  HomodyneArgs hom;
  auto* c_hom = c_opo->add_subcommand("homodyne", "Zero-span homodyne trace under a scanned LO phase");
  squeezer_flags(c_hom, hom.sq);
  opt(c_hom, "--lo-scan", hom.lo_scan, "LO phase scan rate in Hz");
  opt(c_hom, "--duration", hom.duration, "Trace duration in s");
  opt(c_hom, "--rbw", hom.rbw, "Resolution bandwidth in Hz");
  opt(c_hom, "--vbw", hom.vbw, "Video bandwidth in Hz");
  opt(c_hom, "--sample-rate", hom.sample_rate, "Trace sample rate in Hz");

  // fit
  auto* c_fit = app.add_subcommand("fit", "Model fits to measured or synthetic data");
  c_fit->require_subcommand(1);
  FitArgs fp, ff, fl;
  auto fit_common = [](CLI::App* a, FitArgs& f) {
    opt(a, "--data", f.data, "Input CSV");
    opt(a, "--sigma", f.sigma, "Per-point uncertainty (enables absolute covariance)");
  };
  auto* c_fp = c_fit->add_subcommand("power", "Squeezing and antisqueezing versus pump power");
  fit_common(c_fp, fp);
  opt(c_fp, "--f", fp.f, "Sideband frequency in MHz");
  opt(c_fp, "--fs", fp.fs, "Squeezing bandwidth in MHz (held unless --free-fs)");
  c_fp->add_flag("--free-fs", fp.free_fs, "Fit the bandwidth as well");
  c_fp->add_option("--fix", fp.fix, "Hold a parameter: name=value (repeatable)");
  c_fp->add_flag("--db", fp.db, "Fit in the dB domain");
  auto* c_ff = c_fit->add_subcommand("frequency", "Squeezing and antisqueezing versus sideband frequency");
  fit_common(c_ff, ff);
  c_ff->add_option("--fix", ff.fix, "Hold a parameter: name=value (repeatable)");
  c_ff->add_flag("--db", ff.db, "Fit in the dB domain");
  auto* c_fl = c_fit->add_subcommand("lineshape", "Resonance lineshape fit");
  opt(c_fl, "--data", fl.data, "Transmission trace CSV");
  opt(c_fl, "--model", fl.model, "auto, lorentzian or sharkfin");
  opt(c_fl, "--regime", fl.regime, "Coupling regime hint: over or under");
  opt(c_fl, "--power", fl.power, "On-chip power in mW (sharkfin)");
  opt(c_fl, "--speed", fl.speed, "Scan speed in nm/s (sharkfin)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    sqz::RunConfig rc = sqz::load_run_config(config_path);
    if (out_dir) rc.out_dir = *out_dir;
    if (seed) rc.seed = *seed;
    if (jobs) {
      if (*jobs < 0) throw sqz::ConfigError("--jobs must be non-negative");
      rc.jobs = static_cast<unsigned>(*jobs);
    }
    rc.quiet = rc.quiet || quiet;
    const Console con{rc.quiet};

    if (c_modes_sweep->parsed()) return run_modes(rc, modes, con);
    if (c_cav_scan->parsed()) return run_cavity(rc, cav, con);
    if (c_sq->parsed()) return run_opo_squeeze(rc, sq, con);
    if (c_gain->parsed()) return run_opo_gain(rc, gain, con);
    if (c_thr->parsed()) return run_opo_threshold(rc, thr, con);
    if (c_bud->parsed()) return run_opo_budget(rc, bud, con);
    if (c_proj->parsed()) return run_opo_project(rc, proj, con);
    if (c_hom->parsed()) return run_opo_homodyne(rc, hom, con);
    if (c_fp->parsed()) return run_fit_squeeze(rc, fp, true, con);
    if (c_ff->parsed()) return run_fit_squeeze(rc, ff, false, con);
    if (c_fl->parsed()) return run_fit_lineshape(rc, fl, con);
    std::cerr << "sqzforge: no command given\n";
    return 2;
  } catch (const sqz::Error& e) {
    std::cerr << "sqzforge: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "sqzforge: " << e.what() << '\n';
    return 1;
  }
}
