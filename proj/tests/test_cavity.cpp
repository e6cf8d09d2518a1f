#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "fit_checks.hpp"
#include "sqzforge/cavity.hpp"
#include "sqzforge/models.hpp"

using namespace sqz;

namespace {

// Pump resonance: loaded Q 7.1e4 at 775 nm, critically coupled.
CavityParams pump_cavity() { return CavityParams::from_q(775.0, 7.1e4, 0.5); }

ScanResult scan(const CavityParams& c, const PhotorefractiveParams& pr, double speed, double power,
                double margin_fwhm = 40.0) {
  const auto [lo, hi] = scan_window(c, pr, power, margin_fwhm);
  ScanSettings s;
  s.speed_nm_per_s = speed;
  s.power_mw = power;
  s.lo_nm = lo;
  s.hi_nm = hi;
  return simulate_scan(c, pr, s);
}

}  // namespace

TEST_CASE("lorentzian transmission: extinction, far limit and symmetry") {
  CavityParams crit{775.0, 1e9, 1e9};
  CHECK(lorentzian_transmission(0.0, crit) == 0.0);
  CHECK(lorentzian_transmission(1e15, crit) == Catch::Approx(1.0).margin(1e-10));
  CavityParams over{775.0, 1e9, 3e9};
  // direct evaluation: ((κ0 − κe)/(κ0 + κe))²
  CHECK(lorentzian_transmission(0.0, over) == Catch::Approx(0.25).epsilon(1e-15));
  for (double d : {-5e9, -1e9, 0.3e9, 2e9}) CHECK(lorentzian_transmission(d, over) == lorentzian_transmission(-d, over));
  CavityParams swapped{775.0, 3e9, 1e9};
  for (double d : {0.0, 0.7e9, 4e9}) CHECK(lorentzian_transmission(d, over) == lorentzian_transmission(d, swapped));
}

TEST_CASE("the simulator at zero drive reproduces the on-resonance transmission") {
  const CavityParams over{775.0, 1e9, 3e9};
  ScanSettings s;
  s.speed_nm_per_s = 1e-3;
  s.lo_nm = 775.0 - 5.0 * over.fwhm_nm();
  s.hi_nm = 775.0 + 5.0 * over.fwhm_nm();
  s.samples_per_fwhm = 1000;
  const auto tr = simulate_scan(over, PhotorefractiveParams{0.0, 1.0, 1.0}, s).transmission;
  const double tmin = *std::min_element(tr.y.begin(), tr.y.end());
  CHECK(tmin == Catch::Approx(0.25).epsilon(1e-5));
}

TEST_CASE("linewidth from Q") {
  const auto a = q_linewidth(1.5e5, 1550.0);
  CHECK(a.fwhm_hz == Catch::Approx(kSpeedOfLight / 1550e-9 / 1.5e5).epsilon(1e-14));
  CHECK(a.fwhm_hz == Catch::Approx(1.29e9).epsilon(3e-3));
  CHECK(a.fwhm_nm == Catch::Approx(0.01033).epsilon(1e-3));
  const auto b = q_linewidth(7.1e4, 775.0);
  CHECK(b.fwhm_hz == Catch::Approx(5.45e9).epsilon(1e-3));
  CHECK(q_linewidth(1e15, 1550.0).fwhm_nm < 1e-11);
  CHECK_THROWS_AS(q_linewidth(0.0, 1550.0), ConfigError);
  // Q round trip through the parameter set
  CHECK(CavityParams::from_q(1550.0, 1.5e5, 0.55).q_loaded() == Catch::Approx(1.5e5).epsilon(1e-12));
}

TEST_CASE("escape efficiency and coupling regime") {
  CHECK(escape_efficiency({775.0, 1e9, 1e9}) == 0.5);
  const double r = 0.55 / 0.45;  // κe/κ0 for η_esc = 0.55
  CHECK(r == Catch::Approx(1.222).epsilon(1e-3));
  CHECK(escape_efficiency({775.0, 1e9, r * 1e9}) == Catch::Approx(0.55).epsilon(1e-12));
  CHECK(escape_efficiency({775.0, 1.0, 1e15}) == Catch::Approx(1.0).margin(1e-12));
  CHECK(CavityParams{775.0, 1e9, 2e9}.regime() == Regime::over);
  CHECK(CavityParams{775.0, 2e9, 1e9}.regime() == Regime::under);
  CHECK(CavityParams{775.0, 1e9, 1.0009e9}.regime() == Regime::critical);
  CHECK(CavityParams{775.0, 1e9, 1.003e9}.regime() == Regime::over);
  CHECK_THROWS_AS(escape_efficiency({775.0, 0.0, 1e9}), ConfigError);
  CHECK(parse_regime("over") == Regime::over);
  CHECK_THROWS_AS(parse_regime("strong"), ConfigError);
}

TEST_CASE("zero drive: the scan equals the static Lorentzian at every speed") {
  const auto c = pump_cavity();
  const PhotorefractiveParams off{0.0, 1.0, 1.0};
  for (double v : {0.01, 0.5, 100.0}) {
    const auto tr = scan(c, off, v, 3.0).transmission;
    double worst = 0.0;
    for (std::size_t i = 0; i < tr.x.size(); ++i) {
      const double ref = lorentzian_transmission_nm(tr.x[i] - c.lambda0_nm, c);
      worst = std::max(worst, std::abs(tr.y[i] - ref) / std::max(ref, 1e-300));
    }
    CHECK(worst < 1e-6);
    CHECK(std::abs(asymmetry(tr)) < 0.02);
  }
}

TEST_CASE("transmission stays inside [0, 1]") {
  const auto c = CavityParams::from_q(775.0, 7.1e4, 0.7);
  for (double p : {0.3, 2.0})
    for (double v : {0.5, 50.0}) {
      const auto tr = scan(c, {17.4, 1.0, 1.0}, v, p).transmission;
      for (double y : tr.y) {
        CHECK(y >= 0.0);
        CHECK(y <= 1.0);
      }
    }
}

TEST_CASE("asymmetry grows with power at a slow scan") {
  const auto c = pump_cavity();
  const PhotorefractiveParams pr{17.4, 1.0, 1.0};
  double prev = -1.0;
  for (double p : {0.01, 0.03, 0.1, 0.3}) {
    const double a = asymmetry(scan(c, pr, 0.5, p).transmission);
    INFO("power " << p << " asymmetry " << a);
    CHECK(a > prev);
    prev = a;
  }
}

TEST_CASE("faster scans recover the Lorentzian") {
  const auto c = pump_cavity();
  const PhotorefractiveParams pr{17.4, 1.0, 1.0};
  double prev = 2.0;
  for (double v : {0.1, 1.0, 10.0, 100.0}) {
    const double a = asymmetry(scan(c, pr, v, 0.9).transmission);
    INFO("speed " << v << " asymmetry " << a);
    CHECK(a < prev);
    prev = a;
  }
  double dev_prev = 2.0;
  for (double v : {1e2, 1e3, 1e4, 1e5}) {
    const double dev = lorentzian_deviation(scan(c, pr, v, 0.9).transmission, c);
    INFO("speed " << v << " deviation " << dev);
    CHECK(dev < dev_prev);
    dev_prev = dev;
  }
  CHECK(dev_prev < 0.01);
}

TEST_CASE("dip centre moves to shorter wavelength linearly with power") {
  const auto c = pump_cavity();
  const auto reg = center_shift(c, {17.4, 1.0, 1.0}, {1.0, 2.0, 3.0, 5.0}, 0.5);
  CHECK(reg.slope_nm_per_mw < 0.0);
  CHECK(reg.r_squared > 0.99);
  for (std::size_t i = 0; i < reg.center_nm.size(); ++i) CHECK(reg.center_nm[i] < c.lambda0_nm);
}

TEST_CASE("regression helper matches a hand-computed line") {
  const auto r = regress_centers({1, 2, 3, 4}, {10, 8, 6, 4});
  CHECK(r.slope_nm_per_mw == Catch::Approx(-2.0));
  CHECK(r.intercept_nm == Catch::Approx(12.0));
  CHECK(r.r_squared == Catch::Approx(1.0));
  CHECK_THROWS_AS(regress_centers({1, 1}, {2, 3}), ConfigError);
}

TEST_CASE("beta calibration closes on re-simulation") {
  const auto c = pump_cavity();
  const std::vector<double> powers{1.0, 2.0, 3.0, 5.0};
  const double beta = calibrate_beta(c, {0.0, 1.0, 1.0}, powers, 0.5, -17.4);
  const auto reg = center_shift(c, {beta, 1.0, 1.0}, powers, 0.5);
  CHECK(reg.slope_nm_per_mw == Catch::Approx(-17.4).epsilon(0.02));
  CHECK_THROWS_AS(calibrate_beta(c, {0.0, 1.0, 1.0}, powers, 0.5, 1.0), ConfigError);
}

TEST_CASE("scan settings are validated") {
  const auto c = pump_cavity();
  ScanSettings s;
  s.lo_nm = 776.0;
  s.hi_nm = 777.0;
  CHECK_THROWS_AS(simulate_scan(c, {}, s), ConfigError);
  s.lo_nm = 700.0;
  s.hi_nm = 900.0;
  s.max_samples = 1000;
  CHECK_THROWS_AS(simulate_scan(c, {}, s), ConfigError);
  s.max_samples = 5'000'000;
  s.speed_nm_per_s = 0.0;
  CHECK_THROWS_AS(simulate_scan(c, {}, s), ConfigError);
  CHECK_THROWS_AS(simulate_scan(c, {1.0, 0.0, 1.0}, ScanSettings{}), ConfigError);
}

TEST_CASE("trace CSV round trip and schema errors") {
  const auto c = pump_cavity();
  const auto tr = scan(c, {17.4, 1.0, 1.0}, 5.0, 0.5, 5.0).transmission;
  const auto back = Trace::parse(tr.to_csv());
  CHECK(back.x_kind == XKind::wavelength_nm);
  CHECK(back.y_name == "transmission_fraction");
  CHECK(back.meta_double("scan_speed_nm_per_s") == 5.0);
  REQUIRE(back.x.size() == tr.x.size());
  for (std::size_t i = 0; i < tr.x.size(); ++i) {
    CHECK(back.x[i] == Catch::Approx(tr.x[i]).epsilon(1e-12));
    CHECK(back.y[i] == Catch::Approx(tr.y[i]).epsilon(1e-11).margin(1e-13));
  }

  try {
    (void)Trace::parse("#x_kind=wavelength_nm\nwavelength_nm,transmission_fraction\n1,0.5\n3,0.4\n2,0.3\n", "bad.csv");
    FAIL("expected InputError");
  } catch (const InputError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("bad.csv:5") != std::string::npos);
    CHECK(msg.find("monotone") != std::string::npos);
    CHECK(e.exit_code() == 2);
  }
  CHECK_THROWS_AS(Trace::parse("wavelength_nm,transmission_fraction\n1,0.5,3\n"), InputError);
  CHECK_THROWS_AS(Trace::parse("wavelength_nm,transmission_fraction\n1,abc\n"), InputError);
  CHECK_THROWS_AS(Trace::parse("wavelength_nm,a,b\n1,2,3\n"), InputError);
  CHECK_THROWS_AS(Trace::parse("#x_kind=time_s\nwavelength_nm,y\n1,2\n"), InputError);
}

TEST_CASE("lorentzian fit recovers the linewidth under 1% noise") {
  const CavityParams truth = CavityParams::from_q(1550.0, 1.5e5, 0.7);
  Trace tr;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> noise(0.0, 0.01);
  const double w = truth.fwhm_nm();
  for (int i = 0; i <= 400; ++i) {
    const double x = 1550.0 - 8.0 * w + 16.0 * w * i / 400.0;
    tr.x.push_back(x);
    tr.y.push_back(lorentzian_transmission_nm(x - 1550.0, truth) * (1.0 + noise(rng)));
  }
  const auto fit = fit_lorentzian(tr, Regime::over);
  check_descent(fit.fit);
  REQUIRE(fit.fit.converged);
  const double sig = fit.fit.error("fwhm_nm");
  CHECK(sig > 0.0);
  CHECK(std::abs(fit.fit.param("fwhm_nm") - w) < 3.0 * sig);
  const double kappa_sig = fit.cavity.fwhm_hz() * sig / fit.fit.param("fwhm_nm");
  CHECK(std::abs(fit.cavity.fwhm_hz() - truth.fwhm_hz()) < 3.0 * kappa_sig);
  CHECK(std::abs(fit.fit.param("lambda0_nm") - 1550.0) < 3.0 * fit.fit.error("lambda0_nm"));
  CHECK(fit.cavity.regime() == Regime::over);
  CHECK(fit.cavity.escape_efficiency() == Catch::Approx(0.7).margin(0.02));
  CHECK(fit.lineshape == "lorentzian");

  const auto under = fit_lorentzian(tr, Regime::under);
  CHECK(under.cavity.kappa0_hz == Catch::Approx(fit.cavity.kappae_hz));
  CHECK(under.cavity.regime() == Regime::under);
}

TEST_CASE("shark-fin fit recovers beta from a simulated scan") {
  const auto c = pump_cavity();
  const PhotorefractiveParams truth{17.4, 1.0, 1.0};
  const double power = 0.1, speed = 0.5;
  const auto tr = scan(c, truth, speed, power, 20.0).transmission;
  SharkfinSetup s;
  s.cavity = c;
  s.cavity.lambda0_nm = c.lambda0_nm + 0.3 * c.fwhm_nm();  // start off the true λ0
  s.speed_nm_per_s = speed;
  s.power_mw = power;
  const auto fit = fit_sharkfin(tr, s);
  check_descent(fit.fit);
  REQUIRE(fit.photorefractive);
  CHECK(fit.photorefractive->beta_nm_per_mw == Catch::Approx(truth.beta_nm_per_mw).epsilon(0.10));
  CHECK(fit.lineshape == "sharkfin");
}

TEST_CASE("a flat trace cannot be fitted") {
  Trace flat;
  for (int i = 0; i < 50; ++i) {
    flat.x.push_back(775.0 + 0.001 * i);
    flat.y.push_back(1.0);
  }
  CHECK_THROWS_AS(fit_lorentzian(flat, Regime::over), ConvergenceError);
  CHECK_THROWS_AS(dip_shape(flat), ConvergenceError);
}
