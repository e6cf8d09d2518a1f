#include <catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "sqzforge/cavity.hpp"
#include "sqzforge/opo.hpp"

using namespace sqz;

namespace {

// Independent evaluation of one branch, written out from the spectrum formula.
double spectrum(double eta, double ratio, double fs, double f, bool anti) {
  const double x = std::sqrt(ratio);
  const double den = anti ? (1.0 - x) * (1.0 - x) : (1.0 + x) * (1.0 + x);
  const double v = 4.0 * eta * x / (den + (f / fs) * (f / fs));
  return anti ? 1.0 + v : 1.0 - v;
}

}  // namespace

TEST_CASE("noise power without pump is shot noise") {
  const auto n = noise_power(SqueezerParams{0.5, 10.0, 310.0, 0.0}, 5.0);
  CHECK(n.s_minus == 1.0);
  CHECK(n.s_plus == 1.0);
  CHECK(n.minus_db() == 0.0);
}

TEST_CASE("noise power at the 5 MHz operating point") {
  const auto n = noise_power(SqueezerParams::from_ratio(0.23, 0.02, 310.0), 5.0);
  CHECK(n.s_minus == Catch::Approx(spectrum(0.23, 0.02, 310.0, 5.0, false)).epsilon(1e-14));
  CHECK(n.s_plus == Catch::Approx(spectrum(0.23, 0.02, 310.0, 5.0, true)).epsilon(1e-14));
  CHECK(n.s_minus == Catch::Approx(0.900).margin(1e-3));
  CHECK(n.s_plus == Catch::Approx(1.177).margin(1e-3));
  CHECK(n.minus_db() == Catch::Approx(-0.457).margin(0.005));
  CHECK(n.plus_db() == Catch::Approx(0.706).margin(0.005));
  // measured -0.46 dB / +0.75 dB
  CHECK(std::abs(n.minus_db() - (-0.46)) <= 0.1);
  CHECK(std::abs(n.plus_db() - 0.75) <= 0.1);
}

TEST_CASE("noise power at 325 MHz") {
  const auto n = noise_power(SqueezerParams::from_ratio(0.23, 0.02, 310.0), 325.0);
  CHECK(n.minus_db() == Catch::Approx(10.0 * std::log10(spectrum(0.23, 0.02, 310.0, 325.0, false))).epsilon(1e-13));
  CHECK(n.minus_db() == Catch::Approx(-0.24).margin(0.01));
  CHECK(n.plus_db() == Catch::Approx(0.30).margin(0.01));
  CHECK(std::abs(n.minus_db() - (-0.18)) <= 0.1);
  CHECK(std::abs(n.plus_db() - 0.25) <= 0.1);
}

TEST_CASE("noise power refuses pumps at or above threshold") {
  CHECK_THROWS_AS(noise_power(SqueezerParams{0.2, 10.0, 310.0, 10.0}, 5.0), DomainError);
  CHECK_THROWS_AS(noise_power(SqueezerParams{0.2, 10.0, 310.0, 12.0}, 5.0), DomainError);
  CHECK_THROWS_AS(noise_power(SqueezerParams{1.2, 10.0, 310.0, 1.0}, 5.0), DomainError);
  CHECK_THROWS_AS(noise_power(SqueezerParams{0.2, 10.0, 0.0, 1.0}, 5.0), DomainError);
}

TEST_CASE("randomised parameters respect the noise bounds") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    const double eta = 0.01 + 0.99 * u(rng);
    const double ratio = 0.999 * u(rng);
    const double fs = 10.0 + 1000.0 * u(rng);
    const double f = 2000.0 * u(rng);
    const auto n = noise_power(SqueezerParams::from_ratio(eta, ratio, fs), f);
    INFO("eta " << eta << " ratio " << ratio << " fs " << fs << " f " << f);
    CHECK(n.s_plus >= 1.0);
    CHECK(n.s_minus <= 1.0);
    CHECK(n.s_minus > 1.0 - eta);
    CHECK(n.s_plus * n.s_minus >= 1.0 - eta);
  }
}

TEST_CASE("squeezing and anti-squeezing shrink with sideband frequency") {
  const auto p = SqueezerParams::from_ratio(0.23, 0.02, 310.0);
  double prev_m = 1.0, prev_p = 1e9;
  for (double f = 0.0; f <= 1000.0; f += 25.0) {
    const auto n = noise_power(p, f);
    const double dm = 1.0 - n.s_minus, dp = n.s_plus - 1.0;
    if (f > 0.0) {
      CHECK(dm < prev_m);
      CHECK(dp < prev_p);
    }
    prev_m = dm;
    prev_p = dp;
  }
}

TEST_CASE("parametric gain envelopes") {
  for (double th : {0.0, 0.3, 1.2, kPi}) CHECK(parametric_gain(0.0, 52.5, th) == 1.0);
  const auto g = gain_envelope(10.0, 52.5);
  const double x = std::sqrt(10.0 / 52.5);
  CHECK(x == Catch::Approx(0.4364).margin(1e-4));
  CHECK(g.g_plus == Catch::Approx(3.15).margin(0.01));
  CHECK(g.g_minus == Catch::Approx(0.484).margin(1e-3));
  CHECK(std::abs(g.g_minus - 0.5) < 0.05);
  CHECK(parametric_gain(10.0, 52.5, 0.0) == Catch::Approx(g.g_plus).epsilon(1e-15));
  CHECK(parametric_gain(10.0, 52.5, kPi / 2) == Catch::Approx(g.g_minus).epsilon(1e-12));
  for (double r : {0.01, 0.2, 0.5, 0.9}) {
    const auto e = gain_envelope(r, 1.0);
    CHECK(std::sqrt(e.g_plus * e.g_minus) == Catch::Approx(1.0 / (1.0 - r)).epsilon(1e-13));
  }
  CHECK_THROWS_AS(parametric_gain(52.5, 52.5, 0.0), DomainError);
}

TEST_CASE("threshold from gain") {
  const auto e = threshold_from_gain(3.15, 10.0, 0.5);
  CHECK(e.pth_mw == Catch::Approx(52.5).margin(0.1));
  REQUIRE(e.pth_minus_mw);
  const double xm = 1.0 / std::sqrt(0.5) - 1.0;
  CHECK(xm == Catch::Approx(0.414).margin(1e-3));
  CHECK(*e.pth_minus_mw == Catch::Approx(58.3).margin(0.1));
  CHECK(*e.spread_mw() == Catch::Approx(*e.pth_minus_mw - e.pth_mw));
  CHECK(threshold_from_gain(4.0, 7.0).pth_mw == Catch::Approx(28.0).epsilon(1e-14));
  CHECK_FALSE(threshold_from_gain(4.0, 7.0).spread_mw());
  CHECK_THROWS_AS(threshold_from_gain(1.0, 10.0), DomainError);
  CHECK_THROWS_AS(threshold_from_gain(3.0, 10.0, 1.2), DomainError);
}

TEST_CASE("threshold inversion undoes the gain model") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double pth = 1.0 + 500.0 * u(rng);
    const double pp = (0.001 + 0.99 * u(rng)) * pth;
    const auto g = gain_envelope(pp, pth);
    const auto e = threshold_from_gain(g.g_plus, pp, g.g_minus);
    CHECK(std::abs(e.pth_mw - pth) <= 1e-10 * pth);
    CHECK(std::abs(*e.pth_minus_mw - pth) <= 1e-10 * pth);
  }
}

TEST_CASE("efficiency budget") {
  EfficiencyBudget b{0.85, 0.98, 0.45, {}, 0.55};
  const double total = budget_total(b);
  CHECK(total == Catch::Approx(0.85 * 0.98 * 0.45 * 0.55).epsilon(1e-15));
  CHECK(total == Catch::Approx(0.206).margin(1e-3));
  CHECK(total >= 0.20);
  CHECK(total <= 0.24);
  CHECK(to_db(total) == Catch::Approx(-6.86).margin(0.01));
  CHECK(b.external() == Catch::Approx(0.85 * 0.98 * 0.45).epsilon(1e-15));
  CHECK(budget_total(EfficiencyBudget{1.0, 1.0, 1.0, {}, 1.0}) == 1.0);
  CHECK(budget_total(EfficiencyBudget{1.0, 0.5, 1.0, {}, 1.0}) == 0.5);

  EfficiencyBudget parts{0.85, 0.98, {}, {{"grating_in", 0.75}, {"fibre", 0.6}}, 0.55};
  CHECK(parts.optical() == Catch::Approx(0.45).epsilon(1e-15));
  parts.opt = 0.45;
  CHECK_NOTHROW(parts.validate());
  parts.opt = 0.5;
  CHECK_THROWS_AS(parts.validate(), DomainError);
  CHECK_THROWS_AS(budget_total(EfficiencyBudget{1.1, 1.0, 1.0, {}, 1.0}), DomainError);
  CHECK_THROWS_AS(budget_total(EfficiencyBudget{1.0, 1.0, 1.0, {}, 0.0}), DomainError);
}

TEST_CASE("loss propagation") {
  CHECK(propagate_loss(0.3, 1.0) == 0.3);
  CHECK(propagate_loss(0.3, 0.0) == 1.0);
  CHECK(propagate_loss(0.5, 0.5) == 0.75);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const double s = 0.01 + 5.0 * u(rng), e1 = u(rng), e2 = u(rng);
    CHECK(std::abs(propagate_loss(s, e1 * e2) - propagate_loss(propagate_loss(s, e1), e2)) <= 1e-12);
  }
  CHECK_THROWS_AS(propagate_loss(0.5, 1.5), DomainError);
}

TEST_CASE("on-chip squeezing inferred from the measurement") {
  const double s = from_db(-0.46);
  CHECK(s == Catch::Approx(0.8995).margin(1e-4));
  const double on = infer_onchip(s, 0.375);
  CHECK(on == Catch::Approx((s - 0.625) / 0.375).epsilon(1e-15));
  CHECK(on == Catch::Approx(0.732).margin(1e-3));
  CHECK(to_db(on) == Catch::Approx(-1.36).margin(0.01));
  CHECK(std::abs(to_db(on) - (-1.5)) < 0.2);
  CHECK(infer_onchip(0.8, 1.0) == 0.8);
  CHECK(infer_onchip(1.0, 0.3) == Catch::Approx(1.0).epsilon(1e-15));
  CHECK(propagate_loss(infer_onchip(0.9, 0.4), 0.4) == Catch::Approx(0.9).epsilon(1e-14));
  try {
    (void)infer_onchip(0.5, 0.375);
    FAIL("expected DomainError");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("unphysical measurement for stated efficiency") != std::string::npos);
  }
}

TEST_CASE("efficiency and pump inferred from the measured pair") {
  const auto r = infer_eta_x(from_db(-0.46), from_db(0.75), 5.0, 310.0);
  CHECK(r.eta_identifiable);
  CHECK(r.eta == Catch::Approx(0.215).margin(1e-3));
  CHECK(r.x == Catch::Approx(0.156).margin(1e-3));
  CHECK(r.eta >= 0.20);
  CHECK(r.eta <= 0.26);
  // the recovered pair reproduces the inputs
  CHECK(to_db(noise_branch(r.eta, r.x, 310.0, 5.0, -1)) == Catch::Approx(-0.46).margin(1e-12));
  CHECK(to_db(noise_branch(r.eta, r.x, 310.0, 5.0, +1)) == Catch::Approx(0.75).margin(1e-12));
}

TEST_CASE("pair inversion round trip is exact") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double eta = 0.02 + 0.98 * u(rng);
    const double x = 0.01 + 0.98 * u(rng);
    const double fs = 50.0 + 500.0 * u(rng);
    const double f = 600.0 * u(rng);
    const auto n = noise_power(SqueezerParams::from_ratio(eta, x * x, fs), f);
    const auto r = infer_eta_x(n.s_minus, n.s_plus, f, fs);
    INFO("eta " << eta << " x " << x << " fs " << fs << " f " << f);
    CHECK(std::abs(r.eta - eta) <= 1e-10);
    CHECK(std::abs(r.x - x) <= 1e-10);
  }
}

TEST_CASE("pure squeezed state gives unit efficiency") {
  // At f = 0, S+·S− = 1 exactly when η = 1.
  for (double x : {0.1, 0.4, 0.8}) {
    const auto n = noise_power(SqueezerParams::from_ratio(1.0, x * x, 310.0), 0.0);
    CHECK(n.s_plus * n.s_minus == Catch::Approx(1.0).epsilon(1e-13));
    const auto r = infer_eta_x(n.s_minus, 1.0 / n.s_minus, 0.0, 310.0);
    CHECK(r.eta == Catch::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("pair inversion edge cases") {
  const auto none = infer_eta_x(1.0, 1.0, 5.0, 310.0);
  CHECK(none.x == 0.0);
  CHECK_FALSE(none.eta_identifiable);
  CHECK_THROWS_AS(infer_eta_x(0.9, 0.95, 5.0, 310.0), DomainError);
  CHECK_THROWS_AS(infer_eta_x(1.1, 1.2, 5.0, 310.0), DomainError);
  CHECK_THROWS_AS(infer_eta_x(0.1, 5.0, 0.0, 310.0), DomainError);  // needs η > 1
}

TEST_CASE("threshold-limit projections") {
  CHECK(to_db(project_threshold_limit(0.24)) == Catch::Approx(-1.19).margin(0.02));
  CHECK(std::abs(to_db(project_threshold_limit(0.24)) - (-1.2)) < 0.02);
  CHECK(to_db(project_threshold_limit(0.55)) == Catch::Approx(-3.47).margin(0.01));
  CHECK(std::abs(to_db(project_threshold_limit(0.55)) - (-3.6)) < 0.2);
  CHECK(project_threshold_limit(1.0) == 0.0);
  // the limit of the spectrum as the pump approaches threshold
  CHECK(noise_branch(0.24, 1.0 - 1e-9, 310.0, 0.0, -1) == Catch::Approx(0.76).epsilon(1e-8));
  CHECK_THROWS_AS(project_threshold_limit(0.0), DomainError);
}

TEST_CASE("homodyne trace at shot noise has the estimator spread") {
  HomodyneSettings h;
  h.duration_s = 20.0;
  const auto tr = homodyne_trace(SqueezerParams{0.5, 1.0, 310.0, 0.0}, h);
  const double n = static_cast<double>(tr.y.size());
  const double mean = std::accumulate(tr.y.begin(), tr.y.end(), 0.0) / n;
  double var = 0.0;
  for (double y : tr.y) var += (y - mean) * (y - mean);
  const double sd = std::sqrt(var / (n - 1.0));
  const double expected = 10.0 / std::log(10.0) / std::sqrt(1e6 / 100.0);
  CHECK(std::abs(mean) < 0.01);
  CHECK(sd == Catch::Approx(expected).epsilon(0.1));
  CHECK(tr.x_kind == XKind::time_s);
  CHECK(tr.y_name == "noise_db_rel_shot");
}

TEST_CASE("homodyne trace swings between the squeezing levels") {
  const auto p = SqueezerParams::from_ratio(0.23, 0.02, 310.0);
  HomodyneSettings h;
  h.rbw_hz = 1e9;  // suppress estimator noise to read the extrema
  const auto tr = homodyne_trace(p, h);
  const auto np = noise_power(p, 5.0);
  const double lo = *std::min_element(tr.y.begin(), tr.y.end());
  const double hi = *std::max_element(tr.y.begin(), tr.y.end());
  CHECK(lo == Catch::Approx(np.minus_db()).margin(0.01));
  CHECK(hi == Catch::Approx(np.plus_db()).margin(0.01));
  // 0.5 Hz LO scan: anti-squeezing maxima every second, so four rising edges in 4 s
  int rising = 0;
  for (std::size_t i = 1; i < tr.y.size(); ++i)
    if (tr.y[i - 1] < 0.1 && tr.y[i] >= 0.1) ++rising;
  CHECK(rising == 4);
}

TEST_CASE("homodyne trace is deterministic per seed") {
  const auto p = SqueezerParams::from_ratio(0.23, 0.02, 310.0);
  HomodyneSettings h;
  h.seed = 99;
  const auto a = homodyne_trace(p, h);
  const auto b = homodyne_trace(p, h);
  CHECK(a.y == b.y);
  h.seed = 100;
  CHECK(homodyne_trace(p, h).y != a.y);
  h.vbw_hz = 2e6;
  CHECK_THROWS_AS(homodyne_trace(p, h), ConfigError);
  h.vbw_hz = 100.0;
  h.duration_s = 1.0;
  CHECK_THROWS_AS(homodyne_trace(p, h), ConfigError);
}

TEST_CASE("gain trace follows the pump buildup") {
  Trace zero;
  for (int i = 0; i < 100; ++i) {
    zero.x.push_back(775.0 + 0.01 * i);
    zero.y.push_back(0.0);
  }
  for (double g : gain_trace(zero, 10.0, 52.5, 5.0).y) CHECK(g == Catch::Approx(1.0).margin(1e-15));

  Trace flat = zero;
  for (double& y : flat.y) y = 1.0;
  const auto t = gain_trace(flat, 0.19, 1.0, 25.0);  // samples land on quarter periods
  const double hi = *std::max_element(t.y.begin(), t.y.end());
  const double lo = *std::min_element(t.y.begin(), t.y.end());
  CHECK(hi == Catch::Approx(3.15).margin(0.02));
  CHECK(lo == Catch::Approx(0.48).margin(0.01));
  CHECK_THROWS_AS(gain_trace(flat, 1.0, 1.0, 20.0), DomainError);
}

TEST_CASE("gain envelope rises monotonically along the shark-fin edge") {
  const auto c = CavityParams::from_q(775.0, 7.1e4, 0.5);
  const PhotorefractiveParams pr{17.4, 1.0, 1.0};
  const auto [lo, hi] = scan_window(c, pr, 0.1, 10.0);
  ScanSettings s;
  s.power_mw = 0.1;
  s.lo_nm = lo;
  s.hi_nm = hi;
  const auto scan = simulate_scan(c, pr, s);
  const auto& b = scan.buildup;
  const auto g = gain_trace(b, 0.3, 1.0, 50.0);
  // along the dragged edge the buildup grows toward shorter wavelength until release
  const auto peak = static_cast<std::size_t>(std::max_element(b.y.begin(), b.y.end()) - b.y.begin());
  std::size_t start = peak;
  while (start + 1 < b.y.size() && b.y[start + 1] > 0.5) ++start;
  REQUIRE(start > peak + 10);
  double prev = 0.0;
  for (std::size_t i = start; i + 1 > peak && i <= start; --i) {
    const double env = gain_envelope(std::sqrt(0.3 * b.y[i])).g_plus;
    CHECK(g.y[i] <= env * (1.0 + 1e-12));
    CHECK(env >= prev);
    prev = env;
    if (i == 0) break;
  }
}
