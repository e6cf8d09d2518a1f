#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "fit_checks.hpp"
#include "sqzforge/models.hpp"

using namespace sqz;

namespace {

SqueezeData power_set(double eta, double pth, double noise, unsigned seed, int n = 21) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, noise);
  SqueezeData d;
  for (int i = 0; i < n; ++i) {
    const double pp = 10.0 + 7.0 * i;
    const auto np = noise_power({eta, pth, 310.0, pp}, 5.0);
    d.x.push_back(pp);
    d.s_minus.push_back(np.s_minus + (noise > 0.0 ? g(rng) : 0.0));
    d.s_plus.push_back(np.s_plus + (noise > 0.0 ? g(rng) : 0.0));
  }
  return d;
}

SqueezeData frequency_set(double eta, double ratio, double fs, double noise, unsigned seed, double fmax = 605.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, noise);
  SqueezeData d;
  for (int i = 0; i < 25; ++i) {
    const double f = 5.0 + (fmax - 5.0) * i / 24.0;
    const auto np = noise_power(SqueezerParams::from_ratio(eta, ratio, fs), f);
    d.x.push_back(f);
    d.s_minus.push_back(np.s_minus + (noise > 0.0 ? g(rng) : 0.0));
    d.s_plus.push_back(np.s_plus + (noise > 0.0 ? g(rng) : 0.0));
  }
  return d;
}

FitProblem linear_problem(const std::vector<double>& xs, double a, double b) {
  FitProblem p;
  p.names = {"a", "b"};
  p.model = [](const Eigen::VectorXd& q, double x, int) { return q[0] * x + q[1]; };
  for (double x : xs) p.data.push_back({x, a * x + b});
  p.initial = Eigen::Vector2d(0.0, 0.0);
  return p;
}

// Largest column-relative difference between analytic and central-difference jacobians.
template <class M>
double jacobian_mismatch(const M& m, const Eigen::VectorXd& p, const std::vector<FitPoint>& pts) {
  auto prob = make_problem(m);
  const Eigen::MatrixXd num = numeric_jacobian(prob.model, p, pts);
  Eigen::MatrixXd ana(num.rows(), num.cols());
  Eigen::RowVectorXd row(p.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    m.jacobian(p, pts[i].x, pts[i].tag, row);
    ana.row(static_cast<Eigen::Index>(i)) = row;
  }
  double worst = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k)
    worst = std::max(worst, (ana.col(k) - num.col(k)).cwiseAbs().maxCoeff() / ana.col(k).cwiseAbs().maxCoeff());
  return worst;
}

}  // namespace

TEST_CASE("linear model is recovered exactly in a few iterations") {
  const auto prob = linear_problem({0, 1, 2, 3, 4, 5}, 2.5, -1.25);
  const auto r = least_squares(prob);
  check_descent(r);
  CHECK(r.converged);
  CHECK(r.iterations <= 3);
  CHECK(std::abs(r.param("a") - 2.5) < 1e-12);
  CHECK(std::abs(r.param("b") + 1.25) < 1e-12);
}

TEST_CASE("bent-valley least squares reaches (1, 1)") {
  FitProblem p;
  p.names = {"x", "y"};
  // residuals 10(y − x²) and 1 − x
  p.model = [](const Eigen::VectorXd& q, double, int tag) { return tag == 0 ? 10.0 * (q[0] * q[0] - q[1]) : q[0]; };
  p.data = {{0.0, 0.0, 1.0, 0}, {0.0, 1.0, 1.0, 1}};
  p.initial = Eigen::Vector2d(-1.2, 1.0);
  const auto r = least_squares(p);
  check_descent(r);
  CHECK(r.converged);
  CHECK(r.param("x") == Catch::Approx(1.0).margin(1e-8));
  CHECK(r.param("y") == Catch::Approx(1.0).margin(1e-8));
}

TEST_CASE("bounds are respected and active bounds do not block convergence") {
  auto prob = linear_problem({0, 1, 2, 3}, 2.0, 1.0);
  prob.lower = Eigen::Vector2d(-10.0, -10.0);
  prob.upper = Eigen::Vector2d(1.5, 10.0);
  const auto r = least_squares(prob);
  check_descent(r);
  CHECK(r.converged);
  CHECK(r.param("a") == 1.5);
  // best b with a pinned at 1.5: mean(y − 1.5x)
  CHECK(r.param("b") == Catch::Approx(1.0 + 0.5 * 1.5).epsilon(1e-9));
  prob.initial = Eigen::Vector2d(2.0, 0.0);
  CHECK_THROWS_AS(least_squares(prob), ConfigError);
}

TEST_CASE("fixed parameters stay put") {
  auto prob = linear_problem({0, 1, 2, 3}, 2.0, 1.0);
  prob.initial = Eigen::Vector2d(0.0, 3.0);
  prob.fixed = {false, true};
  const auto r = least_squares(prob);
  CHECK(r.param("b") == 3.0);
  CHECK(r.error("b") == 0.0);
  CHECK(r.covariance(1, 1) == 0.0);
}

TEST_CASE("input errors") {
  auto prob = linear_problem({1.0}, 1.0, 1.0);
  CHECK_THROWS_AS(least_squares(prob), ConfigError);  // fewer points than parameters
  auto nan = linear_problem({0, 1, 2}, 1.0, 0.0);
  nan.model = [](const Eigen::VectorXd& q, double x, int) { return q[0] > 0.5 ? std::nan("") : q[0] * x + q[1]; };
  try {
    (void)least_squares(nan);
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("parameters [") != std::string::npos);
  }
  auto bad_sigma = linear_problem({0, 1, 2}, 1.0, 0.0);
  bad_sigma.data[1].sigma = 0.0;
  CHECK_THROWS_AS(least_squares(bad_sigma), ConfigError);
}

TEST_CASE("a parameter the model ignores is flagged, not a crash") {
  FitProblem p;
  p.names = {"a", "unused"};
  p.model = [](const Eigen::VectorXd& q, double x, int) { return q[0] * x; };
  for (double x : {1.0, 2.0, 3.0}) p.data.push_back({x, 2.0 * x + 0.1});
  p.initial = Eigen::Vector2d(0.0, 0.0);
  FitResult r;
  REQUIRE_NOTHROW(r = least_squares(p));
  check_descent(r);
  CHECK(r.has_flag("singular_covariance"));
  CHECK(std::isinf(r.error("unused")));
  CHECK(std::isfinite(r.residual_norm));
}

TEST_CASE("numeric jacobian basics") {
  const ModelFn lin = [](const Eigen::VectorXd& q, double x, int) { return q[0] * x; };
  std::vector<FitPoint> pts;
  for (double x : {-1.0, -0.3, 0.45, 0.8, 0.97}) pts.push_back({x, 0.0});
  const auto j = numeric_jacobian(lin, Eigen::VectorXd::Constant(1, 0.7), pts);
  for (std::size_t i = 0; i < pts.size(); ++i) CHECK(std::abs(j(static_cast<Eigen::Index>(i), 0) - pts[i].x) < 1e-10);
  const ModelFn flat = [](const Eigen::VectorXd&, double, int) { return 4.0; };
  CHECK(numeric_jacobian(flat, Eigen::Vector2d(1.0, 2.0), pts).cwiseAbs().maxCoeff() == 0.0);
  const ModelFn blowup = [](const Eigen::VectorXd& q, double, int) { return q[1] > 2.0 ? INFINITY : 1.0; };
  try {
    (void)numeric_jacobian(blowup, Eigen::Vector2d(1.0, 2.0), pts);
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("parameter 1") != std::string::npos);
  }
}

TEST_CASE("analytic jacobians agree with central differences") {
  std::mt19937_64 rng(2718);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const double eta = 0.05 + 0.9 * u(rng), fs = 100.0 + 500.0 * u(rng);
    std::vector<FitPoint> pts;
    for (double x : {1.0, 20.0, 80.0, 150.0})
      for (int tag : {kSqueezeTag, kAntiSqueezeTag}) pts.push_back({x, 0.0, 1.0, tag});
    for (bool db : {false, true}) {
      const double pth = 200.0 + 800.0 * u(rng);
      worst = std::max(worst, jacobian_mismatch(PowerModel{5.0 + 100.0 * u(rng), db}, Eigen::Vector3d(eta, pth, fs), pts));
      worst = std::max(worst, jacobian_mismatch(FrequencyModel{db}, Eigen::Vector3d(eta, 0.01 + 0.8 * u(rng), fs), pts));
    }
    std::vector<FitPoint> lpts;
    // only x − λ0 enters, so a small centre keeps the difference step well below the width
    const double l0 = 0.1, w = 0.005 + 0.02 * u(rng);
    for (int i = -5; i <= 5; ++i) lpts.push_back({l0 + 0.7 * i * w + 0.1 * w * u(rng), 0.0});
    worst = std::max(worst, jacobian_mismatch(LorentzianModel{}, Eigen::Vector3d(l0, w, 0.05 + 0.95 * u(rng)), lpts));
  }
  INFO("worst relative mismatch " << worst);
  CHECK(worst < 1e-6);
}

TEST_CASE("seeded power sweep recovers efficiency and threshold") {
  const auto d = power_set(0.20, 200.0, 0.02, 1);
  const auto r = fit_squeezing_vs_power(d, 5.0, 310.0);
  check_descent(r);
  REQUIRE(r.converged);
  CHECK(std::abs(r.param("eta") - 0.20) <= 0.02);
  CHECK(std::abs(r.param("pth_mw") - 200.0) <= 0.2 * 200.0);
  CHECK(r.param("fs_mhz") == 310.0);
  CHECK(r.flags.empty());
}

TEST_CASE("noiseless power sweep is recovered exactly") {
  const auto r = fit_squeezing_vs_power(power_set(0.2, 200.0, 0.0, 0), 5.0, 310.0);
  check_descent(r);
  CHECK(r.converged);
  CHECK(std::abs(r.param("eta") - 0.2) < 1e-8);
  CHECK(std::abs(r.param("pth_mw") - 200.0) < 1e-8 * 200.0);
  const auto rdb = fit_squeezing_vs_power(power_set(0.2, 200.0, 0.0, 0), 5.0, 310.0, {true, {}, {}});
  check_descent(rdb);
  CHECK(std::abs(rdb.param("eta") - 0.2) < 1e-8);
}

TEST_CASE("freed bandwidth is recovered from a high-frequency power sweep") {
  SqueezeData d;
  for (int i = 0; i < 21; ++i) {
    const double pp = 10.0 + 7.0 * i;
    const auto np = noise_power({0.2, 200.0, 310.0, pp}, 150.0);
    d.x.push_back(pp);
    d.s_minus.push_back(np.s_minus);
    d.s_plus.push_back(np.s_plus);
  }
  SqueezeFitOptions opt;
  opt.free_fs = true;
  const auto r = fit_squeezing_vs_power(d, 150.0, 250.0, opt);
  check_descent(r);
  REQUIRE(r.converged);
  CHECK(std::abs(r.param("fs_mhz") - 310.0) < 1e-6 * 310.0);
  CHECK(std::abs(r.param("eta") - 0.2) < 1e-8);
  CHECK(r.error("fs_mhz") > 0.0);
  // held by default
  CHECK(fit_squeezing_vs_power(d, 150.0, 250.0).param("fs_mhz") == 250.0);
}

TEST_CASE("two-anchor power set lands in the wide band") {
  // two measured points plus model fill from the reported fit
  SqueezeData d;
  d.x = {4.0, 6.9};
  d.s_minus = {from_db(-0.34), from_db(-0.46)};
  d.s_plus = {from_db(0.55), from_db(0.75)};
  for (double pp : {1.0, 2.0, 3.0, 5.0, 6.0, 8.0}) {
    const auto np = noise_power({0.20, 200.0, 310.0, pp}, 5.0);
    d.x.push_back(pp);
    d.s_minus.push_back(np.s_minus);
    d.s_plus.push_back(np.s_plus);
  }
  const auto r = fit_squeezing_vs_power(d, 5.0, 310.0);
  check_descent(r);
  REQUIRE(r.converged);
  CHECK(r.param("eta") >= 0.18);
  CHECK(r.param("eta") <= 0.26);
  CHECK(r.param("pth_mw") >= 120.0);
  CHECK(r.param("pth_mw") <= 300.0);
}

TEST_CASE("degenerate squeezing data is flagged") {
  SqueezeData flat;
  flat.x = {1.0, 2.0, 3.0};
  flat.s_minus = {1.0, 1.0, 1.0};
  flat.s_plus = {1.0, 1.0, 1.0};
  const auto r = fit_squeezing_vs_power(flat, 5.0, 310.0);
  check_descent(r);
  CHECK(r.has_flag("eta_unidentifiable"));
  // x → 0: either the efficiency vanishes or the threshold runs away
  CHECK(r.param("eta") * std::sqrt(3.0 / r.param("pth_mw")) < 1e-3);

  auto one = power_set(0.2, 200.0, 0.0, 0);
  std::fill(one.s_plus.begin(), one.s_plus.end(), std::nan(""));
  const auto r1 = fit_squeezing_vs_power(one, 5.0, 310.0);
  check_descent(r1);
  CHECK(r1.has_flag("single_branch"));

  auto bad = power_set(0.2, 200.0, 0.0, 0);
  bad.s_minus[3] = -0.1;
  CHECK_THROWS_AS(fit_squeezing_vs_power(bad, 5.0, 310.0), InputError);
}

TEST_CASE("seeded frequency sweep recovers efficiency, pump ratio and bandwidth") {
  const auto d = frequency_set(0.23, 0.02, 310.0, 0.005, 1);
  const auto r = fit_squeezing_vs_frequency(d);
  check_descent(r);
  REQUIRE(r.converged);
  CHECK(std::abs(r.param("eta") - 0.23) <= 0.03);
  CHECK(std::abs(r.param("ratio") - 0.02) <= 0.01);
  CHECK(std::abs(r.param("fs_mhz") - 310.0) <= 40.0);
  CHECK_FALSE(r.has_flag("fs_lower_bound_only"));
  // anchor: the fitted model at 5 MHz against the measured -0.46 dB
  const double s5 = noise_branch(r.param("eta"), std::sqrt(r.param("ratio")), r.param("fs_mhz"), 5.0, -1);
  CHECK(std::abs(to_db(s5) - (-0.46)) <= 0.05);
}

TEST_CASE("noiseless frequency sweep is recovered exactly") {
  const auto r = fit_squeezing_vs_frequency(frequency_set(0.23, 0.02, 310.0, 0.0, 0));
  check_descent(r);
  CHECK(std::abs(r.param("eta") - 0.23) < 1e-8);
  CHECK(std::abs(r.param("ratio") - 0.02) < 1e-8);
  CHECK(std::abs(r.param("fs_mhz") - 310.0) < 1e-8 * 310.0);
}

TEST_CASE("holding the bandwidth fits only efficiency and pump ratio") {
  SqueezeFitOptions opt;
  opt.fixed["fs_mhz"] = 310.0;
  const auto r = fit_squeezing_vs_frequency(frequency_set(0.23, 0.02, 310.0, 0.005, 1), opt);
  check_descent(r);
  CHECK(r.param("fs_mhz") == 310.0);
  CHECK(r.error("fs_mhz") == 0.0);
  CHECK(r.error("eta") > 0.0);
  opt.fixed = {{"bogus", 1.0}};
  CHECK_THROWS_AS(fit_squeezing_vs_frequency(frequency_set(0.23, 0.02, 310.0, 0.0, 0), opt), ConfigError);
}

TEST_CASE("low-frequency-only data bounds the bandwidth from below") {
  const auto r = fit_squeezing_vs_frequency(frequency_set(0.23, 0.02, 310.0, 0.001, 4, 40.0));
  check_descent(r);
  CHECK(r.has_flag("fs_lower_bound_only"));
}

TEST_CASE("fits do not depend on data order") {
  auto d = frequency_set(0.23, 0.02, 310.0, 0.005, 1);
  const auto a = fit_squeezing_vs_frequency(d);
  SqueezeData rev;
  rev.x.assign(d.x.rbegin(), d.x.rend());
  rev.s_minus.assign(d.s_minus.rbegin(), d.s_minus.rend());
  rev.s_plus.assign(d.s_plus.rbegin(), d.s_plus.rend());
  const auto b = fit_squeezing_vs_frequency(rev);
  for (const char* k : {"eta", "ratio", "fs_mhz"}) CHECK(std::abs(a.param(k) - b.param(k)) < 1e-10 * std::abs(a.param(k)));

  auto prob = linear_problem({0, 1, 2, 3, 4}, 1.5, 0.5);
  prob.data[2].y += 0.3;
  const auto l1 = least_squares(prob);
  std::reverse(prob.data.begin(), prob.data.end());
  std::swap(prob.data[0], prob.data[3]);
  const auto l2 = least_squares(prob);
  CHECK(std::abs(l1.param("a") - l2.param("a")) < 1e-10);
  CHECK(std::abs(l1.param("b") - l2.param("b")) < 1e-10);
}

TEST_CASE("standard errors scale as one over root N") {
  const auto base = power_set(0.2, 200.0, 0.02, 9);
  auto replicate = [&](int k) {
    SqueezeData d;
    for (int r = 0; r < k; ++r) {
      d.x.insert(d.x.end(), base.x.begin(), base.x.end());
      d.s_minus.insert(d.s_minus.end(), base.s_minus.begin(), base.s_minus.end());
      d.s_plus.insert(d.s_plus.end(), base.s_plus.begin(), base.s_plus.end());
    }
    return d;
  };
  SqueezeFitOptions known;
  known.sigma = 0.02;
  const auto a = fit_squeezing_vs_power(replicate(1), 5.0, 310.0, known);
  const auto b = fit_squeezing_vs_power(replicate(4), 5.0, 310.0, known);
  check_descent(a);
  check_descent(b);
  CHECK(b.error("eta") / a.error("eta") == Catch::Approx(0.5).epsilon(1e-6));
  CHECK(b.error("pth_mw") / a.error("pth_mw") == Catch::Approx(0.5).epsilon(1e-6));
  // residual-scaled covariance: same law up to the degrees-of-freedom factor
  const auto c = fit_squeezing_vs_power(replicate(1), 5.0, 310.0);
  const auto e = fit_squeezing_vs_power(replicate(4), 5.0, 310.0);
  const double dof = std::sqrt((42.0 - 2.0) * 4.0 / (168.0 - 2.0));
  CHECK(e.error("eta") / c.error("eta") == Catch::Approx(0.5 * dof).epsilon(1e-6));
}

TEST_CASE("covariance is symmetric positive semi-definite at convergence") {
  const auto r = fit_squeezing_vs_frequency(frequency_set(0.23, 0.02, 310.0, 0.005, 3));
  REQUIRE(r.converged);
  CHECK((r.covariance - r.covariance.transpose()).cwiseAbs().maxCoeff() == 0.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r.covariance);
  CHECK(es.eigenvalues().minCoeff() >= -1e-12 * es.eigenvalues().maxCoeff());
  for (Eigen::Index k = 0; k < 3; ++k) CHECK(r.covariance(k, k) > 0.0);
}

TEST_CASE("fit report serialises to JSON") {
  const auto r = fit_squeezing_vs_power(power_set(0.2, 200.0, 0.02, 1), 5.0, 310.0);
  const auto j = to_json(r);
  CHECK(j.at("converged").get<bool>());
  CHECK(j.at("reason").get<std::string>() == r.reason);
  CHECK(j.at("iterations").get<int>() == r.iterations);
  CHECK(j.at("params").at("eta").at("value").get<double>() == r.param("eta"));
  CHECK(j.at("params").at("pth_mw").at("std_error").get<double>() == r.error("pth_mw"));
  CHECK(j.at("covariance").size() == 3);
  CHECK(j.at("flags").is_array());
  // stable key order
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  CHECK(keys.front() == "converged");
}

TEST_CASE("squeezing tables round-trip through CSV") {
  const auto d = power_set(0.2, 200.0, 0.0, 0, 5);
  const auto t = Table::parse(d.to_table("pump_power_mw", {{"f_mhz", "5"}}).to_csv());
  const auto back = SqueezeData::from_table(t, "pump_power_mw", "t.csv");
  REQUIRE(back.x.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(back.s_minus[i] == Catch::Approx(d.s_minus[i]).epsilon(1e-11));
  CHECK_THROWS_AS(SqueezeData::from_table(t, "frequency_mhz", "t.csv"), InputError);
  CHECK_THROWS_AS(SqueezeData::from_table(Table::parse("pump_power_mw,other\n1,2\n"), "pump_power_mw", "t.csv"),
                  InputError);
}
