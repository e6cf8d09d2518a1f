#pragma once

// Levenberg–Marquardt with box bounds and the JSON report format.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "sqzforge/errors.hpp"
#include "sqzforge/trace.hpp"

namespace sqz {

/// One data point. `tag` distinguishes branches that share the x axis (e.g.
/// squeezing vs anti-squeezing).
struct FitPoint {
  double x = 0.0;
  double y = 0.0;
  double sigma = 1.0;
  int tag = 0;
};

using ModelFn = std::function<double(const Eigen::VectorXd& p, double x, int tag)>;
/// Writes ∂model/∂p into `row` (length = number of parameters).
using JacobianFn = std::function<void(const Eigen::VectorXd& p, double x, int tag, Eigen::Ref<Eigen::RowVectorXd> row)>;

struct FitProblem {
  std::vector<std::string> names;
  ModelFn model;
  JacobianFn jacobian;  // empty: central differences
  std::vector<FitPoint> data;
  Eigen::VectorXd initial;
  Eigen::VectorXd lower;  // empty: unbounded
  Eigen::VectorXd upper;
  std::vector<bool> fixed;  // empty: all free
  bool sigma_given = false;  // false: scale covariance by reduced chi²
  int max_iterations = 500;
  double gradient_tol = 1e-10;
  double step_tol = 1e-12;
};

struct FitResult {
  std::vector<std::string> names;
  Eigen::VectorXd params;
  Eigen::VectorXd std_errors;
  Eigen::MatrixXd covariance;
  double cost = 0.0;  // ½ Σ (r/σ)²
  double residual_norm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string reason;
  std::vector<double> accepted_costs;  // cost after every accepted step, starting point first
  std::vector<std::string> flags;

  [[nodiscard]] double param(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return params[static_cast<Eigen::Index>(i)];
    throw ConfigError("fit result has no parameter '" + std::string(name) + "'");
  }
  [[nodiscard]] double error(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return std_errors[static_cast<Eigen::Index>(i)];
    throw ConfigError("fit result has no parameter '" + std::string(name) + "'");
  }
  [[nodiscard]] bool has_flag(std::string_view f) const {
    return std::find(flags.begin(), flags.end(), f) != flags.end();
  }
};

/// Central differences with step h_rel·max(|p_k|, 1e-8) per parameter.
inline Eigen::MatrixXd numeric_jacobian(const ModelFn& model, const Eigen::VectorXd& p,
                                        const std::vector<FitPoint>& pts, double h_rel = 1e-6) {
  const Eigen::Index np = p.size();
  Eigen::MatrixXd jac(static_cast<Eigen::Index>(pts.size()), np);
  Eigen::VectorXd q = p;
  // all points at p + h, then all at p − h, so models that cache per parameter
  // vector evaluate each perturbation once
  for (Eigen::Index k = 0; k < np; ++k) {
    const double h = h_rel * std::max(std::abs(p[k]), 1e-8);
    const double up = p[k] + h, down = p[k] - h;
    const double span = up - down;  // realised step, exact in floating point
    for (const double at : {up, down}) {
      q[k] = at;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        const double v = model(q, pts[i].x, pts[i].tag);
        if (!std::isfinite(v))
          throw InputError("numeric_jacobian: model not finite when perturbing parameter " + std::to_string(k));
        auto& cell = jac(static_cast<Eigen::Index>(i), k);
        cell = at == up ? v : (cell - v) / span;
      }
    }
    q[k] = p[k];
  }
  return jac;
}

namespace detail {

inline std::string vec_str(const Eigen::VectorXd& p) {
  std::string s = "[";
  for (Eigen::Index i = 0; i < p.size(); ++i) s += (i ? ", " : "") + format_number(p[i]);
  return s + "]";
}

}  // namespace detail

inline FitResult least_squares(const FitProblem& prob) {
  const auto np = prob.initial.size();
  const auto n = static_cast<Eigen::Index>(prob.data.size());
  if (!prob.model) throw ConfigError("least_squares: no model");
  if (static_cast<std::size_t>(np) != prob.names.size()) throw ConfigError("least_squares: names/initial size mismatch");
  const bool bounded = prob.lower.size() != 0;
  if (bounded && (prob.lower.size() != np || prob.upper.size() != np))
    throw ConfigError("least_squares: bounds must match the parameter count");
  std::vector<bool> fixed = prob.fixed.empty() ? std::vector<bool>(static_cast<std::size_t>(np), false) : prob.fixed;
  if (fixed.size() != static_cast<std::size_t>(np)) throw ConfigError("least_squares: fixed mask size mismatch");
  std::vector<Eigen::Index> freeidx;
  for (Eigen::Index k = 0; k < np; ++k)
    if (!fixed[static_cast<std::size_t>(k)]) freeidx.push_back(k);
  const auto nf = static_cast<Eigen::Index>(freeidx.size());
  if (n < nf) throw ConfigError("least_squares: fewer data points than free parameters");
  for (const auto& pt : prob.data)
    if (!(pt.sigma > 0.0)) throw ConfigError("least_squares: sigma must be positive");
  if (bounded)
    for (Eigen::Index k = 0; k < np; ++k)
      if (!(prob.initial[k] >= prob.lower[k] && prob.initial[k] <= prob.upper[k]))
        throw ConfigError("least_squares: initial value of " + prob.names[static_cast<std::size_t>(k)] +
                          " outside its bounds");

  // canonical point order, so sums and hence results do not depend on input order
  std::vector<FitPoint> data = prob.data;
  std::sort(data.begin(), data.end(), [](const FitPoint& a, const FitPoint& b) {
    return std::tie(a.x, a.tag, a.y, a.sigma) < std::tie(b.x, b.tag, b.y, b.sigma);
  });

  FitResult res;
  res.names = prob.names;
  auto project = [&](Eigen::VectorXd& p) {
    if (bounded) p = p.cwiseMax(prob.lower).cwiseMin(prob.upper);
  };
  auto residuals = [&](const Eigen::VectorXd& p) {
    Eigen::VectorXd r(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& pt = data[static_cast<std::size_t>(i)];
      const double m = prob.model(p, pt.x, pt.tag);
      if (!std::isfinite(m)) throw InputError("least_squares: model returned NaN/inf at parameters " + detail::vec_str(p));
      r[i] = (pt.y - m) / pt.sigma;
    }
    ++res.evaluations;
    return r;
  };
  // Jacobian of the model scaled by 1/σ, free columns only.
  auto jacobian = [&](const Eigen::VectorXd& p) {
    Eigen::MatrixXd full(n, np);
    if (prob.jacobian) {
      Eigen::RowVectorXd row(np);
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto& pt = data[static_cast<std::size_t>(i)];
        prob.jacobian(p, pt.x, pt.tag, row);
        full.row(i) = row;
      }
    } else {
      full = numeric_jacobian(prob.model, p, data);
    }
    Eigen::MatrixXd j(n, nf);
    for (Eigen::Index c = 0; c < nf; ++c)
      for (Eigen::Index i = 0; i < n; ++i) j(i, c) = full(i, freeidx[static_cast<std::size_t>(c)]) / data[static_cast<std::size_t>(i)].sigma;
    return j;
  };

  Eigen::VectorXd p = prob.initial;
  Eigen::VectorXd r = residuals(p);
  double cost = 0.5 * r.squaredNorm();
  res.accepted_costs.push_back(cost);
  double lambda = 1e-9;
  Eigen::MatrixXd jac;
  bool need_jac = true;

  for (res.iterations = 0; res.iterations < prob.max_iterations;) {
    if (need_jac) jac = jacobian(p);
    need_jac = false;
    const Eigen::VectorXd grad = jac.transpose() * r;  // −∇cost
    // columns held at a bound that the gradient pushes against
    std::vector<Eigen::Index> act;
    for (Eigen::Index c = 0; c < nf; ++c) {
      const auto k = freeidx[static_cast<std::size_t>(c)];
      const bool pinned = bounded && ((p[k] >= prob.upper[k] && grad[c] > 0.0) || (p[k] <= prob.lower[k] && grad[c] < 0.0));
      if (!pinned) act.push_back(c);
    }
    const auto na = static_cast<Eigen::Index>(act.size());
    Eigen::VectorXd pgrad(na);
    for (Eigen::Index a = 0; a < na; ++a) pgrad[a] = grad[act[static_cast<std::size_t>(a)]];
    if (nf == 0 || na == 0 || pgrad.lpNorm<Eigen::Infinity>() < prob.gradient_tol || cost == 0.0) {
      res.converged = true;
      res.reason = nf == 0 ? "no free parameters" : cost == 0.0 ? "exact fit" : "gradient below tolerance";
      break;
    }
    Eigen::MatrixXd jtj(na, na);
    for (Eigen::Index a = 0; a < na; ++a)
      for (Eigen::Index b = 0; b < na; ++b)
        jtj(a, b) = jac.col(act[static_cast<std::size_t>(a)]).dot(jac.col(act[static_cast<std::size_t>(b)]));
    Eigen::VectorXd diag = jtj.diagonal().cwiseMax(1e-300);
    ++res.iterations;
    bool accepted = false;
    while (lambda <= 1e16) {
      Eigen::MatrixXd a = jtj;
      a.diagonal() += lambda * diag;
      const Eigen::VectorXd step = a.ldlt().solve(pgrad);
      Eigen::VectorXd trial = p;
      for (Eigen::Index c = 0; c < na; ++c) trial[freeidx[static_cast<std::size_t>(act[static_cast<std::size_t>(c)])]] += step[c];
      project(trial);
      const double moved = (trial - p).norm();
      if (!step.allFinite() || moved == 0.0) {
        lambda *= 10.0;
        continue;
      }
      const Eigen::VectorXd rt = residuals(trial);
      const double ct = 0.5 * rt.squaredNorm();
      if (ct <= cost) {
        const bool tiny = moved <= prob.step_tol * (p.norm() + prob.step_tol);
        p = trial;
        r = rt;
        cost = ct;
        res.accepted_costs.push_back(cost);
        lambda = std::max(lambda / 10.0, 1e-15);
        accepted = true;
        need_jac = true;
        if (tiny) {
          res.converged = true;
          res.reason = "relative step below tolerance";
        }
        break;
      }
      lambda *= 10.0;
    }
    if (res.converged) break;
    if (!accepted) {
      // No descent at maximal damping: we sit at a (possibly degenerate) minimum
      // when the gradient is negligible relative to the residual scale.
      const double scale = std::max(1.0, std::sqrt(2.0 * cost)) * std::max(1.0, jac.norm());
      if (pgrad.lpNorm<Eigen::Infinity>() <= 1e-8 * scale) {
        res.converged = true;
        res.reason = "no further descent (stationary point)";
      } else {
        res.reason = "no descent at maximum damping";
      }
      break;
    }
  }
  if (res.reason.empty()) res.reason = "iteration limit";

  res.params = p;
  res.cost = cost;
  res.residual_norm = r.norm();
  res.covariance = Eigen::MatrixXd::Zero(np, np);
  res.std_errors = Eigen::VectorXd::Zero(np);
  if (nf > 0) {
    const Eigen::MatrixXd jf = jacobian(p);
    const Eigen::MatrixXd jtj = jf.transpose() * jf;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(jtj);
    if (lu.rank() < nf) {
      res.flags.emplace_back("singular_covariance");
      for (Eigen::Index k = 0; k < np; ++k) res.std_errors[k] = fixed[static_cast<std::size_t>(k)] ? 0.0 : std::numeric_limits<double>::infinity();
    } else {
      Eigen::MatrixXd cov = lu.inverse();
      if (!prob.sigma_given) cov *= n > nf ? 2.0 * cost / static_cast<double>(n - nf) : 0.0;
      cov = (0.5 * (cov + cov.transpose())).eval();
      for (Eigen::Index a = 0; a < nf; ++a)
        for (Eigen::Index b = 0; b < nf; ++b)
          res.covariance(freeidx[static_cast<std::size_t>(a)], freeidx[static_cast<std::size_t>(b)]) = cov(a, b);
      for (Eigen::Index k = 0; k < np; ++k) res.std_errors[k] = std::sqrt(std::max(res.covariance(k, k), 0.0));
    }
  }
  return res;
}

inline nlohmann::ordered_json to_json(const FitResult& r) {
  nlohmann::ordered_json j;
  j["converged"] = r.converged;
  j["reason"] = r.reason;
  j["iterations"] = r.iterations;
  j["evaluations"] = r.evaluations;
  j["cost"] = r.cost;
  j["residual_norm"] = r.residual_norm;
  auto params = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < r.names.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const double e = r.std_errors[k];
    params[r.names[i]] = {{"value", r.params[k]}, {"std_error", std::isfinite(e) ? nlohmann::ordered_json(e) : nullptr}};
  }
  j["params"] = params;
  auto cov = nlohmann::ordered_json::array();
  for (Eigen::Index a = 0; a < r.covariance.rows(); ++a) {
    auto row = nlohmann::ordered_json::array();
    for (Eigen::Index b = 0; b < r.covariance.cols(); ++b) row.push_back(r.covariance(a, b));
    cov.push_back(row);
  }
  j["covariance"] = cov;
  j["flags"] = r.flags;
  return j;
}

}  // namespace sqz
