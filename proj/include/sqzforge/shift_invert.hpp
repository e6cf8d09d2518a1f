#pragma once

// Shift-and-invert Krylov-Schur eigensolver for real, non-symmetric sparse
// matrices. Returns the `nev` eigenpairs of A closest to the shift σ by running
// restarted Arnoldi on (A − σI)^{-1}. The projected problem is handled in complex
// arithmetic, so complex-conjugate Ritz pairs need no special treatment.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <atomic>
#include <complex>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/SparseLU>
#ifdef SQZ_HAVE_UMFPACK
#include <Eigen/UmfPackSupport>
#endif

#include "sqzforge/errors.hpp"

namespace sqz::eig {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
using cplx = std::complex<double>;

struct ShiftInvertOptions {
  int nev = 6;
  double sigma = 0.0;
  int ncv = 0;  // Krylov dimension; 0 → automatic
  int max_restarts = 300;
  double tol = 1e-13;  // relative Ritz residual in the inverted spectrum
  std::uint64_t seed = 0x5eed5eedULL;
};

struct ShiftInvertResult {
  std::vector<cplx> values;   // eigenvalues of A, ordered by closeness to σ
  Eigen::MatrixXcd vectors;   // unit-norm eigenvectors, one per column
  std::vector<double> ritz_residuals;
  int restarts = 0;
  int solves = 0;
};

/// LU factorisation of A − σI and the matching solve.
class ShiftedOperator {
 public:
  ShiftedOperator(const SparseMatrix& a, double sigma) : shifted_(a) {
    for (int k = 0; k < shifted_.rows(); ++k) shifted_.coeffRef(k, k) -= sigma;
    shifted_.makeCompressed();
#ifdef SQZ_HAVE_UMFPACK
    // Some BLAS builds make UMFPACK report spurious singularity or return a
    // wrong factor; fall back to the built-in LU unless a probe solve is clean.
    if (umfpack_usable().load(std::memory_order_relaxed)) {
      umf_.compute(shifted_);
      use_umf_ = umf_.info() == Eigen::Success && probe_ok();
      if (use_umf_) return;
      umfpack_usable().store(false, std::memory_order_relaxed);
    }
#endif
    lu_.compute(shifted_);
    if (lu_.info() != Eigen::Success)
      throw ConvergenceError("shift-invert: factorisation of (A - sigma I) failed; shift may coincide with an eigenvalue",
                             0.0);
  }

  /// y = (A − σI)^{-1} x for complex x.
  [[nodiscard]] Eigen::VectorXcd apply(const Eigen::VectorXcd& x) {
    Eigen::MatrixXd rhs(x.size(), 2);
    rhs.col(0) = x.real();
    rhs.col(1) = x.imag();
    Eigen::MatrixXd sol = solve(rhs);
    ++solves_;
    Eigen::VectorXcd y(x.size());
    y.real() = sol.col(0);
    y.imag() = sol.col(1);
    return y;
  }

  [[nodiscard]] Eigen::VectorXd apply(const Eigen::VectorXd& x) {
    ++solves_;
    return solve(x);
  }

  [[nodiscard]] int solves() const { return solves_; }

 private:
#ifdef SQZ_HAVE_UMFPACK
  // Cleared after the first failed UMFPACK factorisation in this process.
  static std::atomic<bool>& umfpack_usable() {
    static std::atomic<bool> ok{true};
    return ok;
  }
#endif

#ifdef SQZ_HAVE_UMFPACK
  [[nodiscard]] bool probe_ok() {
    Eigen::VectorXd b(shifted_.rows());
    for (Eigen::Index k = 0; k < b.size(); ++k) b[k] = std::cos(0.7 * static_cast<double>(k)) + 0.5;
    const Eigen::VectorXd x = umf_.solve(b);
    if (umf_.info() != Eigen::Success || !x.allFinite()) return false;
    return (shifted_ * x - b).norm() <= 1e-9 * b.norm() * std::max(1.0, x.norm() / b.norm());
  }
#endif

  template <class Rhs>
  [[nodiscard]] Rhs solve(const Rhs& b) {
#ifdef SQZ_HAVE_UMFPACK
    if (use_umf_) return umf_.solve(b);
#endif
    return lu_.solve(b);
  }

  SparseMatrix shifted_;  // the factorisations keep pointers into this
#ifdef SQZ_HAVE_UMFPACK
  Eigen::UmfPackLU<SparseMatrix> umf_;
  bool use_umf_ = false;
#endif
  Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu_;
  int solves_ = 0;
};

namespace detail {

// Swap the adjacent diagonal entries j, j+1 of the upper-triangular T
// (A = Q T Q^H), updating Q.
inline void swap_schur(Eigen::MatrixXcd& t, Eigen::MatrixXcd& q, int j) {
  const cplx a = t(j, j);
  const cplx c = t(j + 1, j + 1);
  const cplx b = t(j, j + 1);
  const cplx d = c - a;
  const double r = std::sqrt(std::norm(b) + std::norm(d));
  if (r == 0.0) return;
  const cplx g1 = b / r;
  const cplx g2 = d / r;
  Eigen::Matrix2cd g;
  g << g1, -std::conj(g2), g2, std::conj(g1);
  t.middleCols(j, 2) = (t.middleCols(j, 2) * g).eval();
  t.middleRows(j, 2) = (g.adjoint() * t.middleRows(j, 2)).eval();
  q.middleCols(j, 2) = (q.middleCols(j, 2) * g).eval();
  t(j + 1, j) = 0.0;
}

// Eigenvector of upper-triangular T for the eigenvalue at position i.
inline Eigen::VectorXcd triangular_eigvec(const Eigen::MatrixXcd& t, int i) {
  const int m = static_cast<int>(t.rows());
  Eigen::VectorXcd y = Eigen::VectorXcd::Zero(m);
  y(i) = 1.0;
  const cplx lam = t(i, i);
  const double floor = 1e-14 * std::max(1.0, t.cwiseAbs().maxCoeff());
  for (int r = i - 1; r >= 0; --r) {
    cplx acc = 0.0;
    for (int c = r + 1; c <= i; ++c) acc += t(r, c) * y(c);
    cplx den = t(r, r) - lam;
    if (std::abs(den) < floor) den = floor;
    y(r) = -acc / den;
  }
  return y / y.norm();
}

}  // namespace detail

/// Eigenpairs of A nearest σ.
inline ShiftInvertResult shift_invert_eigs(const SparseMatrix& a, const ShiftInvertOptions& opt) {
  const int n = static_cast<int>(a.rows());
  if (a.cols() != n) throw ConfigError("shift-invert: matrix must be square");
  if (opt.nev < 1 || opt.nev >= n - 1) throw ConfigError("shift-invert: nev must lie in [1, n-2]");
  const int m = std::min(n - 1, opt.ncv > 0 ? opt.ncv : std::max(2 * opt.nev + 16, 32));
  const int nev = opt.nev;

  ShiftedOperator op(a, opt.sigma);

  Eigen::MatrixXcd v = Eigen::MatrixXcd::Zero(n, m + 1);
  Eigen::MatrixXcd b = Eigen::MatrixXcd::Zero(m + 1, m);

  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  auto random_unit = [&]() {
    Eigen::VectorXcd x(n);
    for (int k = 0; k < n; ++k) x(k) = uni(rng);
    return Eigen::VectorXcd(x / x.norm());
  };
  v.col(0) = random_unit();

  int k = 0;  // columns 0..k of v are valid; b(0..k, 0..k-1) holds the decomposition
  ShiftInvertResult out;
  Eigen::MatrixXcd t, q;
  Eigen::RowVectorXcd resid_row;
  for (int restart = 0;; ++restart) {
    for (int j = k; j < m; ++j) {
      Eigen::VectorXcd w = op.apply(Eigen::VectorXcd(v.col(j)));
      Eigen::VectorXcd h = Eigen::VectorXcd::Zero(j + 1);
      for (int pass = 0; pass < 2; ++pass) {
        Eigen::VectorXcd hh = v.leftCols(j + 1).adjoint() * w;
        w -= v.leftCols(j + 1) * hh;
        h += hh;
      }
      b.col(j).head(j + 1) = h;
      double beta = w.norm();
      if (beta < 1e-14 * std::max(1.0, h.norm())) {
        // invariant subspace found: continue with a fresh orthogonal direction
        w = random_unit();
        for (int pass = 0; pass < 2; ++pass) w -= v.leftCols(j + 1) * (v.leftCols(j + 1).adjoint() * w);
        w /= w.norm();
        b(j + 1, j) = 0.0;
        v.col(j + 1) = w;
      } else {
        b(j + 1, j) = beta;
        v.col(j + 1) = w / beta;
      }
    }

    Eigen::ComplexSchur<Eigen::MatrixXcd> schur(b.topRows(m));
    if (schur.info() != Eigen::Success) throw ConvergenceError("shift-invert: Schur decomposition failed", 0.0);
    t = schur.matrixT();
    q = schur.matrixU();
    // order by descending |θ|: largest θ ↔ eigenvalue of A nearest σ
    for (int pos = 0; pos < m; ++pos) {
      int best = pos;
      for (int r = pos + 1; r < m; ++r)
        if (std::abs(t(r, r)) > std::abs(t(best, best))) best = r;
      for (int r = best - 1; r >= pos; --r) detail::swap_schur(t, q, r);
    }
    resid_row = b.row(m) * q;

    int converged = 0;
    double worst = 0.0;
    for (int i = 0; i < nev; ++i) {
      const Eigen::VectorXcd y = detail::triangular_eigvec(t, i);
      const double r = std::abs(resid_row.dot(y.conjugate())) / std::abs(t(i, i));
      worst = std::max(worst, r);
      if (r <= opt.tol) ++converged;
    }
    if (converged == nev) {
      out.restarts = restart;
      break;
    }
    if (restart >= opt.max_restarts)
      throw ConvergenceError("shift-invert: no convergence after " + std::to_string(restart) + " restarts", worst);

    // thick restart: keep the leading p Schur vectors
    const int p = nev + (m - nev) / 2;
    Eigen::MatrixXcd kept = v.leftCols(m) * q.leftCols(p);
    v.leftCols(p) = kept;
    v.col(p) = v.col(m);
    b.setZero();
    b.topLeftCorner(p, p) = t.topLeftCorner(p, p).triangularView<Eigen::Upper>();
    b.row(p).head(p) = resid_row.head(p);
    k = p;
  }

  out.values.reserve(nev);
  out.vectors.resize(n, nev);
  for (int i = 0; i < nev; ++i) {
    const Eigen::VectorXcd y = detail::triangular_eigvec(t, i);
    Eigen::VectorXcd x = v.leftCols(m) * (q * y);
    x /= x.norm();
    out.vectors.col(i) = x;
    out.values.push_back(opt.sigma + 1.0 / t(i, i));
    out.ritz_residuals.push_back(std::abs(resid_row.dot(y.conjugate())) / std::abs(t(i, i)));
  }
  out.solves = op.solves();
  return out;
}

}  // namespace sqz::eig
