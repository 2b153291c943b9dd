#pragma once

// Dense complex-Hermitian kernels for the covariance likelihood: Cholesky
// factorization with a trace-relative pivot floor, log-determinant, solves,
// rank-1 updates and the Sherman-Morrison downdate quadratic forms.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

namespace cmd {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RVector = Eigen::VectorXd;

/// Hermitian matrices are stored densely; the Hermitian property is a
/// contract on the value, checked where it matters.
using HermitianMatrix = CMatrix;
using ComplexVector = CVector;

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotPositiveDefinite : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class SingularDowndate : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kPivotRelTol = 1e-12;
inline constexpr double kDowndateTol = 1e-12;

inline void require_square(const CMatrix& a, const char* what) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    throw DimensionMismatch(std::string(what) + ": matrix must be square and non-empty");
  }
}

inline void require_dim(Eigen::Index n, Eigen::Index expected, const char* what) {
  if (n != expected) {
    throw DimensionMismatch(std::string(what) + ": expected dimension " + std::to_string(expected) +
                            ", got " + std::to_string(n));
  }
}

/// Lower Cholesky factor A = L L^H. A pivot below kPivotRelTol * tr(A) is
/// treated as a loss of positive definiteness.
class Cholesky {
 public:
  explicit Cholesky(const HermitianMatrix& a) : lower_(a.rows(), a.cols()) {
    require_square(a, "Cholesky");
    const Eigen::Index n = a.rows();
    const double trace = a.diagonal().real().sum();
    const double floor = kPivotRelTol * std::abs(trace);
    if (!std::isfinite(trace) || trace <= 0.0) {
      throw NotPositiveDefinite("Cholesky: non-positive or non-finite trace");
    }
    lower_.setZero();
    for (Eigen::Index j = 0; j < n; ++j) {
      double pivot = a(j, j).real();
      for (Eigen::Index k = 0; k < j; ++k) pivot -= std::norm(lower_(j, k));
      if (!(pivot > floor)) {
        throw NotPositiveDefinite("Cholesky: pivot " + std::to_string(pivot) + " at column " +
                                  std::to_string(j));
      }
      const double d = std::sqrt(pivot);
      lower_(j, j) = d;
      for (Eigen::Index i = j + 1; i < n; ++i) {
        Complex s = a(i, j);
        for (Eigen::Index k = 0; k < j; ++k) s -= lower_(i, k) * std::conj(lower_(j, k));
        lower_(i, j) = s / d;
      }
    }
  }

  Eigen::Index dim() const { return lower_.rows(); }
  const CMatrix& lower() const { return lower_; }

  double logdet() const {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < dim(); ++i) acc += std::log(lower_(i, i).real());
    return 2.0 * acc;
  }

  /// Solves A X = B for every column of B.
  CMatrix solve(const CMatrix& rhs) const {
    require_dim(rhs.rows(), dim(), "Cholesky::solve");
    const auto lo = lower_.triangularView<Eigen::Lower>();
    CMatrix y = lo.solve(rhs);
    return lo.adjoint().solve(y);
  }

  CVector solve(const CVector& rhs) const {
    require_dim(rhs.size(), dim(), "Cholesky::solve");
    const auto lo = lower_.triangularView<Eigen::Lower>();
    CVector y = lo.solve(rhs);
    return lo.adjoint().solve(y);
  }

 private:
  CMatrix lower_;
};

inline double logdet(const HermitianMatrix& a) { return Cholesky(a).logdet(); }

inline ComplexVector solve(const HermitianMatrix& a, const ComplexVector& v) {
  require_dim(v.size(), a.rows(), "solve");
  return Cholesky(a).solve(v);
}

/// A + c v v^H, written into the lower and upper halves symmetrically.
inline void rank1_update_inplace(HermitianMatrix& a, double c, const ComplexVector& v) {
  require_square(a, "rank1_update");
  require_dim(v.size(), a.rows(), "rank1_update");
  if (c == 0.0) return;
  a.noalias() += c * v * v.adjoint();
}

inline HermitianMatrix rank1_update(const HermitianMatrix& a, double c, const ComplexVector& v) {
  HermitianMatrix out = a;
  rank1_update_inplace(out, c, v);
  return out;
}

struct DowndateQuadforms {
  double q1 = 0.0;  ///< v^H (A - gamma v v^H)^{-1} v
  double q2 = 0.0;  ///< v^H (A - gamma v v^H)^{-1} B (A - gamma v v^H)^{-1} v
};

/// Same quadratic forms, from precomputed u = A^{-1} v and Bu = B u. Used by
/// the batched gradient, where every column shares one factorization of A.
inline DowndateQuadforms downdate_quadforms_from(const ComplexVector& v, const ComplexVector& u,
                                                 const ComplexVector& bu, double gamma) {
  const double a = v.dot(u).real();  // v^H A^{-1} v
  const double denom = 1.0 - gamma * a;
  if (!(denom > kDowndateTol)) {
    throw SingularDowndate("downdate: 1 - gamma * v^H A^{-1} v = " + std::to_string(denom));
  }
  const double uBu = u.dot(bu).real();
  return {a / denom, uBu / (denom * denom)};
}

inline DowndateQuadforms sherman_morrison_downdate_quadforms(const HermitianMatrix& a,
                                                             double gamma,
                                                             const ComplexVector& v,
                                                             const HermitianMatrix& b) {
  require_square(a, "downdate");
  require_dim(v.size(), a.rows(), "downdate");
  require_dim(b.rows(), a.rows(), "downdate");
  const ComplexVector u = Cholesky(a).solve(v);
  const ComplexVector bu = b * u;
  return downdate_quadforms_from(v, u, bu, gamma);
}

/// (A + A^H) / 2, removing rounding asymmetry.
inline HermitianMatrix hermitian_part(const CMatrix& a) {
  return HermitianMatrix(0.5 * (a + a.adjoint()));
}

/// Relative Frobenius distance ||a - b|| / ||b||.
inline double rel_frobenius(const CMatrix& a, const CMatrix& b) {
  const double nb = b.norm();
  return nb == 0.0 ? a.norm() : (a - b).norm() / nb;
}

}  // namespace cmd
