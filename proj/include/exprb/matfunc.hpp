#pragma once

// Dense matrix-function kernels: exponential, phi functions, SPD square
// roots and Cholesky-based inverse application. These are the small-matrix
// engine behind the Krylov evaluator and the reference used by the tests.

#include <complex>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace exprb {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Raised for malformed inputs (shape mismatch, non-finite entries, ...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an iterative or factorization routine cannot deliver.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A symmetric positive definite matrix. Construction checks symmetry
/// (1e-12 relative in Frobenius norm) and computes a Cholesky factor,
/// which is kept for inverse application and shared between copies.
class SpdMatrix {
 public:
  explicit SpdMatrix(const Matrix& m);

  const Matrix& matrix() const { return m_; }
  Index dim() const { return m_.rows(); }

  /// Omega^{-1} v through the cached factor Omega = L L^T.
  Vector solve(const Vector& v) const;
  Matrix solve(const Matrix& b) const;
  const Eigen::LLT<Matrix>& factor() const { return *llt_; }

 private:
  Matrix m_;
  std::shared_ptr<const Eigen::LLT<Matrix>> llt_;
};

/// e^Z by scaling and squaring with the degree-13 diagonal Pade approximant.
Matrix expm(const Matrix& z);

/// Largest k accepted by the phi routines.
inline constexpr int kMaxPhiIndex = 8;

/// phi_k(z), with phi_0 = exp. k in [0, kMaxPhiIndex].
double phi(int k, double z);
std::complex<double> phi(int k, std::complex<double> z);

/// phi_0(z) .. phi_p(z) in one pass.
std::vector<double> phi_all(int p, double z);
std::vector<std::complex<double>> phi_all(int p, std::complex<double> z);

/// [phi_1(Z), ..., phi_p(Z)] from a single exponential of the block
/// matrix [[Z, I, 0, ...], [0, 0, I, ...], ..., [0, ..., 0]].
std::vector<Matrix> phi_dense(int p, const Matrix& z);

/// Columns phi_1(Z) e_1, ..., phi_p(Z) e_1 (an n x p matrix) from one
/// exponential of the (n+p) x (n+p) matrix [[Z, e_1 e_1^T], [0, N]],
/// N being the p x p upper shift.
Matrix phi_first_columns(int p, const Matrix& z);

/// sum_{k=0}^{p} phi_k(M) v_k with p = v.size() - 1, evaluated densely via
/// the (n+p) x (n+p) augmented exponential. Reference path for the Krylov
/// evaluator.
Vector phi_combination_dense(const Matrix& m, std::span<const Vector> v);

struct SqrtmIteration {
  int iterations = 0;
  std::vector<double> residuals;  // ||Omega_k^2 - A||_F / ||A||_F per iterate
  std::vector<Matrix> iterates;   // only filled when keep_iterates is set
};

struct SqrtmNewtonOptions {
  double tol = 1e-12;
  int max_iter = 50;
  bool keep_iterates = false;
};

/// Principal square root of an SPD matrix by Newton's iteration started at
/// Omega_0 = A. The iteration is run in its coupled (Denman-Beavers) form,
/// whose first component reproduces the Newton iterates while staying
/// stable for ill-conditioned A. Throws NumericalError if max_iter is hit.
SpdMatrix sqrtm_newton(const SpdMatrix& a, const SqrtmNewtonOptions& opts = {},
                       SqrtmIteration* trace = nullptr);

/// V sqrt(Lambda) V^T from the symmetric eigendecomposition.
SpdMatrix sqrtm_schur(const SpdMatrix& a);

/// Omega^{-1} v via the cached Cholesky factor of Omega.
Vector spd_inverse_apply(const SpdMatrix& omega, const Vector& v);

}  // namespace exprb
