#include "exprb/matfunc.hpp"

#include <array>
#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

namespace exprb {

namespace {

constexpr int kTaylorTerms = 12;
constexpr double kTaylorRadius = 0.1;
constexpr double kRecursionRadius = 16.0;

constexpr std::array<double, 32> make_inverse_factorials() {
  std::array<double, 32> out{};
  double f = 1.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (i > 0) f *= static_cast<double>(i);
    out[i] = 1.0 / f;
  }
  return out;
}

constexpr auto kInvFactorial = make_inverse_factorials();

void require_square(const Matrix& z, const char* what) {
  if (z.rows() != z.cols()) {
    throw InvalidArgument(std::string(what) + ": matrix is " + std::to_string(z.rows()) +
                          "x" + std::to_string(z.cols()) + ", expected square");
  }
}

void require_finite(const Matrix& z, const char* what) {
  if (!z.allFinite()) throw InvalidArgument(std::string(what) + ": non-finite entries");
}

void require_phi_index(int p, const char* what) {
  if (p < 0 || p > kMaxPhiIndex) {
    throw InvalidArgument(std::string(what) + ": phi index " + std::to_string(p) +
                          " outside [0, " + std::to_string(kMaxPhiIndex) + "]");
  }
}

template <class T>
bool is_finite(const T& z) {
  if constexpr (std::is_same_v<T, double>) {
    return std::isfinite(z);
  } else {
    return std::isfinite(z.real()) && std::isfinite(z.imag());
  }
}

// sum_{j < kTaylorTerms} z^j / (j + k)!
template <class T>
T phi_taylor(int k, T z) {
  T acc = T(kInvFactorial[kTaylorTerms - 1 + k]);
  for (int j = kTaylorTerms - 2; j >= 0; --j) acc = acc * z + T(kInvFactorial[j + k]);
  return acc;
}

template <class T>
std::vector<T> phi_all_impl(int p, T z) {
  require_phi_index(p, "phi");
  if (!is_finite(z)) throw InvalidArgument("phi: non-finite argument");

  std::vector<T> f(static_cast<std::size_t>(p) + 1);
  const double r = std::abs(z);

  if (r < kTaylorRadius) {
    for (int k = 0; k <= p; ++k) f[k] = phi_taylor(k, z);
    return f;
  }

  if (r >= kRecursionRadius) {
    // Forward recursion amplifies errors by at most k/|z| per step here.
    f[0] = std::exp(z);
    for (int k = 0; k < p; ++k) f[k + 1] = (f[k] - T(kInvFactorial[k])) / z;
    return f;
  }

  // Seed with Taylor at z / 2^s, then double:
  //   phi_k(2x) = 2^{-k} [ e^x phi_k(x) + sum_{j=1}^{k} phi_j(x) / (k - j)! ].
  int s = 0;
  while (r * std::ldexp(1.0, -s) >= kTaylorRadius) ++s;
  const T seed = z * std::ldexp(1.0, -s);
  for (int k = 0; k <= p; ++k) f[k] = phi_taylor(k, seed);

  std::vector<T> g(f.size());
  for (int step = 0; step < s; ++step) {
    for (int k = 0; k <= p; ++k) {
      T acc = f[0] * f[k];
      for (int j = 1; j <= k; ++j) acc += f[j] * T(kInvFactorial[k - j]);
      g[k] = acc * std::ldexp(1.0, -k);
    }
    f.swap(g);
  }
  f[0] = std::exp(z);
  return f;
}

}  // namespace

SpdMatrix::SpdMatrix(const Matrix& m) {
  require_square(m, "SpdMatrix");
  require_finite(m, "SpdMatrix");
  const double norm = m.norm();
  if ((m - m.transpose()).norm() > 1e-12 * norm) {
    throw InvalidArgument("SpdMatrix: matrix is not symmetric");
  }
  m_ = 0.5 * (m + m.transpose());
  auto llt = std::make_shared<Eigen::LLT<Matrix>>(m_);
  if (llt->info() != Eigen::Success || m_.rows() == 0) {
    throw InvalidArgument("SpdMatrix: Cholesky factorization failed (not positive definite)");
  }
  llt_ = std::move(llt);
}

Vector SpdMatrix::solve(const Vector& v) const {
  if (v.size() != m_.rows()) throw InvalidArgument("SpdMatrix::solve: dimension mismatch");
  return llt_->solve(v);
}

Matrix SpdMatrix::solve(const Matrix& b) const {
  if (b.rows() != m_.rows()) throw InvalidArgument("SpdMatrix::solve: dimension mismatch");
  return llt_->solve(b);
}

Matrix expm(const Matrix& z) {
  require_square(z, "expm");
  require_finite(z, "expm");
  const Index n = z.rows();
  if (n == 0) return z;

  static constexpr std::array<double, 14> b = {
      64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
      129060195264000.0,   10559470521600.0,    670442572800.0,     33522128640.0,
      1323241920.0,        40840800.0,          960960.0,           16380.0,
      182.0,               1.0};
  constexpr double theta13 = 5.371920351148152;

  const double norm1 = z.cwiseAbs().colwise().sum().maxCoeff();
  int s = 0;
  if (norm1 > theta13) s = static_cast<int>(std::ceil(std::log2(norm1 / theta13)));

  const Matrix a = z * std::ldexp(1.0, -s);
  const Matrix id = Matrix::Identity(n, n);
  const Matrix a2 = a * a;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;

  const Matrix u_inner = a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2);
  const Matrix u = a * (u_inner + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * id);
  const Matrix v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 +
                   b[2] * a2 + b[0] * id;

  Matrix r = (v - u).partialPivLu().solve(v + u);
  for (int i = 0; i < s; ++i) r = r * r;
  return r;
}

double phi(int k, double z) { return phi_all_impl<double>(k, z).back(); }

std::complex<double> phi(int k, std::complex<double> z) {
  return phi_all_impl<std::complex<double>>(k, z).back();
}

std::vector<double> phi_all(int p, double z) { return phi_all_impl<double>(p, z); }

std::vector<std::complex<double>> phi_all(int p, std::complex<double> z) {
  return phi_all_impl<std::complex<double>>(p, z);
}

std::vector<Matrix> phi_dense(int p, const Matrix& z) {
  require_square(z, "phi_dense");
  require_phi_index(p, "phi_dense");
  const Index n = z.rows();
  if (p == 0) return {};

  const Index size = n * (p + 1);
  Matrix block = Matrix::Zero(size, size);
  block.topLeftCorner(n, n) = z;
  for (int k = 0; k < p; ++k) block.block(k * n, (k + 1) * n, n, n).setIdentity();

  const Matrix e = expm(block);
  std::vector<Matrix> out;
  out.reserve(p);
  for (int k = 1; k <= p; ++k) out.push_back(e.block(0, k * n, n, n));
  return out;
}

Matrix phi_first_columns(int p, const Matrix& z) {
  require_square(z, "phi_first_columns");
  require_phi_index(p, "phi_first_columns");
  const Index n = z.rows();
  if (p == 0 || n == 0) return Matrix::Zero(n, p);

  Matrix aug = Matrix::Zero(n + p, n + p);
  aug.topLeftCorner(n, n) = z;
  aug(0, n) = 1.0;
  for (int i = 0; i + 1 < p; ++i) aug(n + i, n + i + 1) = 1.0;
  return expm(aug).block(0, n, n, p);
}

Vector phi_combination_dense(const Matrix& m, std::span<const Vector> v) {
  require_square(m, "phi_combination_dense");
  if (v.empty()) throw InvalidArgument("phi_combination_dense: need at least v_0");
  const Index n = m.rows();
  for (const auto& vk : v) {
    if (vk.size() != n) throw InvalidArgument("phi_combination_dense: dimension mismatch");
  }
  const int p = static_cast<int>(v.size()) - 1;
  require_phi_index(p, "phi_combination_dense");
  if (p == 0) return expm(m) * v[0];

  // Columns of W are v_p, ..., v_1; W is normalized so the augmented
  // matrix norm is governed by M alone.
  Matrix w(n, p);
  for (int j = 1; j <= p; ++j) w.col(p - j) = v[j];
  const double wnorm = w.cwiseAbs().colwise().sum().maxCoeff();
  const double eta = wnorm > 0.0 ? 1.0 / wnorm : 1.0;

  Matrix aug = Matrix::Zero(n + p, n + p);
  aug.topLeftCorner(n, n) = m;
  aug.topRightCorner(n, p) = eta * w;
  for (int i = 0; i + 1 < p; ++i) aug(n + i, n + i + 1) = 1.0;

  const Matrix e = expm(aug);
  return e.topLeftCorner(n, n) * v[0] + e.block(0, n + p - 1, n, 1) / eta;
}

SpdMatrix sqrtm_newton(const SpdMatrix& a, const SqrtmNewtonOptions& opts,
                       SqrtmIteration* trace) {
  const Index n = a.dim();
  const Matrix& am = a.matrix();
  const double anorm = am.norm();
  const Matrix id = Matrix::Identity(n, n);

  auto inverse = [&](const Matrix& x) -> Matrix {
    Eigen::LLT<Matrix> llt(x);
    if (llt.info() == Eigen::Success) return llt.solve(id);
    return x.partialPivLu().inverse();
  };

  // Y_k equals the Newton iterate Omega_k (Omega_0 = A); Z_k = A^{-1} Omega_k.
  Matrix y = am;
  Matrix z = id;
  SqrtmIteration local;
  SqrtmIteration& hist = trace ? *trace : local;
  hist = {};

  for (int k = 1; k <= opts.max_iter; ++k) {
    const Matrix y_inv = inverse(y);
    const Matrix z_inv = inverse(z);
    y = 0.5 * (y + z_inv);
    z = 0.5 * (z + y_inv);
    y = 0.5 * (y + y.transpose()).eval();
    z = 0.5 * (z + z.transpose()).eval();
    if (!y.allFinite()) throw NumericalError("sqrtm_newton: iteration produced non-finite values");

    const double res = (y * y - am).norm() / anorm;
    hist.iterations = k;
    hist.residuals.push_back(res);
    if (opts.keep_iterates) hist.iterates.push_back(y);
    if (res <= opts.tol) return SpdMatrix(y);
  }
  throw NumericalError("sqrtm_newton: no convergence within " + std::to_string(opts.max_iter) +
                       " iterations (residual " + std::to_string(hist.residuals.back()) + ")");
}

SpdMatrix sqrtm_schur(const SpdMatrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(a.matrix());
  if (eig.info() != Eigen::Success) throw NumericalError("sqrtm_schur: eigensolver failed");
  const Vector& lambda = eig.eigenvalues();
  if (lambda.minCoeff() <= 0.0) throw NumericalError("sqrtm_schur: non-positive eigenvalue");
  const Matrix& q = eig.eigenvectors();
  Matrix omega = q * lambda.cwiseSqrt().asDiagonal() * q.transpose();
  return SpdMatrix(0.5 * (omega + omega.transpose()));
}

Vector spd_inverse_apply(const SpdMatrix& omega, const Vector& v) { return omega.solve(v); }

}  // namespace exprb
