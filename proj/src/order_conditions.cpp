#include "exprb/integrators.hpp"

namespace exprb {

namespace {

// phi_1..phi_5 at a given argument, indexed by k.
struct PhiTable {
  std::vector<Matrix> f;
  explicit PhiTable(const Matrix& z) {
    f.push_back(expm(z));
    for (auto& m : phi_dense(5, z)) f.push_back(std::move(m));
  }
  Matrix combine(const PhiWeights& w) const {
    Matrix out = Matrix::Zero(f[0].rows(), f[0].cols());
    for (const auto& pw : w) out += pw.coeff * f[pw.k];
    return out;
  }
};

}  // namespace

std::array<double, 4> verify_order_conditions(const SchemeSpec& scheme, const Matrix& z,
                                              const Matrix& k) {
  scheme.validate();
  if (z.rows() != z.cols() || k.rows() != k.cols() || z.rows() != k.rows()) {
    throw InvalidArgument("verify_order_conditions: Z and K must be square of equal size");
  }
  const Index n = z.rows();
  const std::size_t s = scheme.c.size();
  const PhiTable at_z(z);
  std::vector<PhiTable> at_cz;
  for (double ci : scheme.c) at_cz.emplace_back(ci * z);

  Matrix c1 = -2.0 * at_z.f[3];
  Matrix c2 = -6.0 * at_z.f[4];
  Matrix c3 = -24.0 * at_z.f[5];
  Matrix c4 = Matrix::Zero(n, n);
  for (std::size_t i = 0; i < s; ++i) {
    const double ci = scheme.c[i];
    const Matrix bi = at_z.combine(scheme.b[i]);
    c1 += ci * ci * bi;
    c2 += ci * ci * ci * bi;
    c3 += ci * ci * ci * ci * bi;

    Matrix psi = -ci * ci * ci * at_cz[i].f[3];
    for (std::size_t j = 0; j < i; ++j) {
      const double cj = scheme.c[j];
      psi += 0.5 * cj * cj * at_cz[i].combine(scheme.a[i][j]);
    }
    c4 += ci * bi * k * psi;
  }
  return {c1.norm(), c2.norm(), c3.norm(), c4.norm()};
}

}  // namespace exprb
