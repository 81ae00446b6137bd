#pragma once

// Adaptive Krylov evaluation of phi-function linear combinations
//
//   phi_0(M) v_0 + phi_1(M) v_1 + ... + phi_p(M) v_p
//
// for an operator M. The combination is the value at t = 1 of
//
//   u'(t) = M u(t) + v_1 + t v_2 + ... + t^{p-1}/(p-1)! v_p,   u(0) = v_0,
//
// which is integrated over adaptively chosen substeps. Each substep needs a
// single phi_p action, approximated in a Krylov space built by Arnoldi with
// incomplete (depth-2) orthogonalization. Several output times c_k in (0, 1]
// can be requested in one pass; substeps are forced to end on them exactly.

#include <span>
#include <vector>

#include "exprb/linear_operator.hpp"
#include "exprb/matfunc.hpp"

namespace exprb {

/// Number of previous basis vectors each new Arnoldi vector is orthogonalized against.
inline constexpr int kOrthogonalizationDepth = 2;

/// Krylov decomposition M V_m = V_m H_m + h_{m+1,m} v_{m+1} e_m^T built by IOM2.
/// `vectors` holds m + 1 columns (m after a breakdown); `h` is (m+1) x m.
struct KrylovBasis {
  std::vector<Vector> vectors;
  Matrix h;
  double beta = 0.0;       // norm of the starting vector
  bool breakdown = false;  // the space is invariant under M
  int operator_applications = 0;

  int dim() const { return static_cast<int>(h.cols()); }
};

/// Builds (or extends) an IOM2 basis for span{v, Mv, ...} up to m_max vectors.
KrylovBasis iom2_arnoldi(const LinearOperator& m, const Vector& v, int m_max);
void iom2_extend(KrylovBasis& basis, const LinearOperator& m, int m_max);

struct KrylovStats {
  int substeps = 0;
  std::vector<int> dims;  // Krylov dimension of each accepted substep
  long operator_applications = 0;
  long skipped_applications = 0;  // products avoided because w_{j-1} == 0
  int rejected = 0;
  // Largest |<v_1, v_m>| seen; IOM2 does not keep the basis orthonormal and
  // this exposes how far it drifted.
  double max_orthogonality_loss = 0.0;

  void merge(const KrylovStats& other);
  int max_dim() const;
};

struct KrylovOptions {
  int m_init = 10;
  int m_max = 128;
  double tau_init = 1.0;
  double tau_floor = 1e-10;
  int max_substeps = 200000;
  bool skip_zero_products = true;
};

struct PhiCombinationRequest {
  LinearOperator op;
  std::vector<Vector> v;              // v_0 .. v_p
  std::vector<double> scales{1.0};    // strictly increasing, in (0, 1]
  double tol = 1e-8;
};

struct PhiResult {
  std::vector<Vector> outputs;  // u(c_k) for every requested scale
  KrylovStats stats;
};

/// The substep recurrence
///   w_j = M w_{j-1} + sum_{l=0}^{p-j} t^l / l! v_{j+l},  j = 1..p,
/// on w[0] = u(t). Resizes w to p + 1. When skip_zero is set, products with
/// an exactly zero w_{j-1} are not formed. Returns the number of operator
/// applications performed; `skipped` (if given) counts the avoided ones.
int substep_recurrence(const LinearOperator& m, std::span<const Vector> v, double t,
                       std::vector<Vector>& w, bool skip_zero, int* skipped = nullptr);

struct AdaptDecision {
  bool accepted = false;
  double tau_next = 0.0;
  int m_next = 0;
};

/// Step-size / dimension controller. `omega` is the error estimate divided
/// by its allowance tol * tau (so the substep is accepted when omega <= 1);
/// `order` is the exponent used in the step-size update.
AdaptDecision adapt(double omega, double tau, int m, int p, int order, int m_cap);

/// Owns the evaluation workspace; not shareable across threads during a call.
class PhiEvaluator {
 public:
  explicit PhiEvaluator(KrylovOptions opts = {}) : opts_(opts) {}

  const KrylovOptions& options() const { return opts_; }
  KrylovOptions& options() { return opts_; }

  PhiResult evaluate(const PhiCombinationRequest& req);

 private:
  KrylovOptions opts_;
  std::vector<Vector> w_;
};

/// sum_k phi_k(M) v_k (the request's scales must be {1}).
Vector phi_combination(const PhiCombinationRequest& req, const KrylovOptions& opts = {},
                       KrylovStats* stats = nullptr);

/// u(c) for each requested scale c; u(c) = sum_k c^k phi_k(c M) v_k.
std::vector<Vector> phi_combination_multi(const PhiCombinationRequest& req,
                                          const KrylovOptions& opts = {},
                                          KrylovStats* stats = nullptr);

}  // namespace exprb
