#pragma once

// Exponential Rosenbrock steppers. Each step linearizes F at u_n,
//
//   F(u) = J_n u + g_n(u),   g_n(u) = F(u) - J_n u,
//
// treats J_n exactly through phi-function combinations and the remainder
// g_n explicitly.

#include <array>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "exprb/krylov.hpp"
#include "exprb/linear_operator.hpp"

namespace exprb {

using VectorField = std::function<Vector(const Vector&)>;
using JacobianProvider = std::function<LinearOperator(const Vector&)>;

/// u' = F(u). Either `rhs` is given, or the split F = linear_part u + nonlinearity(u).
/// Jacobians fall back to forward differences when no provider is given.
struct SemilinearProblem {
  Index dim = 0;
  VectorField rhs;
  JacobianProvider jacobian_at;

  LinearOperator linear_part;
  VectorField nonlinearity;
  JacobianProvider nonlinearity_jacobian;

  Vector eval(const Vector& u) const;
  bool has_split() const { return static_cast<bool>(linear_part) && static_cast<bool>(nonlinearity); }
};

/// Matrix-free forward-difference directional derivative of f at u.
LinearOperator finite_difference_jacobian(VectorField f, const Vector& u, Vector fu);

struct LinearizationFrame {
  Vector u;  // u_n
  Vector f;  // F(u_n)
  LinearOperator jacobian;
  VectorField rhs;

  /// g_n(x) = F(x) - J_n x
  Vector remainder(const Vector& x) const;
  /// g_n(x) - g_n(u_n), formed without cancelling the two F(u_n) terms.
  Vector remainder_increment(const Vector& x) const;
};

LinearizationFrame linearize(const SemilinearProblem& problem, const Vector& u);

struct StepResult {
  Vector next;
  std::vector<Vector> stages;  // U_{n2} .. U_{ns}
  KrylovStats stats;
};

/// a_ij or b_i as sum coeff * phi_k(.)
struct PhiWeight {
  int k = 1;
  double coeff = 0.0;
};
using PhiWeights = std::vector<PhiWeight>;

/// s-stage scheme. c[i] and b[i] belong to stage i + 2; a[i][j] couples
/// stage i + 2 to D_{n,j+2} (j < i) and is evaluated at c_i h J_n.
struct SchemeSpec {
  std::string name;
  std::vector<double> c;
  std::vector<std::vector<PhiWeights>> a;
  std::vector<PhiWeights> b;

  int stages() const { return static_cast<int>(c.size()) + 1; }
  void validate() const;
};

SchemeSpec scheme_exprb_euler();
SchemeSpec scheme_exprb42();
SchemeSpec scheme_pexprb43();

StepResult step_exprb_euler(const LinearizationFrame& frame, double h, PhiEvaluator& ev,
                            double tol = 1e-8);
StepResult step_exprb42(const LinearizationFrame& frame, double h, PhiEvaluator& ev,
                        double tol = 1e-8);
StepResult step_pexprb43(const LinearizationFrame& frame, double h, PhiEvaluator& ev,
                         double tol = 1e-8);
StepResult step_generic(const SchemeSpec& scheme, const LinearizationFrame& frame, double h,
                        PhiEvaluator& ev, double tol = 1e-8);

/// Frobenius norms of the residuals of the four stiff order conditions
///   1. sum b_i c_i^2 = 2 phi_3(Z)
///   2. sum b_i c_i^3 = 6 phi_4(Z)
///   3. sum b_i c_i^4 = 24 phi_5(Z)
///   4. sum b_i c_i K psi_{3,i}(Z) = 0,
///      psi_{3,i} = sum_k a_ik c_k^2 / 2 - c_i^3 phi_3(c_i Z).
std::array<double, 4> verify_order_conditions(const SchemeSpec& scheme, const Matrix& z,
                                              const Matrix& k);

// Fixed-step driver ---------------------------------------------------------

class NonFiniteState : public std::runtime_error {
 public:
  NonFiniteState(long step, double t)
      : std::runtime_error("non-finite state at step " + std::to_string(step) + " (t = " +
                           std::to_string(t) + ")"),
        step_(step),
        t_(t) {}
  long step() const { return step_; }
  double time() const { return t_; }

 private:
  long step_;
  double t_;
};

/// One step u -> u_next of size h; may add Krylov counters to `stats`.
using StepFunction = std::function<Vector(const Vector& u, double h, KrylovStats* stats)>;
using Observer = std::function<void(double t, const Vector& u, const KrylovStats& step)>;

struct Trajectory {
  std::vector<double> t;
  std::vector<Vector> u;  // every state when stored, else only first and last
  KrylovStats stats;
  long steps = 0;
};

/// Steps from t0 to t_end with step h, clipping the last step. The observer
/// sees the initial state and every step.
Trajectory integrate(const StepFunction& step, const Vector& u0, double t0, double t_end,
                     double h, const Observer& observer = {}, bool store = true);

enum class ExpScheme { Euler, Exprb42, Pexprb43 };

/// Wraps linearize + the dedicated stepper. The returned function owns its evaluator.
StepFunction make_exponential_stepper(SemilinearProblem problem, ExpScheme scheme,
                                      double tol = 1e-8, KrylovOptions opts = {});

}  // namespace exprb
