#pragma once

// Classical comparison integrators: RK4, BDF-1 (implicit Euler with Newton +
// restarted GMRES), velocity Verlet, and a first-order IMEX splitting
// (backward Euler on the skew part, forward Euler on G). The splitting is
// not a variational IMEX integrator.

#include <functional>
#include <map>
#include <memory>

#include <Eigen/Cholesky>

#include "exprb/integrators.hpp"
#include "exprb/oscillators.hpp"

namespace exprb {

Vector rk4_step(const VectorField& f, const Vector& u, double h);

struct GmresResult {
  Vector x;
  int iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
};

/// Restarted GMRES(restart) for A x = b from x0 = 0, stopping at ||b - A x|| <= rtol ||b||.
GmresResult gmres(const LinearOperator& a, const Vector& b, double rtol, int restart,
                  int max_iterations);

struct NewtonConfig {
  double atol = 1e-10;
  double rtol = 1e-8;
  int max_iterations = 25;
  double linear_rtol = 1e-10;
  int linear_restart = 100;
  int linear_max_iterations = 5000;
};

struct Bdf1Stats {
  int newton_iterations = 0;
  long linear_iterations = 0;
};

/// Solves w = u + h F(w); Newton stops when ||dw|| <= atol + rtol ||w||.
/// Throws NumericalError when Newton or GMRES fails to converge.
Vector bdf1_step(const SemilinearProblem& problem, const Vector& u, double h,
                 const NewtonConfig& cfg = {}, Bdf1Stats* stats = nullptr);

using Acceleration = std::function<Vector(const Vector& x, const Vector& v)>;

/// Kick-drift-kick. A velocity-dependent acceleration sees the velocity at
/// the start of each half kick.
void verlet_step(const Acceleration& acc, Vector& x, Vector& v, double h);

/// u+ = (I - h 𝒜)^{-1} (u + h G(u)), solved through the Cholesky factor of
/// I + h^2 A_w. Factors are cached per step size.
class ImexSplitting {
 public:
  explicit ImexSplitting(std::shared_ptr<const StiffFirstOrderForm> form);
  Vector step(const Vector& u, double h);
  /// (I - h 𝒜)^{-1} r.
  Vector implicit_solve(const Vector& r, double h);

 private:
  std::shared_ptr<const StiffFirstOrderForm> form_;
  std::map<double, std::shared_ptr<Eigen::LLT<Matrix>>> factors_;
};

StepFunction make_rk4_stepper(SemilinearProblem problem);
StepFunction make_bdf1_stepper(SemilinearProblem problem, NewtonConfig cfg = {});
/// Verlet on the plain (x, v) view of the form, exposed in u coordinates.
StepFunction make_verlet_stepper(std::shared_ptr<const StiffFirstOrderForm> form);
StepFunction make_imex_stepper(std::shared_ptr<const StiffFirstOrderForm> form);

}  // namespace exprb
