#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <tuple>

#include "exprb/integrators.hpp"
#include "test_support.hpp"

namespace exprb {
namespace {

using testing::rel_err;

Vector scalar(double x) { return Vector::Constant(1, x); }

double phi_ref(int k, double z) { return testing::phi_mp(k, z); }

// u' = u^2 with the analytic Jacobian; exact solution u0 / (1 - u0 t).
SemilinearProblem quadratic_problem() {
  SemilinearProblem p;
  p.dim = 1;
  p.rhs = [](const Vector& u) { return Vector(u.array().square()); };
  p.jacobian_at = [](const Vector& u) {
    return LinearOperator::from_dense(Matrix::Constant(1, 1, 2.0 * u(0)));
  };
  return p;
}

// u' = A u + sin(u) + b with symmetric negative definite A, so J_n is
// symmetric and small Krylov spaces become invariant.
struct StiffSine {
  Matrix a;
  Vector b;
  SemilinearProblem problem() const {
    SemilinearProblem p;
    p.dim = a.rows();
    p.rhs = [a = a, b = b](const Vector& u) { return Vector(a * u + u.array().sin().matrix() + b); };
    p.jacobian_at = [a = a](const Vector& u) {
      Matrix j = a;
      j.diagonal() += u.array().cos().matrix();
      return LinearOperator::from_dense(j);
    };
    return p;
  }
};

StiffSine make_stiff_sine(std::mt19937_64& rng, Index n, double norm) {
  Vector lambda(n);
  for (Index i = 0; i < n; ++i) lambda(i) = -1.0 - norm * static_cast<double>(i) / (n - 1);
  return {testing::spd_with_spectrum(rng, lambda), testing::random_vector(rng, n)};
}

TEST(Linearize, LinearProblemHasZeroRemainder) {
  std::mt19937_64 rng(1);
  const Matrix a = testing::random_matrix(rng, 5, 5);
  SemilinearProblem p;
  p.dim = 5;
  p.rhs = [a](const Vector& u) { return Vector(a * u); };
  p.jacobian_at = [a](const Vector&) { return LinearOperator::from_dense(a); };
  const auto frame = linearize(p, testing::random_vector(rng, 5));
  for (int i = 0; i < 5; ++i) EXPECT_EQ(frame.remainder(testing::random_vector(rng, 5)).norm(), 0.0);
}

TEST(Linearize, AffineProblemRemainderIsForcing) {
  std::mt19937_64 rng(2);
  const Matrix a = Matrix::Identity(4, 4) * 3.0;
  const Vector b = testing::random_vector(rng, 4);
  SemilinearProblem p;
  p.dim = 4;
  p.linear_part = LinearOperator::from_dense(a);
  p.nonlinearity = [b](const Vector&) { return b; };
  const auto frame = linearize(p, testing::random_vector(rng, 4));
  for (int i = 0; i < 3; ++i) {
    EXPECT_LT((frame.remainder(testing::random_vector(rng, 4)) - b).norm(), 1e-9);
  }
}

TEST(Linearize, QuadraticScalar) {
  const auto frame = linearize(quadratic_problem(), scalar(3.0));
  EXPECT_EQ(frame.jacobian(scalar(1.0))(0), 6.0);
  EXPECT_EQ(frame.remainder(scalar(5.0))(0), 25.0 - 30.0);
  const double eps = 1e-6;
  const double slope = (frame.remainder(scalar(3.0 + eps))(0) - frame.remainder(scalar(3.0))(0)) / eps;
  EXPECT_LT(std::abs(slope), 1e-5);
}

TEST(Linearize, FiniteDifferenceJacobianIsConsistent) {
  std::mt19937_64 rng(3);
  const StiffSine s = make_stiff_sine(rng, 8, 50.0);
  SemilinearProblem p = s.problem();
  const Vector u = testing::random_vector(rng, 8);
  const LinearOperator exact = p.jacobian_at(u);
  p.jacobian_at = nullptr;
  const auto frame = linearize(p, u);
  for (int i = 0; i < 5; ++i) {
    const Vector w = testing::random_vector(rng, 8);
    EXPECT_LT(rel_err(frame.jacobian(w), exact(w)), 1e-6);
  }
}

TEST(Linearize, RemainderJacobianVanishesAtBasePoint) {
  std::mt19937_64 rng(4);
  const StiffSine s = make_stiff_sine(rng, 10, 100.0);
  const auto p = s.problem();
  const double jac_norm = s.a.operatorNorm() + 1.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Vector u = testing::random_vector(rng, 10);
    Vector w = testing::random_vector(rng, 10);
    w.normalize();
    const auto frame = linearize(p, u);
    double prev = std::numeric_limits<double>::infinity();
    for (double eps : {1e-2, 1e-3, 1e-4}) {
      const double d = ((frame.remainder(u + eps * w) - frame.remainder(u)) / eps).norm();
      EXPECT_LE(d, 10.0 * eps * jac_norm);
      EXPECT_LT(d, prev);
      prev = d;
    }
  }
}

TEST(ExprbEuler, ExactOnScalarLinear) {
  SemilinearProblem p;
  p.dim = 1;
  p.rhs = [](const Vector& u) { return Vector(-7.0 * u); };
  p.jacobian_at = [](const Vector&) { return LinearOperator::from_dense(Matrix::Constant(1, 1, -7.0)); };
  PhiEvaluator ev;
  const auto r = step_exprb_euler(linearize(p, scalar(2.0)), 0.3, ev);
  EXPECT_NEAR(r.next(0), 2.0 * std::exp(-2.1), 1e-15);
}

TEST(ExprbEuler, ZeroFieldIsIdentity) {
  SemilinearProblem p;
  p.dim = 3;
  p.rhs = [](const Vector& u) { return Vector(Vector::Zero(u.size())); };
  PhiEvaluator ev;
  const Vector u = Vector::LinSpaced(3, 1.0, 3.0);
  EXPECT_EQ(step_exprb_euler(linearize(p, u), 0.5, ev).next, u);
}

TEST(ExprbEuler, QuadraticScalarStep) {
  PhiEvaluator ev;
  const auto r = step_exprb_euler(linearize(quadratic_problem(), scalar(1.0)), 0.1, ev);
  const double expected = 1.0 + 0.1 * std::expm1(0.2) / 0.2;
  EXPECT_NEAR(r.next(0), expected, 1e-14);
  EXPECT_NEAR(r.next(0), 1.110701, 1e-6);
}

TEST(Exprb42, QuadraticScalarStepMatchesFormula) {
  PhiEvaluator ev;
  const double h = 0.1, j = 2.0;
  const auto r = step_exprb42(linearize(quadratic_problem(), scalar(1.0)), h, ev, 1e-14);
  const double u2 = 1.0 + 0.75 * h * phi_dense(1, Matrix::Constant(1, 1, 0.75 * h * j))[0](0, 0);
  const double d2 = (u2 * u2 - j * u2) - (1.0 - j);
  const auto f = phi_dense(3, Matrix::Constant(1, 1, h * j));
  const double expected = 1.0 + h * f[0](0, 0) + h * (32.0 / 9.0) * f[2](0, 0) * d2;
  ASSERT_EQ(r.stages.size(), 1u);
  EXPECT_NEAR(r.stages[0](0), u2, 1e-13);
  EXPECT_NEAR(r.next(0), expected, 1e-12);
}

TEST(Pexprb43, QuadraticScalarStepMatchesFormula) {
  PhiEvaluator ev;
  const double h = 0.1, j = 2.0;
  const auto r = step_pexprb43(linearize(quadratic_problem(), scalar(1.0)), h, ev, 1e-14);
  auto g = [j](double x) { return x * x - j * x; };
  const double u2 = 1.0 + 0.5 * h * phi_ref(1, 0.5 * h * j);
  const double u3 = 1.0 + h * phi_ref(1, h * j);
  const double d2 = g(u2) - g(1.0), d3 = g(u3) - g(1.0);
  const double expected = u3 + h * phi_ref(3, h * j) * (16 * d2 - 2 * d3) +
                          h * phi_ref(4, h * j) * (-48 * d2 + 12 * d3);
  EXPECT_NEAR(r.next(0), expected, 1e-12);
}

TEST(Schemes, ExactOnAffineProblems) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 4; ++trial) {
    const Index n = 20;
    const StiffSine s = make_stiff_sine(rng, n, 1e3);
    const Matrix a = s.a + testing::random_skew(rng, n) * 50.0;
    const Vector b = s.b;
    SemilinearProblem p;
    p.dim = n;
    p.linear_part = LinearOperator::from_dense(a);
    p.nonlinearity = [b](const Vector&) { return b; };
    p.nonlinearity_jacobian = [n](const Vector&) { return LinearOperator::zero(n); };
    const Vector u = testing::random_vector(rng, n);
    const double h = 0.5 + trial;
    const std::vector<Vector> v{u, h * (a * u + b)};
    const Vector exact = u + phi_combination_dense(h * a, std::vector<Vector>{Vector::Zero(n), v[1]});

    PhiEvaluator ev;
    const auto frame = linearize(p, u);
    EXPECT_LT(rel_err(step_exprb_euler(frame, h, ev).next, exact), 1e-7);
    EXPECT_LT(rel_err(step_exprb42(frame, h, ev).next, exact), 1e-7);
    EXPECT_LT(rel_err(step_pexprb43(frame, h, ev).next, exact), 1e-7);
  }
}

TEST(Schemes, GenericMatchesDedicated) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const StiffSine s = make_stiff_sine(rng, 6, 1e3);
    const auto frame = linearize(s.problem(), testing::random_vector(rng, 6));
    const double h = 0.05 * (trial + 1);
    PhiEvaluator ev;
    EXPECT_LT(rel_err(step_generic(scheme_exprb_euler(), frame, h, ev, 1e-12).next,
                      step_exprb_euler(frame, h, ev, 1e-12).next),
              1e-12);
    EXPECT_LT(rel_err(step_generic(scheme_exprb42(), frame, h, ev, 1e-12).next,
                      step_exprb42(frame, h, ev, 1e-12).next),
              1e-12);
    EXPECT_LT(rel_err(step_generic(scheme_pexprb43(), frame, h, ev, 1e-12).next,
                      step_pexprb43(frame, h, ev, 1e-12).next),
              1e-12);
  }
}

TEST(Pexprb43, TwoCallFormMatchesNaiveFourCalls) {
  std::mt19937_64 rng(7);
  const Index n = 40;
  const StiffSine s = make_stiff_sine(rng, n, 1e3);
  const auto frame = linearize(s.problem(), testing::random_vector(rng, n));
  const double h = 0.1, tol = 1e-12;
  const Vector z = Vector::Zero(n);
  auto call = [&](double scale, std::vector<Vector> v) {
    PhiCombinationRequest req;
    req.op = frame.jacobian.scaled(scale * h);
    req.v = std::move(v);
    req.tol = tol;
    return phi_combination(req);
  };
  const Vector u2 = frame.u + call(0.5, {z, 0.5 * h * frame.f});
  const Vector u3 = frame.u + call(1.0, {z, h * frame.f});
  const Vector d2 = frame.remainder(u2) - frame.remainder(frame.u);
  const Vector d3 = frame.remainder(u3) - frame.remainder(frame.u);
  const Vector naive = frame.u + call(1.0, {z, h * frame.f}) +
                       call(1.0, {z, z, z, h * (16 * d2 - 2 * d3), h * (-48 * d2 + 12 * d3)});
  PhiEvaluator ev;
  EXPECT_LT(rel_err(step_pexprb43(frame, h, ev, tol).next, naive), 1e-10);
}

TEST(Schemes, RejectMalformedSpecs) {
  SchemeSpec bad = scheme_exprb42();
  bad.c[0] = 1.5;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = scheme_pexprb43();
  bad.b[0].push_back({6, 1.0});
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = scheme_pexprb43();
  bad.a.pop_back();
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

// Local error of one step from u0 = 3 on u' = u^2 (exact solution known).
double local_order(ExpScheme scheme) {
  PhiEvaluator ev;
  const auto p = quadratic_problem();
  const auto frame = linearize(p, scalar(3.0));
  std::vector<double> hs, errs;
  for (double h = 1e-1; h > 0.9e-3; h /= std::sqrt(10.0)) {
    StepResult r;
    if (scheme == ExpScheme::Euler) r = step_exprb_euler(frame, h, ev, 1e-14);
    if (scheme == ExpScheme::Exprb42) r = step_exprb42(frame, h, ev, 1e-14);
    if (scheme == ExpScheme::Pexprb43) r = step_pexprb43(frame, h, ev, 1e-14);
    hs.push_back(h);
    errs.push_back(std::abs(r.next(0) - 3.0 / (1.0 - 3.0 * h)));
  }
  return testing::loglog_slope(hs, errs);
}

TEST(Schemes, LocalErrorOrder) {
  EXPECT_GE(local_order(ExpScheme::Exprb42), 4.7);
  EXPECT_GE(local_order(ExpScheme::Pexprb43), 4.7);
  EXPECT_NEAR(local_order(ExpScheme::Euler), 3.0, 0.3);
}

TEST(OrderConditions, SelectedSchemes) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    Matrix z = testing::random_matrix(rng, 5, 5);
    z *= (1.0 + trial) / z.norm();
    const Matrix k = testing::random_matrix(rng, 5, 5);
    const auto p43 = verify_order_conditions(scheme_pexprb43(), z, k);
    EXPECT_LT(p43[0], 1e-12);
    EXPECT_LT(p43[1], 1e-12);
    EXPECT_GT(p43[2], 1e-3);  // order 4, not 5
    const auto e42 = verify_order_conditions(scheme_exprb42(), z, k);
    EXPECT_LT(e42[0], 1e-12);
    EXPECT_GT(e42[1], 1e-3);
    const auto euler = verify_order_conditions(scheme_exprb_euler(), z, k);
    EXPECT_GT(euler[0], 0.1);  // order 2 only
    EXPECT_EQ(euler[3], 0.0);
  }
}

TEST(OrderConditions, DetectsPerturbedWeight) {
  std::mt19937_64 rng(9);
  const Matrix z = testing::random_matrix(rng, 5, 5);
  SchemeSpec corrupted = scheme_pexprb43();
  corrupted.b[1][0].coeff += 1e-3;
  const auto r = verify_order_conditions(corrupted, z, Matrix::Identity(5, 5));
  // The perturbation adds 1e-3 * phi_3(Z) to condition 1.
  const double expected = 1e-3 * phi_dense(3, z)[2].norm();
  EXPECT_NEAR(r[0], expected, 1e-12);
  EXPECT_GT(r[0], 1e-4);
}

TEST(OrderConditions, RejectsMismatchedSizes) {
  EXPECT_THROW(verify_order_conditions(scheme_exprb42(), Matrix::Zero(3, 3), Matrix::Zero(2, 2)),
               InvalidArgument);
}

TEST(Integrate, ZeroLengthReturnsInitialState) {
  const StepFunction never = [](const Vector&, double, KrylovStats*) -> Vector {
    ADD_FAILURE() << "stepper called";
    return {};
  };
  const auto traj = integrate(never, scalar(1.0), 2.0, 2.0, 0.1);
  ASSERT_EQ(traj.u.size(), 1u);
  EXPECT_EQ(traj.steps, 0);
}

TEST(Integrate, ClipsLastStepAndLandsOnEnd) {
  std::vector<double> sizes;
  const StepFunction record = [&](const Vector& u, double h, KrylovStats*) {
    sizes.push_back(h);
    return u;
  };
  const auto traj = integrate(record, scalar(1.0), 0.0, 1.0, 0.3);
  ASSERT_EQ(sizes.size(), 4u);
  EXPECT_NEAR(sizes.back(), 0.1, 1e-15);
  EXPECT_EQ(traj.t.back(), 1.0);

  sizes.clear();
  integrate(record, scalar(1.0), 0.0, 1.0, 0.1);
  EXPECT_EQ(sizes.size(), 10u);
}

TEST(Integrate, ObserverSeesEveryStep) {
  int calls = 0;
  const StepFunction id = [](const Vector& u, double, KrylovStats*) { return u; };
  const auto traj = integrate(id, scalar(1.0), 0.0, 1.0, 0.25,
                              [&](double, const Vector&, const KrylovStats&) { ++calls; }, false);
  EXPECT_EQ(calls, 5);
  EXPECT_EQ(traj.u.size(), 2u);
}

TEST(Integrate, ReportsNonFiniteStep) {
  const StepFunction blowup = [](const Vector& u, double, KrylovStats*) {
    return Vector(u * 1e200);
  };
  try {
    integrate(blowup, scalar(1.0), 0.0, 10.0, 1.0);
    FAIL() << "expected NonFiniteState";
  } catch (const NonFiniteState& e) {
    EXPECT_EQ(e.step(), 2);
    EXPECT_EQ(e.time(), 2.0);
  }
}

TEST(Integrate, LinearProblemMatchesExponential) {
  std::mt19937_64 rng(10);
  const Index n = 16;
  const Matrix a = testing::random_skew(rng, n) * 20.0 - Matrix::Identity(n, n);
  SemilinearProblem p;
  p.dim = n;
  p.rhs = [a](const Vector& u) { return Vector(a * u); };
  p.jacobian_at = [a](const Vector&) { return LinearOperator::from_dense(a); };
  const Vector u0 = testing::random_vector(rng, n);
  const Vector exact = expm(1.3 * a) * u0;
  for (auto scheme : {ExpScheme::Euler, ExpScheme::Exprb42, ExpScheme::Pexprb43}) {
    const auto traj = integrate(make_exponential_stepper(p, scheme, 1e-10), u0, 0.0, 1.3, 0.37);
    EXPECT_LT(rel_err(traj.u.back(), exact), 1e-8);
    EXPECT_GT(traj.stats.operator_applications, 0);
  }
}

// Dissipative stiff problem started on its slow manifold (after a relaxation
// run), so the solution is smooth and the global error shows the scheme order.
// The order-4 schemes lose a fraction of an order here (measured ~3.7 down to
// h = 1/160), hence the looser bound than on the oscillator benchmark.
TEST(Integrate, GlobalOrderOnStiffProblem) {
  std::mt19937_64 rng(11);
  const Index n = 30;
  Vector lambda(n);
  for (Index i = 0; i < n; ++i) lambda(i) = -0.1 - 1e4 * std::pow(static_cast<double>(i) / (n - 1), 2);
  const Matrix q = testing::random_orthogonal(rng, n);
  StiffSine s{q * lambda.asDiagonal() * q.transpose(), testing::random_vector(rng, n)};
  s.a = 0.5 * (s.a + s.a.transpose());
  const auto p = s.problem();
  auto run = [&](ExpScheme scheme, const Vector& u0, double t, double h) {
    return integrate(make_exponential_stepper(p, scheme, 1e-13), u0, 0.0, t, h, {}, false)
        .u.back();
  };
  Vector u0 = 5.0 * q.col(0) + 3.0 * q.col(1) + 2.0 * q.col(2);
  u0 = run(ExpScheme::Exprb42, u0, 2.0, 1e-3);

  const Vector ref = run(ExpScheme::Exprb42, u0, 1.0, 1.0 / 640);
  for (auto [scheme, lo, hi] : {std::tuple{ExpScheme::Exprb42, 3.5, 4.3},
                                std::tuple{ExpScheme::Pexprb43, 3.5, 4.3},
                                std::tuple{ExpScheme::Euler, 1.8, 2.3}}) {
    std::vector<double> hs, errs;
    for (double h : {1.0 / 5, 1.0 / 10, 1.0 / 20, 1.0 / 40}) {
      hs.push_back(h);
      errs.push_back(rel_err(run(scheme, u0, 1.0, h), ref));
    }
    const double slope = testing::loglog_slope(hs, errs);
    EXPECT_GE(slope, lo);
    EXPECT_LE(slope, hi);
  }
}

}  // namespace
}  // namespace exprb
