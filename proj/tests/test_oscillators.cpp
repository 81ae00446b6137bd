#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "exprb/oscillators.hpp"
#include "test_support.hpp"

namespace exprb {
namespace {

using testing::rel_err;

// Newton's law summed spring by spring, per particle (fixed particles included).
std::vector<Vec3> direct_forces(const ParticleSystem& sys, const std::vector<Vec3>& x,
                                const std::vector<Vec3>& v) {
  std::vector<Vec3> f(sys.size(), Vec3::Zero());
  for (const Spring& s : sys.springs) {
    const Vec3 d = x[s.i] - x[s.j];
    const double len = d.norm();
    const Vec3 fi = -s.k * (len - s.rest) * d / len;
    f[s.i] += fi;
    f[s.j] -= fi;
  }
  for (int p = 0; p < sys.size(); ++p) {
    f[p] += sys.mass[p] * sys.external.gravity - sys.external.drag * v[p];
  }
  return f;
}

std::vector<Vec3> jitter(std::mt19937_64& rng, std::vector<Vec3> x, double amp,
                         const std::vector<bool>& fixed) {
  std::uniform_real_distribution<double> ud(-amp, amp);
  for (std::size_t p = 0; p < x.size(); ++p)
    if (!fixed[p]) x[p] += Vec3(ud(rng), ud(rng), ud(rng));
  return x;
}

// Lattice with unequal masses, gravity and the x = 0 face fixed.
ParticleSystem irregular_lattice(std::mt19937_64& rng) {
  LatticeOptions o;
  o.nx = 3;
  o.ny = 2;
  o.nz = 2;
  o.k_struct = 400.0;
  o.k_diag = 150.0;
  o.fix_x0_face = true;
  ParticleSystem sys = scene_lattice(o);
  std::uniform_real_distribution<double> ud(0.5, 2.0);
  for (auto& m : sys.mass) m = ud(rng);
  sys.external.gravity = Vec3(0.0, 0.0, -9.81);
  return sys;
}

std::shared_ptr<const AssembledSystem> assemble(const ParticleSystem& sys,
                                                SqrtMethod method = SqrtMethod::Auto) {
  return std::make_shared<const AssembledSystem>(sys, method);
}

TEST(Assemble, SingleAnchoredParticle) {
  ParticleSystem sys;
  sys.add_particle(1.0, Vec3::Zero(), Vec3::Zero(), true);
  sys.add_particle(1.0, Vec3(0.3, -0.2, 0.5));
  sys.add_spring(0, 1, 50.0, 0.0);
  const AssembledSystem a(sys);
  EXPECT_LT((Matrix(a.a_plain()) - 50.0 * Matrix::Identity(3, 3)).norm(), 1e-14);
  const Vector x = Vector::Random(3);
  EXPECT_EQ(a.g(x, Vector::Zero(3)).norm(), 0.0);
}

TEST(Assemble, UnanchoredSceneIsRejected) {
  ParticleSystem sys;
  sys.add_particle(1.0, Vec3::Zero());
  sys.add_particle(1.0, Vec3::UnitX());
  sys.add_spring(0, 1, 10.0, 0.0);
  EXPECT_THROW(AssembledSystem{sys}, InvalidScene);
  sys.fixed[0] = true;
  EXPECT_NO_THROW(AssembledSystem{sys});
}

TEST(Assemble, RejectsInvalidScenes) {
  ParticleSystem sys = scene_chain(3, 10.0, 1.0, 1.0, ChainEnds::First);
  sys.springs[0].k = -1.0;
  EXPECT_THROW(AssembledSystem{sys}, InvalidScene);
  sys = scene_chain(3, 10.0, 1.0, 1.0, ChainEnds::First);
  sys.springs[1].j = 7;
  EXPECT_THROW(AssembledSystem{sys}, InvalidScene);
  sys = scene_chain(3, 10.0, 1.0, 1.0, ChainEnds::First);
  sys.mass[2] = 0.0;
  EXPECT_THROW(AssembledSystem{sys}, InvalidScene);
  sys = scene_chain(2, 10.0, 1.0, 1.0, ChainEnds::First);
  sys.fixed[1] = true;
  EXPECT_THROW(AssembledSystem{sys}, InvalidScene);  // no free DOFs
}

TEST(Assemble, TwoParticleLaplacianBlocks) {
  ParticleSystem sys;
  sys.add_particle(1.0, Vec3::Zero(), Vec3::Zero(), true);
  sys.add_particle(1.0, Vec3::UnitX());
  sys.add_particle(1.0, 2.0 * Vec3::UnitX());
  sys.add_spring(0, 1, 3.0, 0.0);
  sys.add_spring(1, 2, 5.0, 0.0);
  const Matrix k = Matrix(AssembledSystem(sys).stiffness());
  EXPECT_EQ(k(0, 0), 8.0);
  EXPECT_EQ(k(0, 3), -5.0);
  EXPECT_EQ(k(3, 0), -5.0);
  EXPECT_EQ(k(3, 3), 5.0);
  EXPECT_EQ(k(0, 1), 0.0);
}

TEST(Assemble, SplitReproducesDirectForcesOnChain) {
  std::mt19937_64 rng(1);
  const ParticleSystem sys = scene_chain(3, 100.0, 1.0, 1.0, ChainEnds::First);
  const AssembledSystem a(sys);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = jitter(rng, sys.position, 0.4, sys.fixed);
    const auto f = direct_forces(sys, x, sys.velocity);
    std::vector<Vec3> acc(f.size());
    for (std::size_t p = 0; p < f.size(); ++p) acc[p] = f[p] / sys.mass[p];
    const Vector xv = a.gather(x);
    EXPECT_LT(rel_err(a.acceleration(xv, Vector::Zero(a.dofs())), a.gather(acc)), 1e-12);
  }
}

TEST(Assemble, SplitReproducesDirectForcesOnIrregularLattice) {
  std::mt19937_64 rng(2);
  ParticleSystem sys = irregular_lattice(rng);
  sys.external.drag = 0.3;
  const AssembledSystem a(sys);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = jitter(rng, sys.position, 0.2, sys.fixed);
    const auto v = jitter(rng, sys.velocity, 1.0, sys.fixed);
    const auto f = direct_forces(sys, x, v);
    std::vector<Vec3> acc(f.size());
    for (std::size_t p = 0; p < f.size(); ++p) acc[p] = f[p] / sys.mass[p];
    EXPECT_LT(rel_err(a.acceleration(a.gather(x), a.gather(v)), a.gather(acc)), 1e-12);
  }
}

TEST(Assemble, SquareRootRoutesAgree) {
  std::mt19937_64 rng(3);
  const ParticleSystem sys = irregular_lattice(rng);
  const AssembledSystem schur(sys, SqrtMethod::Schur), newton(sys, SqrtMethod::Newton);
  EXPECT_LT(rel_err(schur.omega().matrix(), newton.omega().matrix()), 1e-9);
  const Matrix& om = schur.omega().matrix();
  EXPECT_LT(rel_err(om * om, schur.a_weighted().matrix()), 1e-10);
}

TEST(FirstOrder, StateRoundTrip) {
  std::mt19937_64 rng(4);
  const StiffFirstOrderForm form(assemble(irregular_lattice(rng)));
  const Index d = form.assembled().dofs();
  for (int trial = 0; trial < 5; ++trial) {
    const Vector x = testing::random_vector(rng, d), v = testing::random_vector(rng, d);
    Vector x2, v2;
    form.from_state(form.to_state(x, v), x2, v2);
    EXPECT_LT(rel_err(x2, x), 1e-12);
    EXPECT_LT(rel_err(v2, v), 1e-14);
  }
  Vector u0 = form.to_state(Vector::Zero(d), Vector::Zero(d));
  EXPECT_EQ(u0.norm(), 0.0);
}

TEST(FirstOrder, SkewOperatorStructure) {
  std::mt19937_64 rng(5);
  const StiffFirstOrderForm form(assemble(irregular_lattice(rng)));
  const Index n = form.dim(), d = n / 2;
  const LinearOperator op = form.skew_operator();
  const Matrix& aw = form.assembled().a_weighted().matrix();
  for (int trial = 0; trial < 10; ++trial) {
    const Vector u = testing::random_vector(rng, n), w = testing::random_vector(rng, n);
    const Vector au = op(u), aw_ = op(w);
    EXPECT_LT(std::abs(au.dot(u)), 1e-12 * au.norm() * u.norm());
    // J = [[0, I], [-I, 0]]; <J A u, w> = <u, J A w>.
    auto j = [d](const Vector& z) {
      Vector out(z.size());
      out.head(d) = z.tail(d);
      out.tail(d) = -z.head(d);
      return out;
    };
    const double lhs = j(au).dot(w), rhs = u.dot(j(aw_));
    EXPECT_LT(std::abs(lhs - rhs), 1e-12 * au.norm() * w.norm());
    // A^2 (w1, w2) = -(A w1, A w2).
    Vector expect(n);
    expect.head(d) = -aw * u.head(d);
    expect.tail(d) = -aw * u.tail(d);
    EXPECT_LT(rel_err(op(au), expect), 1e-10);
  }
}

TEST(FirstOrder, EigenvaluesArePureImaginaryPairs) {
  std::mt19937_64 rng(6);
  const StiffFirstOrderForm form(assemble(irregular_lattice(rng)));
  const Index n = form.dim();
  Matrix dense(n, n);
  const LinearOperator op = form.skew_operator();
  for (Index c = 0; c < n; ++c) dense.col(c) = op(Vector(Vector::Unit(n, c)));
  Eigen::EigenSolver<Matrix> es(dense, false);
  const auto ev = es.eigenvalues();
  const double scale = ev.cwiseAbs().maxCoeff();
  std::vector<double> pos, neg;
  for (Index i = 0; i < n; ++i) {
    EXPECT_LT(std::abs(ev(i).real()), 1e-8 * scale);
    (ev(i).imag() > 0 ? pos : neg).push_back(std::abs(ev(i).imag()));
  }
  ASSERT_EQ(pos.size(), neg.size());
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  for (std::size_t i = 0; i < pos.size(); ++i) EXPECT_NEAR(pos[i], neg[i], 1e-8 * scale);
}

TEST(FirstOrder, NonlinearJacobianIsSymmetric) {
  std::mt19937_64 rng(7);
  const ParticleSystem sys = irregular_lattice(rng);
  const AssembledSystem a(sys);
  const auto x = a.gather(jitter(rng, sys.position, 0.2, sys.fixed));
  const Vector ism = a.mass().cwiseSqrt().cwiseInverse();
  const Matrix gp = ism.asDiagonal() * Matrix(a.rest_length_jacobian(x)) * ism.asDiagonal();
  EXPECT_LT((gp - gp.transpose()).norm(), 1e-10 * gp.norm());
}

TEST(FirstOrder, JacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  ParticleSystem sys = irregular_lattice(rng);
  sys.external.drag = 0.2;
  const StiffFirstOrderForm form(assemble(sys));
  const Index d = form.assembled().dofs();
  const Vector u = form.to_state(form.assembled().gather(jitter(rng, sys.position, 0.2, sys.fixed)),
                                 testing::random_vector(rng, d));
  Vector w = testing::random_vector(rng, form.dim());
  w *= u.norm() / w.norm();
  const Vector jw = form.jacobian_action(u, w);
  std::vector<double> eps, err;
  for (double e = 1e-7; e <= 1.01e-3; e *= 10.0) {
    eps.push_back(e);
    err.push_back(((form.rhs(u + e * w) - form.rhs(u)) / e - jw).norm());
  }
  EXPECT_NEAR(testing::loglog_slope(eps, err), 1.0, 0.15);
  EXPECT_LT(err.front(), 1e-5 * jw.norm());
}

TEST(FirstOrder, LinearForcesGiveSkewJacobian) {
  std::mt19937_64 rng(9);
  ParticleSystem sys = scene_chain(5, 80.0, 0.0, 1.5, ChainEnds::Both);
  sys.external.gravity = Vec3(0, -9.81, 0);
  const StiffFirstOrderForm form(assemble(sys));
  const Vector u = testing::random_vector(rng, form.dim());
  const LinearOperator skew = form.skew_operator();
  for (int trial = 0; trial < 3; ++trial) {
    const Vector w = testing::random_vector(rng, form.dim());
    EXPECT_EQ(form.jacobian_action(u, w), skew(w));
  }
  // w in the first block only: result is (0, -Omega w1).
  Vector w = Vector::Zero(form.dim());
  w.head(form.dim() / 2) = testing::random_vector(rng, form.dim() / 2);
  const Vector jw = form.jacobian_action(u, w);
  EXPECT_EQ(jw.head(form.dim() / 2).norm(), 0.0);
}

TEST(FirstOrder, RightHandSideAtRestIsGravityOnly) {
  ParticleSystem sys = scene_chain(4, 80.0, 0.0, 2.0, ChainEnds::First);
  sys.position[0] = Vec3::Zero();
  sys.external.gravity = Vec3(0, 0, -9.81);
  const StiffFirstOrderForm form(assemble(sys));
  const Index d = form.assembled().dofs();
  const Vector u0 = form.to_state(Vector::Zero(d), Vector::Zero(d));
  const Vector f = form.rhs(u0);
  EXPECT_EQ(f.head(d).norm(), 0.0);
  for (Index i = 0; i < d; ++i) EXPECT_NEAR(f(d + i), i % 3 == 2 ? -9.81 * std::sqrt(2.0) : 0.0, 1e-12);
}

TEST(Energy, Examples) {
  const ParticleSystem sys = scene_chain(4, 50.0, 0.5, 1.0, ChainEnds::First);
  const StiffFirstOrderForm form(assemble(sys));
  EXPECT_NEAR(form.energy(form.initial_state()).total, 0.0, 1e-12);

  ParticleSystem one;
  one.add_particle(1.0, Vec3::Zero(), Vec3::Zero(), true);
  one.add_particle(2.0, Vec3::UnitX(), Vec3(0.0, 3.0, 0.0));
  one.add_spring(0, 1, 10.0, 1.0);
  const StiffFirstOrderForm f1(assemble(one));
  const EnergyReport e = f1.energy(f1.initial_state());
  EXPECT_NEAR(e.kinetic, 9.0, 1e-12);
  EXPECT_NEAR(e.potential, 0.0, 1e-12);
}

TEST(Energy, ExactFlowConservesEnergy) {
  ChainOptions o;
  o.n = 6;
  o.k = 200.0;
  o.rest = 0.5;
  o.mass = 0.5;
  o.spacing = 0.6;
  ParticleSystem sys = scene_chain(o);
  sys.external.gravity = Vec3(0, 0, -9.81);
  const StiffFirstOrderForm form(assemble(sys));
  const Vector u0 = form.initial_state();
  const double e0 = form.energy(u0).total;
  double worst = 0.0;
  integrate(make_exponential_stepper(form.problem(), ExpScheme::Exprb42, 1e-12), u0, 0.0, 10.0,
            1e-3, [&](double, const Vector& u, const KrylovStats&) {
              worst = std::max(worst, std::abs(form.energy(u).total - e0));
            },
            false);
  EXPECT_LT(worst / std::abs(e0), 1e-6);
}

TEST(Scenes, Counts) {
  const ParticleSystem c = scene_chain(2, 10.0, 1.0, 1.0, ChainEnds::First);
  EXPECT_EQ(c.size(), 2);
  EXPECT_EQ(c.springs.size(), 1u);
  EXPECT_EQ(AssembledSystem(c).free_particles().size(), 1u);

  LatticeOptions o;
  const ParticleSystem l = scene_lattice(o);
  EXPECT_EQ(l.size(), 4);
  int structural = 0, diagonal = 0;
  for (const auto& s : l.springs) (std::abs(s.rest - 1.0) < 1e-12 ? structural : diagonal)++;
  EXPECT_EQ(structural, 4);
  EXPECT_EQ(diagonal, 2);

  o.nz = 2;
  EXPECT_EQ(scene_lattice(o).springs.size(), 12u + 12u);
  EXPECT_THROW(scene_chain(1, 1.0, 1.0, 1.0, ChainEnds::First), InvalidScene);
}

TEST(Scenes, HangingChainStaticSag) {
  const int n = 50;
  const double k = 1e6, rest = 0.1, m = 0.01, g = 9.81;
  ChainOptions o;
  o.n = n;
  o.k = k;
  o.rest = rest;
  o.mass = m;
  o.axis = -Vec3::UnitZ();
  ParticleSystem sys = scene_chain(o);
  sys.external.gravity = Vec3(0, 0, -g);
  const AssembledSystem a(sys);

  // Newton on M (-A x + g(x)) = -K x + r(x) = 0.
  Vector x = a.gather(sys.position);
  const Index d = a.dofs();
  for (int it = 0; it < 20; ++it) {
    const Vector res = a.mass().cwiseProduct(a.acceleration(x, Vector::Zero(d)));
    if (res.norm() < 1e-9) break;
    const Matrix jac = Matrix(a.rest_length_jacobian(x)) - Matrix(a.stiffness());
    x -= jac.lu().solve(res);
  }

  // Spring p carries the weight of particles p+1..n-1.
  double z = 0.0, worst = 0.0;
  for (int p = 1; p < n; ++p) {
    z -= rest + (n - p) * m * g / k;
    const Vec3 xp = x.segment<3>(3 * (p - 1));
    worst = std::max({worst, std::abs(xp.z() - z), std::abs(xp.x()), std::abs(xp.y())});
  }
  EXPECT_LT(worst, 1e-6);
}

}  // namespace
}  // namespace exprb
