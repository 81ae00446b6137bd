#pragma once

// Mass-spring systems
//
//   m_i x_i'' = sum_j -k_ij (|x_i - x_j| - l_ij) (x_i - x_j) / |x_i - x_j| + f_i
//
// split as x'' = -A x + g(x) with A from the zero-rest-length spring
// Laplacian, and the skew-symmetric first-order form u' = Au + G(u) built on
// Omega = sqrt(A).
//
// Free degrees of freedom are stored in mass-weighted coordinates
// y = M^{1/2} x, where A_w = M^{-1/2} K M^{-1/2} is symmetric positive definite
// even for unequal masses. With equal masses this is the plain x up to a
// constant factor.

#include <Eigen/Core>
#include <memory>
#include <string>
#include <vector>

#include "exprb/integrators.hpp"
#include "exprb/linear_operator.hpp"
#include "exprb/matfunc.hpp"

namespace exprb {

using Vec3 = Eigen::Vector3d;

class InvalidScene : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct Spring {
  int i = 0;
  int j = 0;
  double k = 0.0;     // N/m
  double rest = 0.0;  // m
};

struct ExternalField {
  Vec3 gravity = Vec3::Zero();  // m/s^2, force m_i * gravity
  double drag = 0.0;            // force -drag * v_i (N s/m); not conservative
};

struct ParticleSystem {
  std::vector<double> mass;
  std::vector<Vec3> position;
  std::vector<Vec3> velocity;
  std::vector<bool> fixed;
  std::vector<Spring> springs;
  ExternalField external;

  int size() const { return static_cast<int>(mass.size()); }
  int add_particle(double m, const Vec3& x, const Vec3& v = Vec3::Zero(), bool is_fixed = false);
  void add_spring(int i, int j, double k, double rest);
  /// Throws InvalidScene on inconsistent sizes, bad indices or non-positive parameters.
  void validate() const;
};

enum class SqrtMethod { Auto, Schur, Newton };

/// Matrix form over the free degrees of freedom (3 per free particle, in
/// particle order).
class AssembledSystem {
 public:
  static constexpr Index kSchurLimit = 300;

  explicit AssembledSystem(const ParticleSystem& sys, SqrtMethod method = SqrtMethod::Auto);

  const ParticleSystem& system() const { return sys_; }
  Index dofs() const { return static_cast<Index>(free_.size()) * 3; }
  const std::vector<int>& free_particles() const { return free_; }

  const Vector& mass() const { return mass_; }  // per DOF
  const SparseMatrix& stiffness() const { return k_; }  // K, N/m
  /// A = M^{-1} K in plain coordinates.
  SparseMatrix a_plain() const;
  /// M^{-1/2} K M^{-1/2}.
  const SpdMatrix& a_weighted() const { return *a_w_; }
  const SpdMatrix& omega() const { return *omega_; }

  /// g(x) = M^{-1} (rest-length corrections + anchor terms + external forces).
  Vector g(const Vector& x, const Vector& v) const;
  /// x'' = -A x + g(x, v).
  Vector acceleration(const Vector& x, const Vector& v) const;
  /// Symmetric d r / d x of the rest-length correction r (before M^{-1}).
  SparseMatrix rest_length_jacobian(const Vector& x) const;

  /// Free-DOF vectors from / to per-particle arrays (fixed particles keep the scene value).
  Vector gather(const std::vector<Vec3>& per_particle) const;
  std::vector<Vec3> scatter_positions(const Vector& x) const;

  double kinetic_energy(const Vector& v) const;
  /// Spring + gravity potential (gravity measured from the origin).
  double potential_energy(const Vector& x) const;

 private:
  ParticleSystem sys_;
  std::vector<int> free_;
  std::vector<int> dof_of_;  // particle -> first DOF or -1
  Vector mass_;
  SparseMatrix k_;
  std::shared_ptr<SpdMatrix> a_w_;
  std::shared_ptr<SpdMatrix> omega_;
};

struct EnergyReport {
  double kinetic = 0.0;
  double potential = 0.0;
  double total = 0.0;
};

/// u' = 𝒜 u + G(u) with u = (Omega y, y'), y = M^{1/2} x (free DOFs),
/// 𝒜 (w1, w2) = (Omega w2, -Omega w1), G(u) = (0, M^{-1/2} r(x, v)).
class StiffFirstOrderForm {
 public:
  explicit StiffFirstOrderForm(std::shared_ptr<const AssembledSystem> asm_sys);

  const AssembledSystem& assembled() const { return *asm_; }
  Index dim() const { return 2 * asm_->dofs(); }

  Vector to_state(const Vector& x, const Vector& v) const;
  void from_state(const Vector& u, Vector& x, Vector& v) const;
  Vector initial_state() const;

  void apply_skew(const Vector& w, Vector& out) const;
  LinearOperator skew_operator() const;
  Vector nonlinearity(const Vector& u) const;
  Vector rhs(const Vector& u) const;
  /// J_n w = 𝒜 w + G'(u_n) w.
  Vector jacobian_action(const Vector& u_n, const Vector& w) const;
  LinearOperator nonlinearity_jacobian(const Vector& u_n) const;
  LinearOperator jacobian_at(const Vector& u_n) const;

  SemilinearProblem problem() const;
  EnergyReport energy(const Vector& u) const;

  /// Second-order view for Verlet: x'' = acceleration(x, v) in plain coordinates.
  Vector acceleration(const Vector& x, const Vector& v) const { return asm_->acceleration(x, v); }

 private:
  std::shared_ptr<const AssembledSystem> asm_;
  Vector sqrt_m_;
};

// Scenes --------------------------------------------------------------------

enum class ChainEnds { None, First, Both };

struct ChainOptions {
  int n = 10;
  double k = 100.0;
  double rest = 1.0;
  double mass = 1.0;
  ChainEnds ends = ChainEnds::First;
  Vec3 axis = Vec3::UnitX();  // particle p at p * spacing * axis
  double spacing = -1.0;      // < 0: use rest
};

/// Particles 0..n-1 along `axis`, springs (p, p+1).
ParticleSystem scene_chain(const ChainOptions& opts);
ParticleSystem scene_chain(int n, double k, double rest, double mass, ChainEnds ends);

struct LatticeOptions {
  int nx = 2, ny = 2, nz = 1;
  double spacing = 1.0;
  double k_struct = 100.0;
  double k_diag = 100.0;
  double mass = 1.0;
  bool fix_x0_face = false;  // fix every particle with i == 0
};

/// Particle (i, j, l) has index i + nx (j + ny l) at spacing * (i, j, l).
/// Structural springs join axis neighbours; each unit square in the xy, xz and
/// yz planes gets both diagonals.
ParticleSystem scene_lattice(const LatticeOptions& opts);

}  // namespace exprb
