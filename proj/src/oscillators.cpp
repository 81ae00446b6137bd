#include "exprb/oscillators.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include <Eigen/SparseCore>

namespace exprb {

namespace {

std::string spring_name(std::size_t s) { return "spring " + std::to_string(s); }

// Union-find over particle indices.
struct Components {
  std::vector<int> parent;
  explicit Components(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  void join(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

int ParticleSystem::add_particle(double m, const Vec3& x, const Vec3& v, bool is_fixed) {
  mass.push_back(m);
  position.push_back(x);
  velocity.push_back(v);
  fixed.push_back(is_fixed);
  return size() - 1;
}

void ParticleSystem::add_spring(int i, int j, double k, double rest) {
  springs.push_back({i, j, k, rest});
}

void ParticleSystem::validate() const {
  const std::size_t n = mass.size();
  if (n == 0) throw InvalidScene("scene has no particles");
  if (position.size() != n || velocity.size() != n || fixed.size() != n) {
    throw InvalidScene("particle arrays have inconsistent lengths");
  }
  for (std::size_t p = 0; p < n; ++p) {
    if (!(mass[p] > 0.0) || !std::isfinite(mass[p])) {
      throw InvalidScene("particle " + std::to_string(p) + ": mass must be positive");
    }
    if (!position[p].allFinite() || !velocity[p].allFinite()) {
      throw InvalidScene("particle " + std::to_string(p) + ": non-finite state");
    }
  }
  for (std::size_t s = 0; s < springs.size(); ++s) {
    const Spring& sp = springs[s];
    if (sp.i < 0 || sp.j < 0 || sp.i >= static_cast<int>(n) || sp.j >= static_cast<int>(n)) {
      throw InvalidScene(spring_name(s) + ": particle index out of range");
    }
    if (sp.i == sp.j) throw InvalidScene(spring_name(s) + ": joins a particle to itself");
    if (!(sp.k > 0.0) || !std::isfinite(sp.k)) {
      throw InvalidScene(spring_name(s) + ": stiffness must be positive");
    }
    if (!(sp.rest >= 0.0) || !std::isfinite(sp.rest)) {
      throw InvalidScene(spring_name(s) + ": rest length must be non-negative");
    }
  }
  if (!external.gravity.allFinite() || !(external.drag >= 0.0)) {
    throw InvalidScene("external field: gravity must be finite and drag non-negative");
  }
}

// AssembledSystem -----------------------------------------------------------

AssembledSystem::AssembledSystem(const ParticleSystem& sys, SqrtMethod method) : sys_(sys) {
  sys_.validate();
  const int np = sys_.size();
  dof_of_.assign(np, -1);
  for (int p = 0; p < np; ++p) {
    if (!sys_.fixed[p]) {
      dof_of_[p] = static_cast<int>(free_.size()) * 3;
      free_.push_back(p);
    }
  }
  if (free_.empty()) throw InvalidScene("scene has no free particles");

  // Every free component needs a spring to a fixed particle, otherwise the
  // zero-rest-length Laplacian keeps its translation modes and A is singular.
  Components comp(np);
  std::vector<bool> anchored(np, false);
  for (const Spring& s : sys_.springs) {
    if (!sys_.fixed[s.i] && !sys_.fixed[s.j]) comp.join(s.i, s.j);
  }
  for (const Spring& s : sys_.springs) {
    if (sys_.fixed[s.i] != sys_.fixed[s.j]) anchored[comp.find(sys_.fixed[s.i] ? s.j : s.i)] = true;
  }
  for (int p : free_) {
    if (!anchored[comp.find(p)]) {
      throw InvalidScene("free particle " + std::to_string(p) +
                         " belongs to a component with no spring to a fixed particle");
    }
  }

  const Index d = dofs();
  mass_.resize(d);
  for (int p : free_) mass_.segment<3>(dof_of_[p]).setConstant(sys_.mass[p]);

  std::vector<Eigen::Triplet<double>> trips;
  auto add_block = [&](int r, int c, double val) {
    for (int a = 0; a < 3; ++a) trips.emplace_back(r + a, c + a, val);
  };
  for (const Spring& s : sys_.springs) {
    const int di = dof_of_[s.i], dj = dof_of_[s.j];
    if (di >= 0) add_block(di, di, s.k);
    if (dj >= 0) add_block(dj, dj, s.k);
    if (di >= 0 && dj >= 0) {
      add_block(di, dj, -s.k);
      add_block(dj, di, -s.k);
    }
  }
  k_.resize(d, d);
  k_.setFromTriplets(trips.begin(), trips.end());

  const Vector inv_sqrt_m = mass_.cwiseSqrt().cwiseInverse();
  const Matrix a_w = inv_sqrt_m.asDiagonal() * Matrix(k_) * inv_sqrt_m.asDiagonal();
  try {
    a_w_ = std::make_shared<SpdMatrix>(a_w);
  } catch (const InvalidArgument& e) {
    throw InvalidScene(std::string("stiffness matrix is not positive definite: ") + e.what());
  }
  const bool schur = method == SqrtMethod::Schur || (method == SqrtMethod::Auto && d <= kSchurLimit);
  omega_ = std::make_shared<SpdMatrix>(schur ? sqrtm_schur(*a_w_) : sqrtm_newton(*a_w_));
}

SparseMatrix AssembledSystem::a_plain() const {
  return SparseMatrix(mass_.cwiseInverse().asDiagonal() * k_);
}

Vector AssembledSystem::gather(const std::vector<Vec3>& per_particle) const {
  Vector out(dofs());
  for (int p : free_) out.segment<3>(dof_of_[p]) = per_particle[p];
  return out;
}

std::vector<Vec3> AssembledSystem::scatter_positions(const Vector& x) const {
  std::vector<Vec3> out = sys_.position;
  for (int p : free_) out[p] = x.segment<3>(dof_of_[p]);
  return out;
}

Vector AssembledSystem::g(const Vector& x, const Vector& v) const {
  Vector r = Vector::Zero(dofs());
  for (const Spring& s : sys_.springs) {
    const int di = dof_of_[s.i], dj = dof_of_[s.j];
    if (di < 0 && dj < 0) continue;
    const Vec3 xi = di >= 0 ? Vec3(x.segment<3>(di)) : sys_.position[s.i];
    const Vec3 xj = dj >= 0 ? Vec3(x.segment<3>(dj)) : sys_.position[s.j];
    Vec3 f = Vec3::Zero();  // acts on i, -f on j
    if (s.rest > 0.0) {
      const Vec3 d = xi - xj;
      const double len = d.norm();
      if (len == 0.0) throw NumericalError("spring with rest length has coincident endpoints");
      f += s.k * s.rest / len * d;
    }
    // Anchor term of the Laplacian split: -k (x_i - x_j) with x_j fixed.
    if (di >= 0 && dj < 0) f += s.k * xj;
    if (dj >= 0 && di < 0) f -= s.k * xi;
    if (di >= 0) r.segment<3>(di) += f;
    if (dj >= 0) r.segment<3>(dj) -= f;
  }
  for (int p : free_) r.segment<3>(dof_of_[p]) += sys_.mass[p] * sys_.external.gravity;
  if (sys_.external.drag > 0.0) r -= sys_.external.drag * v;
  return r.cwiseQuotient(mass_);
}

Vector AssembledSystem::acceleration(const Vector& x, const Vector& v) const {
  return g(x, v) - (k_ * x).cwiseQuotient(mass_);
}

SparseMatrix AssembledSystem::rest_length_jacobian(const Vector& x) const {
  std::vector<Eigen::Triplet<double>> trips;
  for (const Spring& s : sys_.springs) {
    const int di = dof_of_[s.i], dj = dof_of_[s.j];
    if ((di < 0 && dj < 0) || s.rest == 0.0) continue;
    const Vec3 xi = di >= 0 ? Vec3(x.segment<3>(di)) : sys_.position[s.i];
    const Vec3 xj = dj >= 0 ? Vec3(x.segment<3>(dj)) : sys_.position[s.j];
    const Vec3 d = xi - xj;
    const double len = d.norm();
    if (len == 0.0) throw NumericalError("spring with rest length has coincident endpoints");
    const Vec3 e = d / len;
    const Eigen::Matrix3d b = s.k * s.rest / len * (Eigen::Matrix3d::Identity() - e * e.transpose());
    auto put = [&](int r, int c, double sign) {
      for (int a = 0; a < 3; ++a)
        for (int bb = 0; bb < 3; ++bb) trips.emplace_back(r + a, c + bb, sign * b(a, bb));
    };
    if (di >= 0) put(di, di, 1.0);
    if (dj >= 0) put(dj, dj, 1.0);
    if (di >= 0 && dj >= 0) {
      put(di, dj, -1.0);
      put(dj, di, -1.0);
    }
  }
  SparseMatrix out(dofs(), dofs());
  out.setFromTriplets(trips.begin(), trips.end());
  return out;
}

double AssembledSystem::kinetic_energy(const Vector& v) const {
  return 0.5 * v.cwiseProduct(v).dot(mass_);
}

double AssembledSystem::potential_energy(const Vector& x) const {
  const std::vector<Vec3> pos = scatter_positions(x);
  double e = 0.0;
  for (const Spring& s : sys_.springs) {
    const double stretch = (pos[s.i] - pos[s.j]).norm() - s.rest;
    e += 0.5 * s.k * stretch * stretch;
  }
  for (int p : free_) e -= sys_.mass[p] * sys_.external.gravity.dot(pos[p]);
  return e;
}

// StiffFirstOrderForm -------------------------------------------------------

StiffFirstOrderForm::StiffFirstOrderForm(std::shared_ptr<const AssembledSystem> asm_sys)
    : asm_(std::move(asm_sys)), sqrt_m_(asm_->mass().cwiseSqrt()) {}

Vector StiffFirstOrderForm::to_state(const Vector& x, const Vector& v) const {
  const Index d = asm_->dofs();
  Vector u(2 * d);
  u.head(d) = asm_->omega().matrix() * x.cwiseProduct(sqrt_m_);
  u.tail(d) = v.cwiseProduct(sqrt_m_);
  return u;
}

void StiffFirstOrderForm::from_state(const Vector& u, Vector& x, Vector& v) const {
  const Index d = asm_->dofs();
  x = spd_inverse_apply(asm_->omega(), u.head(d)).cwiseQuotient(sqrt_m_);
  v = u.tail(d).cwiseQuotient(sqrt_m_);
}

Vector StiffFirstOrderForm::initial_state() const {
  return to_state(asm_->gather(asm_->system().position), asm_->gather(asm_->system().velocity));
}

void StiffFirstOrderForm::apply_skew(const Vector& w, Vector& out) const {
  const Index d = asm_->dofs();
  const Matrix& om = asm_->omega().matrix();
  out.resize(2 * d);
  out.head(d).noalias() = om * w.tail(d);
  out.tail(d).noalias() = -(om * w.head(d));
}

LinearOperator StiffFirstOrderForm::skew_operator() const {
  return LinearOperator(dim(), [self = *this](const Vector& in, Vector& out) {
    self.apply_skew(in, out);
  });
}

Vector StiffFirstOrderForm::nonlinearity(const Vector& u) const {
  const Index d = asm_->dofs();
  Vector x, v;
  from_state(u, x, v);
  Vector out = Vector::Zero(2 * d);
  out.tail(d) = asm_->g(x, v).cwiseProduct(sqrt_m_);
  return out;
}

Vector StiffFirstOrderForm::rhs(const Vector& u) const {
  Vector out;
  apply_skew(u, out);
  return out + nonlinearity(u);
}

LinearOperator StiffFirstOrderForm::nonlinearity_jacobian(const Vector& u_n) const {
  const Index d = asm_->dofs();
  Vector x, v;
  from_state(u_n, x, v);
  const SparseMatrix jr = asm_->rest_length_jacobian(x);
  const double drag = asm_->system().external.drag;
  return LinearOperator(2 * d, [self = *this, jr, drag, d](const Vector& w, Vector& out) {
    const Vector& sm = self.sqrt_m_;
    out = Vector::Zero(2 * d);
    if (jr.nonZeros() > 0) {
      const Vector dx = spd_inverse_apply(self.asm_->omega(), w.head(d)).cwiseQuotient(sm);
      out.tail(d) = (jr * dx).cwiseQuotient(sm);
    }
    if (drag > 0.0) out.tail(d) -= drag * w.tail(d).cwiseQuotient(self.asm_->mass());
  });
}

LinearOperator StiffFirstOrderForm::jacobian_at(const Vector& u_n) const {
  LinearOperator gj = nonlinearity_jacobian(u_n);
  return LinearOperator(dim(), [self = *this, gj = std::move(gj)](const Vector& w, Vector& out) {
    Vector tmp;
    self.apply_skew(w, out);
    gj.apply(w, tmp);
    out += tmp;
  });
}

Vector StiffFirstOrderForm::jacobian_action(const Vector& u_n, const Vector& w) const {
  return jacobian_at(u_n)(w);
}

SemilinearProblem StiffFirstOrderForm::problem() const {
  SemilinearProblem p;
  p.dim = dim();
  p.linear_part = skew_operator();
  p.nonlinearity = [self = *this](const Vector& u) { return self.nonlinearity(u); };
  p.nonlinearity_jacobian = [self = *this](const Vector& u) { return self.nonlinearity_jacobian(u); };
  p.jacobian_at = [self = *this](const Vector& u) { return self.jacobian_at(u); };
  return p;
}

EnergyReport StiffFirstOrderForm::energy(const Vector& u) const {
  Vector x, v;
  from_state(u, x, v);
  EnergyReport r;
  r.kinetic = asm_->kinetic_energy(v);
  r.potential = asm_->potential_energy(x);
  r.total = r.kinetic + r.potential;
  return r;
}

// Scenes --------------------------------------------------------------------

ParticleSystem scene_chain(const ChainOptions& o) {
  if (o.n < 2) throw InvalidScene("chain needs at least 2 particles");
  if (!(o.k > 0.0) || !(o.rest >= 0.0) || !(o.mass > 0.0)) {
    throw InvalidScene("chain parameters must be positive");
  }
  const double spacing = o.spacing < 0.0 ? o.rest : o.spacing;
  const Vec3 axis = o.axis.normalized();
  ParticleSystem sys;
  for (int p = 0; p < o.n; ++p) {
    const bool fixed = (p == 0 && o.ends != ChainEnds::None) ||
                       (p == o.n - 1 && o.ends == ChainEnds::Both);
    sys.add_particle(o.mass, p * spacing * axis, Vec3::Zero(), fixed);
  }
  for (int p = 0; p + 1 < o.n; ++p) sys.add_spring(p, p + 1, o.k, o.rest);
  return sys;
}

ParticleSystem scene_chain(int n, double k, double rest, double mass, ChainEnds ends) {
  ChainOptions o;
  o.n = n;
  o.k = k;
  o.rest = rest;
  o.mass = mass;
  o.ends = ends;
  return scene_chain(o);
}

ParticleSystem scene_lattice(const LatticeOptions& o) {
  if (o.nx < 1 || o.ny < 1 || o.nz < 1 || o.nx * o.ny * o.nz < 2) {
    throw InvalidScene("lattice needs at least 2 particles");
  }
  if (!(o.spacing > 0.0) || !(o.k_struct > 0.0) || !(o.k_diag > 0.0) || !(o.mass > 0.0)) {
    throw InvalidScene("lattice parameters must be positive");
  }
  ParticleSystem sys;
  auto idx = [&](int i, int j, int l) { return i + o.nx * (j + o.ny * l); };
  for (int l = 0; l < o.nz; ++l)
    for (int j = 0; j < o.ny; ++j)
      for (int i = 0; i < o.nx; ++i)
        sys.add_particle(o.mass, o.spacing * Vec3(i, j, l), Vec3::Zero(), o.fix_x0_face && i == 0);

  const double diag = o.spacing * std::sqrt(2.0);
  const int n[3] = {o.nx, o.ny, o.nz};
  for (int l = 0; l < o.nz; ++l)
    for (int j = 0; j < o.ny; ++j)
      for (int i = 0; i < o.nx; ++i) {
        const int c[3] = {i, j, l};
        for (int a = 0; a < 3; ++a) {
          if (c[a] + 1 >= n[a]) continue;
          int e[3] = {i, j, l};
          ++e[a];
          sys.add_spring(idx(i, j, l), idx(e[0], e[1], e[2]), o.k_struct, o.spacing);
        }
        // Unit square spanned by axes a < b with corner at (i, j, l).
        for (int a = 0; a < 3; ++a)
          for (int b = a + 1; b < 3; ++b) {
            if (c[a] + 1 >= n[a] || c[b] + 1 >= n[b]) continue;
            int p11[3] = {i, j, l}, p10[3] = {i, j, l}, p01[3] = {i, j, l};
            ++p11[a], ++p11[b], ++p10[a], ++p01[b];
            sys.add_spring(idx(i, j, l), idx(p11[0], p11[1], p11[2]), o.k_diag, diag);
            sys.add_spring(idx(p10[0], p10[1], p10[2]), idx(p01[0], p01[1], p01[2]), o.k_diag, diag);
          }
      }
  return sys;
}

}  // namespace exprb
