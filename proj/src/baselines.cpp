#include "exprb/baselines.hpp"

#include <cmath>
#include <string>

namespace exprb {

Vector rk4_step(const VectorField& f, const Vector& u, double h) {
  const Vector k1 = f(u);
  const Vector k2 = f(u + 0.5 * h * k1);
  const Vector k3 = f(u + 0.5 * h * k2);
  const Vector k4 = f(u + h * k3);
  return u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

GmresResult gmres(const LinearOperator& a, const Vector& b, double rtol, int restart,
                  int max_iterations) {
  const Index n = b.size();
  GmresResult res;
  res.x = Vector::Zero(n);
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    res.converged = true;
    return res;
  }
  restart = std::max(1, std::min<int>(restart, static_cast<int>(n)));

  std::vector<Vector> v;
  Matrix h(restart + 1, restart);
  Vector cs(restart), sn(restart), g(restart + 1);
  Vector r = b;
  while (res.iterations < max_iterations) {
    double beta = r.norm();
    res.relative_residual = beta / bnorm;
    if (res.relative_residual <= rtol) break;

    v.assign(1, r / beta);
    h.setZero();
    g.setZero();
    g(0) = beta;
    int j = 0;
    for (; j < restart && res.iterations < max_iterations; ++j) {
      ++res.iterations;
      Vector w = a(v[j]);
      for (int i = 0; i <= j; ++i) {
        h(i, j) = v[i].dot(w);
        w -= h(i, j) * v[i];
      }
      h(j + 1, j) = w.norm();
      for (int i = 0; i < j; ++i) {
        const double t = cs(i) * h(i, j) + sn(i) * h(i + 1, j);
        h(i + 1, j) = -sn(i) * h(i, j) + cs(i) * h(i + 1, j);
        h(i, j) = t;
      }
      const double rho = std::hypot(h(j, j), h(j + 1, j));
      cs(j) = h(j, j) / rho;
      sn(j) = h(j + 1, j) / rho;
      h(j, j) = rho;
      h(j + 1, j) = 0.0;
      g(j + 1) = -sn(j) * g(j);
      g(j) = cs(j) * g(j);

      const bool done = std::abs(g(j + 1)) <= rtol * bnorm;
      const double wn = w.norm();
      if (done || wn == 0.0) {
        ++j;
        break;
      }
      v.push_back(w / wn);
    }
    const Vector y = h.topLeftCorner(j, j).triangularView<Eigen::Upper>().solve(g.head(j));
    for (int i = 0; i < j; ++i) res.x += y(i) * v[i];
    r = b - a(res.x);
  }
  res.relative_residual = r.norm() / bnorm;
  res.converged = res.relative_residual <= rtol * (1.0 + 1e-6);
  return res;
}

Vector bdf1_step(const SemilinearProblem& problem, const Vector& u, double h,
                 const NewtonConfig& cfg, Bdf1Stats* stats) {
  if (!(h > 0.0)) throw InvalidArgument("bdf1_step: h must be positive");
  Vector w = u;
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    const LinearizationFrame frame = linearize(problem, w);
    const Vector residual = w - u - h * frame.f;
    const LinearOperator jac = frame.jacobian;
    const LinearOperator system(u.size(), [jac, h](const Vector& in, Vector& out) {
      jac.apply(in, out);
      out = in - h * out;
    });
    const GmresResult lin =
        gmres(system, -residual, cfg.linear_rtol, cfg.linear_restart, cfg.linear_max_iterations);
    if (stats) {
      ++stats->newton_iterations;
      stats->linear_iterations += lin.iterations;
    }
    if (!lin.converged) {
      throw NumericalError("bdf1_step: GMRES stalled at relative residual " +
                           std::to_string(lin.relative_residual));
    }
    w += lin.x;
    if (!w.allFinite()) throw NumericalError("bdf1_step: non-finite Newton iterate");
    if (lin.x.norm() <= cfg.atol + cfg.rtol * w.norm()) return w;
  }
  throw NumericalError("bdf1_step: Newton did not converge in " +
                       std::to_string(cfg.max_iterations) + " iterations");
}

void verlet_step(const Acceleration& acc, Vector& x, Vector& v, double h) {
  v += 0.5 * h * acc(x, v);
  x += h * v;
  v += 0.5 * h * acc(x, v);
}

ImexSplitting::ImexSplitting(std::shared_ptr<const StiffFirstOrderForm> form)
    : form_(std::move(form)) {}

Vector ImexSplitting::implicit_solve(const Vector& r, double h) {
  // w1 - h Om w2 = r1, w2 + h Om w1 = r2  =>  (I + h^2 A_w) w1 = r1 + h Om r2.
  const AssembledSystem& a = form_->assembled();
  const Index d = a.dofs();
  auto& f = factors_[h];
  if (!f) {
    Matrix m = h * h * a.a_weighted().matrix();
    m.diagonal().array() += 1.0;
    f = std::make_shared<Eigen::LLT<Matrix>>(m);
    if (f->info() != Eigen::Success) throw NumericalError("imex: factorization failed");
  }
  const Matrix& om = a.omega().matrix();
  Vector out(2 * d);
  out.head(d) = f->solve(r.head(d) + h * (om * r.tail(d)));
  out.tail(d) = r.tail(d) - h * (om * out.head(d));
  return out;
}

Vector ImexSplitting::step(const Vector& u, double h) {
  return implicit_solve(u + h * form_->nonlinearity(u), h);
}

StepFunction make_rk4_stepper(SemilinearProblem problem) {
  return [problem = std::move(problem)](const Vector& u, double h, KrylovStats*) {
    return rk4_step([&problem](const Vector& x) { return problem.eval(x); }, u, h);
  };
}

StepFunction make_bdf1_stepper(SemilinearProblem problem, NewtonConfig cfg) {
  return [problem = std::move(problem), cfg](const Vector& u, double h, KrylovStats*) {
    return bdf1_step(problem, u, h, cfg);
  };
}

StepFunction make_verlet_stepper(std::shared_ptr<const StiffFirstOrderForm> form) {
  return [form = std::move(form)](const Vector& u, double h, KrylovStats*) {
    Vector x, v;
    form->from_state(u, x, v);
    verlet_step([&form](const Vector& xx, const Vector& vv) { return form->acceleration(xx, vv); },
                x, v, h);
    return form->to_state(x, v);
  };
}

StepFunction make_imex_stepper(std::shared_ptr<const StiffFirstOrderForm> form) {
  auto imex = std::make_shared<ImexSplitting>(std::move(form));
  return [imex](const Vector& u, double h, KrylovStats*) { return imex->step(u, h); };
}

}  // namespace exprb
