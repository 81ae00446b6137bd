#include "exprb/integrators.hpp"

#include <cmath>
#include <limits>
#include <memory>

namespace exprb {

namespace {

LinearOperator sum_of(LinearOperator a, LinearOperator b) {
  const Index n = a.dim();
  return LinearOperator(n, [a = std::move(a), b = std::move(b)](const Vector& in, Vector& out) {
    Vector tmp;
    a.apply(in, out);
    b.apply(in, tmp);
    out += tmp;
  });
}

PhiCombinationRequest make_request(LinearOperator op, int p, double tol) {
  PhiCombinationRequest req;
  req.op = std::move(op);
  req.v.assign(static_cast<std::size_t>(p) + 1, Vector::Zero(req.op.dim()));
  req.tol = tol;
  return req;
}

int max_phi_index(const PhiWeights& w, int p) {
  for (const auto& pw : w) p = std::max(p, pw.k);
  return p;
}

}  // namespace

Vector SemilinearProblem::eval(const Vector& u) const {
  if (rhs) return rhs(u);
  if (!has_split()) throw InvalidArgument("SemilinearProblem: neither rhs nor split given");
  return linear_part(u) + nonlinearity(u);
}

LinearOperator finite_difference_jacobian(VectorField f, const Vector& u, Vector fu) {
  const double scale = std::sqrt(std::numeric_limits<double>::epsilon()) * (1.0 + u.norm());
  return LinearOperator(u.size(), [f = std::move(f), u, fu = std::move(fu), scale](
                                      const Vector& w, Vector& out) {
    const double wn = w.norm();
    if (wn == 0.0) {
      out.setZero(u.size());
      return;
    }
    const double eps = scale / wn;
    out = (f(u + eps * w) - fu) / eps;
  });
}

Vector LinearizationFrame::remainder(const Vector& x) const { return rhs(x) - jacobian(x); }

Vector LinearizationFrame::remainder_increment(const Vector& x) const {
  return rhs(x) - f - jacobian(Vector(x - u));
}

LinearizationFrame linearize(const SemilinearProblem& problem, const Vector& u) {
  if (u.size() != problem.dim) throw InvalidArgument("linearize: state dimension mismatch");
  if (!u.allFinite()) throw InvalidArgument("linearize: non-finite state");

  LinearizationFrame frame;
  frame.u = u;
  frame.rhs = [problem](const Vector& x) { return problem.eval(x); };
  frame.f = problem.eval(u);

  if (problem.jacobian_at) {
    frame.jacobian = problem.jacobian_at(u);
  } else if (problem.has_split()) {
    LinearOperator gj = problem.nonlinearity_jacobian
                            ? problem.nonlinearity_jacobian(u)
                            : finite_difference_jacobian(problem.nonlinearity, u,
                                                         problem.nonlinearity(u));
    frame.jacobian = sum_of(problem.linear_part, std::move(gj));
  } else {
    frame.jacobian = finite_difference_jacobian(frame.rhs, u, frame.f);
  }
  if (!frame.jacobian || frame.jacobian.dim() != problem.dim) {
    throw InvalidArgument("linearize: Jacobian provider returned a mismatched operator");
  }
  return frame;
}

// Schemes -------------------------------------------------------------------

void SchemeSpec::validate() const {
  const std::size_t s = c.size();
  if (b.size() != s || a.size() != s) {
    throw InvalidArgument("SchemeSpec " + name + ": table sizes do not match node count");
  }
  auto check = [this](const PhiWeights& w) {
    for (const auto& pw : w) {
      if (pw.k < 1 || pw.k > 5) {
        throw InvalidArgument("SchemeSpec " + name + ": weights may use phi_1..phi_5 only");
      }
    }
  };
  for (std::size_t i = 0; i < s; ++i) {
    if (!(c[i] > 0.0 && c[i] <= 1.0)) {
      throw InvalidArgument("SchemeSpec " + name + ": node outside (0, 1]");
    }
    if (a[i].size() != i) {
      throw InvalidArgument("SchemeSpec " + name + ": a must be strictly lower triangular");
    }
    for (const auto& w : a[i]) check(w);
    check(b[i]);
  }
}

SchemeSpec scheme_exprb_euler() { return {"exprb-euler", {}, {}, {}}; }

SchemeSpec scheme_exprb42() {
  return {"exprb42", {0.75}, {{}}, {{{3, 32.0 / 9.0}}}};
}

SchemeSpec scheme_pexprb43() {
  return {"pexprb43",
          {0.5, 1.0},
          {{}, {{}}},
          {{{3, 16.0}, {4, -48.0}}, {{3, -2.0}, {4, 12.0}}}};
}

// Steppers ------------------------------------------------------------------

StepResult step_exprb_euler(const LinearizationFrame& frame, double h, PhiEvaluator& ev,
                            double tol) {
  if (!(h > 0.0)) throw InvalidArgument("step: h must be positive");
  auto req = make_request(frame.jacobian.scaled(h), 1, tol);
  req.v[1] = h * frame.f;
  PhiResult r = ev.evaluate(req);
  return {frame.u + r.outputs[0], {}, std::move(r.stats)};
}

StepResult step_exprb42(const LinearizationFrame& frame, double h, PhiEvaluator& ev,
                        double tol) {
  if (!(h > 0.0)) throw InvalidArgument("step: h must be positive");
  StepResult out;

  auto first = make_request(frame.jacobian.scaled(0.75 * h), 1, tol);
  first.v[1] = 0.75 * h * frame.f;
  PhiResult r1 = ev.evaluate(first);
  out.stats.merge(r1.stats);
  Vector u2 = frame.u + r1.outputs[0];

  auto second = make_request(frame.jacobian.scaled(h), 3, tol);
  second.v[1] = h * frame.f;
  second.v[3] = (32.0 / 9.0) * h * frame.remainder_increment(u2);
  PhiResult r2 = ev.evaluate(second);
  out.stats.merge(r2.stats);

  out.next = frame.u + r2.outputs[0];
  out.stages.push_back(std::move(u2));
  return out;
}

StepResult step_pexprb43(const LinearizationFrame& frame, double h, PhiEvaluator& ev,
                         double tol) {
  if (!(h > 0.0)) throw InvalidArgument("step: h must be positive");
  StepResult out;

  auto first = make_request(frame.jacobian.scaled(h), 1, tol);
  first.v[1] = h * frame.f;
  first.scales = {0.5, 1.0};
  PhiResult r1 = ev.evaluate(first);
  out.stats.merge(r1.stats);
  Vector u2 = frame.u + r1.outputs[0];
  Vector u3 = frame.u + r1.outputs[1];

  const Vector d2 = frame.remainder_increment(u2);
  const Vector d3 = frame.remainder_increment(u3);
  auto second = make_request(frame.jacobian.scaled(h), 4, tol);
  second.v[3] = h * (16.0 * d2 - 2.0 * d3);
  second.v[4] = h * (-48.0 * d2 + 12.0 * d3);
  PhiResult r2 = ev.evaluate(second);
  out.stats.merge(r2.stats);

  out.next = u3 + r2.outputs[0];
  out.stages.push_back(std::move(u2));
  out.stages.push_back(std::move(u3));
  return out;
}

StepResult step_generic(const SchemeSpec& scheme, const LinearizationFrame& frame, double h,
                        PhiEvaluator& ev, double tol) {
  if (!(h > 0.0)) throw InvalidArgument("step: h must be positive");
  scheme.validate();
  StepResult out;
  std::vector<Vector> d;

  for (std::size_t i = 0; i < scheme.c.size(); ++i) {
    const double ci = scheme.c[i];
    int p = 1;
    for (const auto& w : scheme.a[i]) p = max_phi_index(w, p);
    auto req = make_request(frame.jacobian.scaled(ci * h), p, tol);
    req.v[1] = ci * h * frame.f;
    for (std::size_t j = 0; j < i; ++j) {
      for (const auto& pw : scheme.a[i][j]) req.v[pw.k] += h * pw.coeff * d[j];
    }
    PhiResult r = ev.evaluate(req);
    out.stats.merge(r.stats);
    out.stages.push_back(frame.u + r.outputs[0]);
    d.push_back(frame.remainder_increment(out.stages.back()));
  }

  int p = 1;
  for (const auto& w : scheme.b) p = max_phi_index(w, p);
  auto req = make_request(frame.jacobian.scaled(h), p, tol);
  req.v[1] = h * frame.f;
  for (std::size_t i = 0; i < scheme.b.size(); ++i) {
    for (const auto& pw : scheme.b[i]) req.v[pw.k] += h * pw.coeff * d[i];
  }
  PhiResult r = ev.evaluate(req);
  out.stats.merge(r.stats);
  out.next = frame.u + r.outputs[0];
  return out;
}

// Driver --------------------------------------------------------------------

Trajectory integrate(const StepFunction& step, const Vector& u0, double t0, double t_end,
                     double h, const Observer& observer, bool store) {
  if (!(h > 0.0)) throw InvalidArgument("integrate: h must be positive");
  if (!(t_end >= t0)) throw InvalidArgument("integrate: t_end before t0");

  Trajectory traj;
  traj.t.push_back(t0);
  traj.u.push_back(u0);
  if (observer) observer(t0, u0, KrylovStats{});

  // Step count rounds away float noise so t_end = t0 + N h gives exactly N steps.
  const double span = t_end - t0;
  const long n = span == 0.0 ? 0 : static_cast<long>(std::ceil(span / h * (1.0 - 1e-12)));

  Vector u = u0;
  double t = t0;
  for (long i = 0; i < n; ++i) {
    const double t_next = (i + 1 == n) ? t_end : t0 + static_cast<double>(i + 1) * h;
    KrylovStats s;
    u = step(u, t_next - t, &s);
    t = t_next;
    ++traj.steps;
    if (!u.allFinite()) throw NonFiniteState(i + 1, t);
    traj.stats.merge(s);
    if (observer) observer(t, u, s);
    if (store || i + 1 == n) {
      traj.t.push_back(t);
      traj.u.push_back(u);
    }
  }
  return traj;
}

StepFunction make_exponential_stepper(SemilinearProblem problem, ExpScheme scheme, double tol,
                                      KrylovOptions opts) {
  auto ev = std::make_shared<PhiEvaluator>(opts);
  return [problem = std::move(problem), scheme, tol, ev](const Vector& u, double h,
                                                         KrylovStats* stats) {
    const LinearizationFrame frame = linearize(problem, u);
    StepResult r;
    switch (scheme) {
      case ExpScheme::Euler: r = step_exprb_euler(frame, h, *ev, tol); break;
      case ExpScheme::Exprb42: r = step_exprb42(frame, h, *ev, tol); break;
      case ExpScheme::Pexprb43: r = step_pexprb43(frame, h, *ev, tol); break;
    }
    if (stats) stats->merge(r.stats);
    return r.next;
  };
}

}  // namespace exprb
