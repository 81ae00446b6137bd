#include "exprb/krylov.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace exprb {

// ---------------------------------------------------------------------------
// LinearOperator

LinearOperator LinearOperator::from_dense(Matrix m) {
  if (m.rows() != m.cols()) throw InvalidArgument("LinearOperator: dense matrix must be square");
  const Index n = m.rows();
  return LinearOperator(n, [m = std::move(m)](const Vector& in, Vector& out) { out.noalias() = m * in; });
}

LinearOperator LinearOperator::from_sparse(SparseMatrix m) {
  if (m.rows() != m.cols()) throw InvalidArgument("LinearOperator: sparse matrix must be square");
  const Index n = m.rows();
  return LinearOperator(n, [m = std::move(m)](const Vector& in, Vector& out) { out.noalias() = m * in; });
}

LinearOperator LinearOperator::zero(Index dim) {
  return LinearOperator(dim, [dim](const Vector&, Vector& out) { out.setZero(dim); });
}

void LinearOperator::apply(const Vector& in, Vector& out) const {
  if (in.size() != dim_) {
    throw InvalidArgument("LinearOperator::apply: got vector of length " +
                          std::to_string(in.size()) + ", operator has dimension " +
                          std::to_string(dim_));
  }
  out.resize(dim_);
  fn_(in, out);
}

LinearOperator LinearOperator::scaled(double c) const {
  auto fn = fn_;
  return LinearOperator(dim_, [fn = std::move(fn), c](const Vector& in, Vector& out) {
    fn(in, out);
    out *= c;
  });
}

// ---------------------------------------------------------------------------
// IOM2 Arnoldi

namespace {

constexpr double kBreakdownRatio = 1e-14;

bool all_zero(const Vector& v) { return (v.array() == 0.0).all(); }

}  // namespace

void iom2_extend(KrylovBasis& basis, const LinearOperator& m, int m_max) {
  if (basis.breakdown || basis.vectors.empty()) return;
  const int start = basis.dim();
  if (m_max <= start) return;

  basis.h.conservativeResize(m_max + 1, m_max);
  basis.h.bottomRows(m_max + 1 - (start + 1)).setZero();
  basis.h.rightCols(m_max - start).setZero();

  Vector w;
  int built = start;
  for (int j = start; j < m_max; ++j) {
    m.apply(basis.vectors[j], w);
    ++basis.operator_applications;
    const double image_norm = w.stableNorm();
    for (int i = std::max(0, j - kOrthogonalizationDepth + 1); i <= j; ++i) {
      const double hij = basis.vectors[i].dot(w);
      basis.h(i, j) = hij;
      w -= hij * basis.vectors[i];
    }
    const double residual = w.stableNorm();
    built = j + 1;
    if (residual <= kBreakdownRatio * image_norm) {
      basis.h(j + 1, j) = 0.0;
      basis.breakdown = true;
      break;
    }
    basis.h(j + 1, j) = residual;
    basis.vectors.push_back(w / residual);
  }
  basis.h.conservativeResize(built + 1, built);
}

KrylovBasis iom2_arnoldi(const LinearOperator& m, const Vector& v, int m_max) {
  if (v.size() != m.dim()) throw InvalidArgument("iom2_arnoldi: dimension mismatch");
  if (m_max < 1) throw InvalidArgument("iom2_arnoldi: m_max must be positive");
  KrylovBasis basis;
  basis.beta = v.stableNorm();
  if (!(basis.beta > 0.0)) throw InvalidArgument("iom2_arnoldi: zero starting vector");
  basis.vectors.push_back(v / basis.beta);
  basis.h = Matrix::Zero(1, 0);
  iom2_extend(basis, m, m_max);
  return basis;
}

// ---------------------------------------------------------------------------
// Stats

void KrylovStats::merge(const KrylovStats& other) {
  substeps += other.substeps;
  dims.insert(dims.end(), other.dims.begin(), other.dims.end());
  operator_applications += other.operator_applications;
  skipped_applications += other.skipped_applications;
  rejected += other.rejected;
  max_orthogonality_loss = std::max(max_orthogonality_loss, other.max_orthogonality_loss);
}

int KrylovStats::max_dim() const {
  return dims.empty() ? 0 : *std::max_element(dims.begin(), dims.end());
}

// ---------------------------------------------------------------------------
// Substep recurrence

int substep_recurrence(const LinearOperator& m, std::span<const Vector> v, double t,
                       std::vector<Vector>& w, bool skip_zero, int* skipped) {
  const int p = static_cast<int>(v.size()) - 1;
  if (p < 0) throw InvalidArgument("substep_recurrence: empty v");
  if (w.empty()) throw InvalidArgument("substep_recurrence: w[0] must be set");
  w.resize(p + 1);
  int applications = 0;
  for (int j = 1; j <= p; ++j) {
    if (skip_zero && all_zero(w[j - 1])) {
      w[j].setZero(m.dim());
      if (skipped) ++*skipped;
    } else {
      m.apply(w[j - 1], w[j]);
      ++applications;
    }
    double coef = 1.0;
    for (int l = 0; l <= p - j; ++l) {
      w[j] += coef * v[j + l];
      coef *= t / (l + 1);
    }
  }
  return applications;
}

// ---------------------------------------------------------------------------
// Controller

AdaptDecision adapt(double omega, double tau, int m, int p, int order, int m_cap) {
  AdaptDecision d;
  d.accepted = omega <= 1.0;
  const int m_lo = std::max(1, std::min(m - 1, static_cast<int>(std::ceil(0.75 * m))));
  const int m_hi = std::min(m_cap, std::max(m + 1, static_cast<int>(std::floor(4.0 * m / 3.0))));

  if (omega == 0.0) {
    d.tau_next = 2.0 * tau;
    d.m_next = m_lo;
    return d;
  }

  const double factor =
      std::clamp(0.9 * std::pow(1.0 / omega, 1.0 / static_cast<double>(order)), 0.2, 2.0);
  const double tau_move = tau * factor;

  // Dimension move: each extra basis vector is assumed to halve the error.
  const double dm = std::log2(omega / 0.9);
  int m_move = m + static_cast<int>(dm > 0 ? std::ceil(dm) : std::floor(dm));
  m_move = std::clamp(m_move, std::min(m_lo, m_hi), m_hi);

  // Operator applications per unit of the integration interval.
  const double cost_tau = (m + p) / tau_move;
  const double cost_m = (m_move + p) / tau;
  if (m_move != m && cost_m < cost_tau) {
    d.tau_next = tau;
    d.m_next = m_move;
  } else {
    d.tau_next = tau_move;
    d.m_next = std::min(m, m_cap);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Evaluator

PhiResult PhiEvaluator::evaluate(const PhiCombinationRequest& req) {
  const LinearOperator& op = req.op;
  const Index n = op.dim();
  if (!op) throw InvalidArgument("phi_combination: operator is empty");
  if (req.v.empty()) throw InvalidArgument("phi_combination: need at least v_0");
  for (std::size_t k = 0; k < req.v.size(); ++k) {
    if (req.v[k].size() != n) {
      throw InvalidArgument("phi_combination: v_" + std::to_string(k) + " has length " +
                            std::to_string(req.v[k].size()) + ", operator dimension is " +
                            std::to_string(n));
    }
  }
  if (req.scales.empty()) throw InvalidArgument("phi_combination: no output scales");
  for (std::size_t i = 0; i < req.scales.size(); ++i) {
    const double c = req.scales[i];
    if (!(c > 0.0 && c <= 1.0) || (i > 0 && !(c > req.scales[i - 1]))) {
      throw InvalidArgument("phi_combination: scales must be strictly increasing in (0, 1]");
    }
  }
  if (!(req.tol > 0.0)) throw InvalidArgument("phi_combination: tol must be positive");

  // p = 0 runs as p = 1 with v_1 = 0: u(t+tau) = w_0 + tau phi_1(tau M) M w_0.
  const int p = std::max(1, static_cast<int>(req.v.size()) - 1);
  if (p + 1 > kMaxPhiIndex) throw InvalidArgument("phi_combination: too many vectors");
  std::vector<Vector> v(req.v.begin(), req.v.end());
  if (v.size() < 2) v.push_back(Vector::Zero(n));

  PhiResult result;
  KrylovStats& stats = result.stats;
  const int m_cap = static_cast<int>(std::max<Index>(1, std::min<Index>(opts_.m_max, n)));
  int m = std::clamp(opts_.m_init, 1, m_cap);
  double tau = opts_.tau_init;
  double t = 0.0;
  Vector u = v[0];

  for (const double node : req.scales) {
    while (t < node) {
      const double remaining = node - t;
      w_.resize(1);
      w_[0] = u;
      int skipped = 0;
      stats.operator_applications +=
          substep_recurrence(op, v, t, w_, opts_.skip_zero_products, &skipped);
      stats.skipped_applications += skipped;

      const Vector& wp = w_[p];
      const double beta = wp.stableNorm();
      KrylovBasis basis;
      bool have_basis = false;

      for (;;) {
        const bool landing = tau >= remaining * (1.0 - 1e-12);
        const double tau_try = landing ? remaining : tau;

        Vector cand = w_[0];
        double coef = 1.0;
        for (int j = 1; j < p; ++j) {
          coef *= tau_try / j;
          cand += coef * w_[j];
        }

        double est = 0.0;
        int used = 0;
        if (beta > 0.0) {
          if (!have_basis) {
            basis = iom2_arnoldi(op, wp, m);
            stats.operator_applications += basis.operator_applications;
            have_basis = true;
          } else if (basis.dim() < m && !basis.breakdown) {
            const int before = basis.operator_applications;
            iom2_extend(basis, op, m);
            stats.operator_applications += basis.operator_applications - before;
          }
          used = std::min(m, basis.dim());
          const Matrix cols = phi_first_columns(p + 1, tau_try * basis.h.topLeftCorner(used, used));
          const double tau_p = std::pow(tau_try, p);
          Vector krylov = Vector::Zero(n);
          for (int i = 0; i < used; ++i) krylov += cols(i, p - 1) * basis.vectors[i];
          cand += (tau_p * beta) * krylov;

          const bool exact = basis.breakdown && used == basis.dim();
          if (!exact) {
            est = beta * std::abs(basis.h(used, used - 1)) * tau_p * tau_try *
                  std::abs(cols(used - 1, p));
          }
          if (used >= 3) {
            stats.max_orthogonality_loss = std::max(
                stats.max_orthogonality_loss, std::abs(basis.vectors[0].dot(basis.vectors[used - 1])));
          }
        }

        double omega = 0.0;
        if (!cand.allFinite()) {
          omega = 1e300;
        } else if (est > 0.0) {
          double scale = std::max(u.stableNorm(), cand.stableNorm());
          if (!(scale > 0.0)) scale = 1.0;
          omega = est / (req.tol * tau_try * scale);
        }

        const AdaptDecision d = adapt(omega, tau_try, m, p, p + 1, m_cap);
        if (d.accepted) {
          t = landing ? node : t + tau_try;
          u = std::move(cand);
          ++stats.substeps;
          stats.dims.push_back(used);
          tau = landing ? std::max(d.tau_next, tau) : d.tau_next;
          m = d.m_next;
          break;
        }

        ++stats.rejected;
        tau = d.tau_next;
        m = d.m_next;
        if (tau < opts_.tau_floor) {
          throw NumericalError("phi_combination: substep size fell below " +
                               std::to_string(opts_.tau_floor) + " at t = " + std::to_string(t));
        }
        if (stats.substeps + stats.rejected > opts_.max_substeps) {
          throw NumericalError("phi_combination: substep budget exhausted at t = " +
                               std::to_string(t));
        }
      }
    }
    result.outputs.push_back(u);
  }
  return result;
}

Vector phi_combination(const PhiCombinationRequest& req, const KrylovOptions& opts,
                       KrylovStats* stats) {
  PhiCombinationRequest single = req;
  single.scales = {1.0};
  PhiEvaluator evaluator(opts);
  PhiResult r = evaluator.evaluate(single);
  if (stats) stats->merge(r.stats);
  return std::move(r.outputs.front());
}

std::vector<Vector> phi_combination_multi(const PhiCombinationRequest& req,
                                          const KrylovOptions& opts, KrylovStats* stats) {
  PhiEvaluator evaluator(opts);
  PhiResult r = evaluator.evaluate(req);
  if (stats) stats->merge(r.stats);
  return std::move(r.outputs);
}

}  // namespace exprb
