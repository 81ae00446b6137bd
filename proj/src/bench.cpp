#include "exprb/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

namespace exprb {

namespace {

struct NamedIntegrator {
  IntegratorId id;
  const char* name;
};

constexpr NamedIntegrator kIntegrators[] = {
    {IntegratorId::ExprbEuler, "exprb-euler"}, {IntegratorId::Exprb42, "exprb42"},
    {IntegratorId::Pexprb43, "pexprb43"},      {IntegratorId::Rk4, "rk4"},
    {IntegratorId::Bdf1, "bdf1"},              {IntegratorId::Verlet, "verlet"},
    {IntegratorId::ImexSplitting, "imex-splitting"},
};

std::string fmt(double x) {
  std::ostringstream s;
  s << std::setprecision(17) << x;
  return s.str();
}

double relative_drift(const EnergyReport& e0, const EnergyReport& e1) {
  const double scale = std::abs(e0.total) > 0.0 ? std::abs(e0.total) : 1.0;
  return std::abs(e1.total - e0.total) / scale;
}

// Runs f(i) for i in [0, n) on up to `threads` workers; results are written by index.
template <typename F>
void parallel_for(int n, int threads, F&& f) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::mutex mu;
  int next = 0;
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        int i;
        {
          std::lock_guard<std::mutex> lock(mu);
          if (next >= n) return;
          i = next++;
        }
        f(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

std::string integrator_name(IntegratorId id) {
  for (const auto& e : kIntegrators)
    if (e.id == id) return e.name;
  return "?";
}

IntegratorId parse_integrator(const std::string& name) {
  for (const auto& e : kIntegrators)
    if (name == e.name) return e.id;
  std::string known;
  for (const auto& e : kIntegrators) known += std::string(known.empty() ? "" : ", ") + e.name;
  throw InvalidArgument("unknown integrator '" + name + "' (known: " + known + ")");
}

const std::vector<IntegratorId>& all_integrators() {
  static const std::vector<IntegratorId> ids = [] {
    std::vector<IntegratorId> v;
    for (const auto& e : kIntegrators) v.push_back(e.id);
    return v;
  }();
  return ids;
}

bool is_exponential(IntegratorId id) {
  return id == IntegratorId::ExprbEuler || id == IntegratorId::Exprb42 ||
         id == IntegratorId::Pexprb43;
}

Model make_model(const ParticleSystem& sys, std::string name) {
  Model m;
  m.name = std::move(name);
  m.assembled = std::make_shared<const AssembledSystem>(sys);
  m.form = std::make_shared<const StiffFirstOrderForm>(m.assembled);
  m.u0 = m.form->initial_state();
  return m;
}

Model load_model(const std::filesystem::path& scene_path) {
  Scene s = load_scene(scene_path);
  std::string name = s.name.empty() ? scene_path.stem().string() : s.name;
  return make_model(s.system, std::move(name));
}

StepFunction make_stepper(const SemilinearProblem& problem, IntegratorId id, double krylov_tol) {
  switch (id) {
    case IntegratorId::ExprbEuler:
      return make_exponential_stepper(problem, ExpScheme::Euler, krylov_tol);
    case IntegratorId::Exprb42:
      return make_exponential_stepper(problem, ExpScheme::Exprb42, krylov_tol);
    case IntegratorId::Pexprb43:
      return make_exponential_stepper(problem, ExpScheme::Pexprb43, krylov_tol);
    case IntegratorId::Rk4: return make_rk4_stepper(problem);
    case IntegratorId::Bdf1: return make_bdf1_stepper(problem);
    default:
      throw InvalidArgument(integrator_name(id) + " needs a mass-spring scene");
  }
}

StepFunction make_stepper(const Model& model, IntegratorId id, double krylov_tol) {
  switch (id) {
    case IntegratorId::Verlet: return make_verlet_stepper(model.form);
    case IntegratorId::ImexSplitting: return make_imex_stepper(model.form);
    default: return make_stepper(model.form->problem(), id, krylov_tol);
  }
}

// run -----------------------------------------------------------------------

void RunConfig::validate() const {
  if (!(h > 0.0) || !std::isfinite(h)) throw InvalidArgument("h must be positive");
  if (!(t_end >= 0.0) || !std::isfinite(t_end)) throw InvalidArgument("t_end must be >= 0");
  if (!(krylov_tol > 0.0)) throw InvalidArgument("Krylov tolerance must be positive");
  if (cadence < 1) throw InvalidArgument("cadence must be >= 1");
  if (!(perturb >= 0.0)) throw InvalidArgument("perturb must be >= 0");
}

void write_trace_header(std::ostream& out, const RunConfig& cfg, const std::string& scene_name) {
  out << "# exprb-trace v" << kTraceVersion << "\n";
  out << "# scene=" << scene_name << " integrator=" << integrator_name(cfg.integrator)
      << " h=" << fmt(cfg.h) << " t_end=" << fmt(cfg.t_end) << " krylov_tol=" << fmt(cfg.krylov_tol)
      << " cadence=" << cfg.cadence << " seed=" << cfg.seed << " perturb=" << fmt(cfg.perturb)
      << "\n";
  out << "step,t,kinetic,potential,total,state_norm,substeps,max_krylov_dim,"
         "operator_applications,rejected,wall_seconds\n";
}

void write_trace_row(std::ostream& out, const TraceRow& r) {
  out << r.step << ',' << fmt(r.t) << ',' << fmt(r.energy.kinetic) << ','
      << fmt(r.energy.potential) << ',' << fmt(r.energy.total) << ',' << fmt(r.state_norm) << ','
      << r.substeps << ',' << r.max_krylov_dim << ',' << r.operator_applications << ','
      << r.rejected << ',' << fmt(r.wall_seconds) << '\n';
}

RunSummary run(const Model& model, const RunConfig& cfg, std::ostream* trace) {
  cfg.validate();
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();

  Vector u0 = model.u0;
  if (cfg.perturb > 0.0) {
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> ud(-cfg.perturb, cfg.perturb);
    Vector x, v;
    model.form->from_state(u0, x, v);
    for (Index i = 0; i < v.size(); ++i) v(i) += ud(rng);
    u0 = model.form->to_state(x, v);
  }

  RunSummary s;
  s.initial = model.form->energy(u0);
  s.final = s.initial;
  if (trace) write_trace_header(*trace, cfg, model.name);

  StepFunction step = make_stepper(model, cfg.integrator, cfg.krylov_tol);
  const long n_steps =
      cfg.t_end == 0.0 ? 0 : static_cast<long>(std::ceil(cfg.t_end / cfg.h * (1.0 - 1e-12)));
  auto last = Clock::now();
  long index = 0;
  Observer observe = [&](double t, const Vector& u, const KrylovStats& ks) {
    const auto now = Clock::now();
    TraceRow row;
    row.step = index;
    row.t = t;
    row.energy = model.form->energy(u);
    row.state_norm = u.norm();
    row.substeps = ks.substeps;
    row.max_krylov_dim = ks.max_dim();
    row.operator_applications = ks.operator_applications;
    row.rejected = ks.rejected;
    row.wall_seconds = cfg.timing ? std::chrono::duration<double>(now - last).count() : 0.0;
    last = now;
    s.final = row.energy;
    s.t_final = t;
    s.steps = index;
    s.substeps += ks.substeps;
    s.operator_applications += ks.operator_applications;
    s.rejected += ks.rejected;
    s.max_krylov_dim = std::max(s.max_krylov_dim, row.max_krylov_dim);
    if (trace && (index % cfg.cadence == 0 || index == n_steps)) write_trace_row(*trace, row);
    ++index;
  };

  try {
    integrate(step, u0, 0.0, cfg.t_end, cfg.h, observe, false);
  } catch (const NonFiniteState& e) {
    s.finite = false;
    s.failed_step = e.step();
    s.error = e.what();
  } catch (const NumericalError& e) {
    s.finite = false;
    s.failed_step = index;
    s.error = std::string("step ") + std::to_string(index) + ": " + e.what();
  }
  s.energy_drift = relative_drift(s.initial, s.final);
  if (cfg.timing) s.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return s;
}

std::string summary_json(const RunConfig& cfg, const RunSummary& s) {
  auto energy = [](const EnergyReport& e) {
    return nlohmann::json{{"kinetic", e.kinetic}, {"potential", e.potential}, {"total", e.total}};
  };
  nlohmann::json j = {
      {"format", "exprb-summary v1"},
      {"scene", cfg.scene_path},
      {"integrator", integrator_name(cfg.integrator)},
      {"h", cfg.h},
      {"t_end", cfg.t_end},
      {"krylov_tol", cfg.krylov_tol},
      {"seed", cfg.seed},
      {"perturb", cfg.perturb},
      {"finite", s.finite},
      {"steps", s.steps},
      {"t_final", s.t_final},
      {"energy_initial", energy(s.initial)},
      {"energy_final", energy(s.final)},
      {"energy_drift", s.energy_drift},
      {"krylov_substeps", s.substeps},
      {"operator_applications", s.operator_applications},
      {"rejected_substeps", s.rejected},
      {"max_krylov_dim", s.max_krylov_dim},
      {"wall_seconds", s.wall_seconds},
  };
  if (!s.finite) {
    j["failed_step"] = s.failed_step;
    j["error"] = s.error;
  }
  return j.dump(2) + "\n";
}

// converge ------------------------------------------------------------------

double fit_slope(const std::vector<double>& h, const std::vector<double>& error) {
  if (h.size() != error.size()) throw InvalidArgument("fit_slope: size mismatch");
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (!(error[i] > 0.0) || !std::isfinite(error[i])) continue;
    const double x = std::log(h[i]), y = std::log(error[i]);
    n += 1;
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

ConvergenceReport converge(const Model& model, const ConvergenceConfig& cfg) {
  if (cfg.h.size() < 3) throw InvalidArgument("converge: need at least 3 step sizes");
  for (double h : cfg.h)
    if (!(h > 0.0)) throw InvalidArgument("converge: step sizes must be positive");
  if (!(cfg.t_end > 0.0)) throw InvalidArgument("converge: t_end must be positive");
  if (cfg.integrators.empty()) throw InvalidArgument("converge: no integrators");

  ConvergenceReport rep;
  rep.t_end = cfg.t_end;
  rep.norm = cfg.norm;
  rep.h_ref = *std::min_element(cfg.h.begin(), cfg.h.end()) / 16.0;
  const Vector ref = integrate(make_stepper(model, IntegratorId::Exprb42, rep.ref_tol), model.u0,
                               0.0, cfg.t_end, rep.h_ref, {}, false)
                         .u.back();

  auto error_of = [&](const Vector& u) {
    if (cfg.norm == ErrorNorm::State) return (u - ref).norm() / ref.norm();
    Vector x, v, xr, vr;
    model.form->from_state(u, x, v);
    model.form->from_state(ref, xr, vr);
    return (x - xr).norm() / xr.norm();
  };

  const int n_int = static_cast<int>(cfg.integrators.size());
  const int n_h = static_cast<int>(cfg.h.size());
  rep.series.resize(n_int);
  for (int i = 0; i < n_int; ++i) {
    rep.series[i].integrator = cfg.integrators[i];
    rep.series[i].h = cfg.h;
    rep.series[i].error.assign(n_h, std::numeric_limits<double>::quiet_NaN());
    rep.series[i].diverged.assign(n_h, false);
  }
  parallel_for(n_int * n_h, cfg.threads, [&](int job) {
    ConvergenceSeries& s = rep.series[job / n_h];
    const int k = job % n_h;
    try {
      const StepFunction step = make_stepper(model, s.integrator, cfg.krylov_tol);
      const Vector u = integrate(step, model.u0, 0.0, cfg.t_end, cfg.h[k], {}, false).u.back();
      const double e = error_of(u);
      // A run that ends far from the reference has left the basin; treat as diverged.
      if (std::isfinite(e) && e < 1.0) s.error[k] = e;
      else s.diverged[k] = true;
    } catch (const NonFiniteState&) {
      s.diverged[k] = true;
    } catch (const NumericalError&) {
      s.diverged[k] = true;
    }
  });
  for (auto& s : rep.series) {
    std::vector<double> hs, es;
    for (int k = 0; k < n_h; ++k) {
      if (s.diverged[k]) continue;
      hs.push_back(s.h[k]);
      es.push_back(s.error[k]);
    }
    s.fitted = static_cast<int>(hs.size());
    if (s.fitted >= 2) s.slope = fit_slope(hs, es);
  }
  return rep;
}

void write_convergence_csv(std::ostream& out, const ConvergenceReport& r) {
  out << "# exprb-converge v1\n";
  out << "# reference=exprb42 h_ref=" << fmt(r.h_ref) << " krylov_tol=" << fmt(r.ref_tol)
      << " t_end=" << fmt(r.t_end) << " norm=" << (r.norm == ErrorNorm::State ? "state" : "position")
      << "\n";
  out << "integrator,h,error,diverged\n";
  for (const auto& s : r.series) {
    for (std::size_t k = 0; k < s.h.size(); ++k) {
      out << integrator_name(s.integrator) << ',' << fmt(s.h[k]) << ','
          << (s.diverged[k] ? std::string("nan") : fmt(s.error[k])) << ','
          << (s.diverged[k] ? 1 : 0) << '\n';
    }
  }
}

// stability -----------------------------------------------------------------

bool blows_up(const StabilityProbe& probe, double h) {
  const double limit = 10.0 * std::max(probe.u0.squaredNorm(), 1e-300);
  Vector u = probe.u0;
  try {
    for (int i = 0; i < probe.steps; ++i) {
      u = probe.step(u, h, nullptr);
      if (!u.allFinite() || u.squaredNorm() > limit) return true;
    }
  } catch (const NumericalError&) {
    return true;
  }
  return false;
}

double round_significant(double x, int digits) {
  if (x == 0.0 || !std::isfinite(x)) return x;
  const double p = std::pow(10.0, digits - 1 - static_cast<int>(std::floor(std::log10(std::abs(x)))));
  return std::round(x * p) / p;
}

StabilityResult stability_limit(const StabilityProbe& probe, double h_lo, double h_hi,
                                double rel_tol) {
  if (!(h_lo > 0.0 && h_hi > h_lo)) throw InvalidArgument("stability: need 0 < h_lo < h_hi");
  StabilityResult r;
  r.evaluations = 2;
  if (blows_up(probe, h_lo)) throw InvalidArgument("stability: no bracket, h_lo is unstable");
  if (!blows_up(probe, h_hi)) throw InvalidArgument("stability: no bracket, h_hi is stable");
  double lo = h_lo, hi = h_hi;
  while (hi / lo > 1.0 + rel_tol) {
    const double mid = std::sqrt(lo * hi);
    ++r.evaluations;
    (blows_up(probe, mid) ? hi : lo) = mid;
  }
  r.h_stable = lo;
  r.h_unstable = hi;
  r.boundary = round_significant(std::sqrt(lo * hi), 2);
  return r;
}

SemilinearProblem linear_scalar_problem(double lambda) {
  SemilinearProblem p;
  p.dim = 1;
  p.rhs = [lambda](const Vector& u) -> Vector { return lambda * u; };
  p.jacobian_at = [lambda](const Vector&) {
    return LinearOperator::from_dense(Matrix::Constant(1, 1, lambda));
  };
  return p;
}

ParticleSystem harmonic_scene(double omega) {
  if (!(omega > 0.0)) throw InvalidArgument("harmonic_scene: omega must be positive");
  ParticleSystem sys;
  sys.add_particle(1.0, Vec3::Zero(), Vec3::Zero(), true);
  sys.add_particle(1.0, Vec3(1.0, 0.5, -0.25), Vec3(0.0, 0.3, 0.1));
  sys.add_spring(0, 1, omega * omega, 0.0);
  return sys;
}

// verify --------------------------------------------------------------------

SchemeSpec scheme_corrupted_exprb42() {
  SchemeSpec s = scheme_exprb42();
  s.name = "exprb42-corrupted";
  for (auto& w : s.b[0]) w.coeff *= 1.0 + 1e-3;
  return s;
}

std::vector<VerifyRow> verify(const std::vector<SchemeSpec>& schemes, std::uint64_t seed,
                              int draws, double z_norm) {
  if (draws < 1) throw InvalidArgument("verify: draws must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  const Index n = 6;
  auto random = [&] {
    Matrix m(n, n);
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < n; ++i) m(i, j) = nd(rng);
    return m;
  };
  std::vector<Matrix> zs, ks;
  for (int d = 0; d < draws; ++d) {
    Matrix z = random();
    const double target = z_norm * (1.0 - ud(rng));  // (0, z_norm]
    z *= target / z.operatorNorm();
    Matrix k = random();
    k /= k.operatorNorm();
    zs.push_back(std::move(z));
    ks.push_back(std::move(k));
  }

  std::vector<VerifyRow> rows;
  for (const SchemeSpec& s : schemes) {
    VerifyRow row;
    row.scheme = s.name;
    for (int d = 0; d < draws; ++d) {
      const auto res = verify_order_conditions(s, zs[d], ks[d]);
      for (int c = 0; c < 4; ++c) row.max_residual[c] = std::max(row.max_residual[c], res[c]);
      const double ref = 2.0 * phi_dense(3, zs[d]).back().norm();
      row.max_relative_condition1 = std::max(row.max_relative_condition1, res[0] / ref);
    }
    rows.push_back(row);
  }
  return rows;
}

int thread_count_from_env() {
  const char* v = std::getenv("EXPRB_THREADS");
  if (!v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (end == v || *end != '\0' || n < 1) return 1;
  return static_cast<int>(std::min<long>(n, 256));
}

}  // namespace exprb
