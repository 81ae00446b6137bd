#pragma once

// Benchmark driver: trace runs, convergence studies, stability bisection and
// order-condition reports. The CLI in tools/ is a thin layer over this.
//
// Trace CSV (version 1):
//
//   # exprb-trace v1
//   # scene=<name> integrator=<id> h=<h> t_end=<T> krylov_tol=<tol> cadence=<c> seed=<s> perturb=<p>
//   step,t,kinetic,potential,total,state_norm,substeps,max_krylov_dim,operator_applications,rejected,wall_seconds
//
// One row per `cadence` steps, plus the initial and the final state. Krylov
// columns are per step (zero for non-exponential integrators). wall_seconds is
// 0 unless timing is enabled, so traces are byte-identical across runs.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "exprb/baselines.hpp"
#include "exprb/integrators.hpp"
#include "exprb/oscillators.hpp"
#include "exprb/scene_io.hpp"

namespace exprb {

enum class IntegratorId { ExprbEuler, Exprb42, Pexprb43, Rk4, Bdf1, Verlet, ImexSplitting };

std::string integrator_name(IntegratorId id);
/// Accepts the names printed by integrator_name. Throws InvalidArgument.
IntegratorId parse_integrator(const std::string& name);
const std::vector<IntegratorId>& all_integrators();
bool is_exponential(IntegratorId id);

/// A scene ready for integration.
struct Model {
  std::string name;
  std::shared_ptr<const AssembledSystem> assembled;
  std::shared_ptr<const StiffFirstOrderForm> form;
  Vector u0;
};

Model make_model(const ParticleSystem& sys, std::string name = "");
Model load_model(const std::filesystem::path& scene_path);

StepFunction make_stepper(const Model& model, IntegratorId id, double krylov_tol);
/// For plain problems; Verlet and the IMEX splitting need a scene and throw InvalidArgument.
StepFunction make_stepper(const SemilinearProblem& problem, IntegratorId id, double krylov_tol);

// run -----------------------------------------------------------------------

struct RunConfig {
  std::string scene_path;
  IntegratorId integrator = IntegratorId::Exprb42;
  double h = 1e-3;
  double t_end = 1.0;
  double krylov_tol = 1e-8;
  std::string trace_path;    // "-" for stdout, empty for none
  std::string summary_path;  // JSON; empty for none
  int cadence = 1;
  std::uint64_t seed = 0;
  double perturb = 0.0;  // uniform random velocity kick of this size on free particles
  bool timing = false;

  /// Throws InvalidArgument on non-positive h, negative t_end, bad cadence or tolerance.
  void validate() const;
};

struct TraceRow {
  long step = 0;
  double t = 0.0;
  EnergyReport energy;
  double state_norm = 0.0;
  int substeps = 0;
  int max_krylov_dim = 0;
  long operator_applications = 0;
  int rejected = 0;
  double wall_seconds = 0.0;
};

constexpr int kTraceVersion = 1;

void write_trace_header(std::ostream& out, const RunConfig& cfg, const std::string& scene_name);
void write_trace_row(std::ostream& out, const TraceRow& row);

struct RunSummary {
  bool finite = true;
  long steps = 0;
  long failed_step = -1;
  double t_final = 0.0;
  EnergyReport initial;
  EnergyReport final;
  double energy_drift = 0.0;  // |E(t_final) - E(0)| / |E(0)|
  long substeps = 0;
  long operator_applications = 0;
  long rejected = 0;
  int max_krylov_dim = 0;
  double wall_seconds = 0.0;
  std::string error;
};

/// Applies cfg.perturb (seeded) to the model's initial state and integrates.
/// A non-finite state or solver failure ends the run with finite = false.
RunSummary run(const Model& model, const RunConfig& cfg, std::ostream* trace);
std::string summary_json(const RunConfig& cfg, const RunSummary& s);

// converge ------------------------------------------------------------------

enum class ErrorNorm { State, Position };

struct ConvergenceSeries {
  IntegratorId integrator = IntegratorId::Exprb42;
  std::vector<double> h;
  std::vector<double> error;  // NaN where the run diverged
  std::vector<bool> diverged;
  double slope = std::numeric_limits<double>::quiet_NaN();
  int fitted = 0;
};

struct ConvergenceConfig {
  std::vector<IntegratorId> integrators;
  std::vector<double> h;  // at least 3
  double t_end = 0.1;
  double krylov_tol = 1e-10;
  ErrorNorm norm = ErrorNorm::State;
  int threads = 1;
};

struct ConvergenceReport {
  double t_end = 0.0;
  double h_ref = 0.0;
  double ref_tol = 1e-12;
  ErrorNorm norm = ErrorNorm::State;
  std::vector<ConvergenceSeries> series;
};

/// Errors against exprb42 at min(h)/16 with Krylov tol 1e-12, relative in the
/// chosen norm. Diverged runs are marked and left out of the fit.
ConvergenceReport converge(const Model& model, const ConvergenceConfig& cfg);
/// Least-squares slope of log(error) against log(h).
double fit_slope(const std::vector<double>& h, const std::vector<double>& error);
void write_convergence_csv(std::ostream& out, const ConvergenceReport& r);

// stability -----------------------------------------------------------------

struct StabilityProbe {
  StepFunction step;
  Vector u0;
  int steps = 1000;
};

/// Blowup within probe.steps: a non-finite state, a solver failure, or
/// ||u||^2 > 10 ||u0||^2. ||u||^2 / 2 is the energy of the linear part.
bool blows_up(const StabilityProbe& probe, double h);

struct StabilityResult {
  double h_stable = 0.0;
  double h_unstable = 0.0;
  double boundary = 0.0;  // geometric midpoint rounded to 2 significant figures
  int evaluations = 0;
};

/// Bisects (geometrically) until h_unstable / h_stable < 1 + rel_tol. Throws
/// InvalidArgument unless h_lo is stable and h_hi blows up.
StabilityResult stability_limit(const StabilityProbe& probe, double h_lo, double h_hi,
                                double rel_tol = 1e-3);
double round_significant(double x, int digits);

/// u' = lambda u on R^1.
SemilinearProblem linear_scalar_problem(double lambda);
/// One free particle on a zero-rest-length spring to an anchor: omega = sqrt(k / m), 3 DOFs.
ParticleSystem harmonic_scene(double omega);

// verify --------------------------------------------------------------------

struct VerifyRow {
  std::string scheme;
  std::array<double, 4> max_residual{};
  /// Condition 1 residual over ||2 phi_3(Z)||, for the fault-injection check.
  double max_relative_condition1 = 0.0;
};

/// exprb42 with its stage weight b_2 scaled by (1 + 1e-3).
SchemeSpec scheme_corrupted_exprb42();
/// Max residuals over `draws` random Z with ||Z||_2 = z_norm * U(0, 1] and
/// unit-norm random K.
std::vector<VerifyRow> verify(const std::vector<SchemeSpec>& schemes, std::uint64_t seed,
                              int draws = 5, double z_norm = 5.0);

/// Worker count for parameter sweeps: EXPRB_THREADS if set and positive, else 1.
int thread_count_from_env();

}  // namespace exprb
