#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "wmfg/bsde.hpp"
#include "wmfg/common.hpp"
#include "wmfg/girsanov.hpp"
#include "wmfg/measure.hpp"
#include "wmfg/model.hpp"
#include "wmfg/paths.hpp"

namespace wmfg {

struct MapResult;

struct FixedPointConfig {
  double damping = 1.0;  // lambda in (0, 1]
  int max_iter = 50;
  double tol = 1e-2;
  RegressionConfig regression;
  std::optional<double> cutoff;  // truncation level N of the law arguments
  // |Z| clip level; when unset the a-priori Z level is used if the model's
  // constants admit one.
  std::optional<double> z_clip;
  double prune_below = 1e-6;
  double rh_exponent = 2.0;
  int workers = 1;
  // Called with every solution-map output produced by iterate.
  std::function<void(const MapResult&)> observer;
};

/// Current (mu, nu) of the iteration. `theta`, `weights` and `y0` come from
/// the last application of the solution map (reference values initially).
struct FixedPointState {
  MeasureFlow mu;
  YoungMixture nu;
  DensityWeights weights;
  std::vector<Matrix> theta;
  double y0 = 0.0;
  int iteration = 0;
};

/// Reference law of X with a Dirac flow at Z = 0.
FixedPointState initial_state(const std::shared_ptr<const PathEnsemble>& ensemble);

struct MapDiagnostics {
  double y0 = 0.0;
  double bmo = 0.0;
  double clip_rate = 0.0;
  double kl_step = 0.0;
  double reverse_holder = 0.0;
  double max_condition = 0.0;
};

struct MapResult {
  FixedPointState state;
  MapDiagnostics diagnostics;
  BsdeSolution solution;
};

/// Law summaries passed to the coefficients for a frozen flow: one per grid
/// time, built on the cut-off particles when `cutoff` is set.
std::vector<MeasureSummary> state_law_summaries(const MeasureFlow& mu,
                                                const std::optional<double>& cutoff);

/// Driver of the lifted BSDE with frozen (mu, nu): the modified Hamiltonian
/// H(x, z, mu, q) = F(x, z, q) + z . B(x, z, mu) integrated over the mixture.
/// Captured summaries are owned by the returned spec.
DriverSpec lifted_driver(const ModelSpec& model, const MeasureFlow& mu, const YoungMixture& nu,
                         const std::optional<double>& cutoff, const std::optional<double>& z_clip);

/// One application of the solution map Phi(mu, nu).
MapResult solution_map(const ModelSpec& model, const std::shared_ptr<const PathEnsemble>& ensemble,
                       const FixedPointState& state, const FixedPointConfig& config);

/// Residual between two states: flow distance of the mu parts plus flow
/// distance of the nu parts.
double state_distance(const FixedPointState& a, const FixedPointState& b, int workers = 1);

enum class FixedPointStatus { converged, max_iter, diverged };
std::string to_string(FixedPointStatus status);

struct IterationRow {
  int k = 0;
  double residual = 0.0;
  double y0 = 0.0;
  double bmo = 0.0;
  double kl_step = 0.0;
  double clip_rate = 0.0;
};

struct FixedPointReport {
  std::vector<IterationRow> rows;
  FixedPointStatus status = FixedPointStatus::max_iter;
  double final_residual = 0.0;  // residual after one extra map application
};

struct IterationResult {
  FixedPointState state;
  FixedPointReport report;
};

/// Damped iteration state_{k+1} = mix(state_k, Phi(state_k); 1 - lambda, lambda),
/// stopping when the residual drops to `tol`. On convergence the returned
/// state is the Dirac output of the final map application.
IterationResult iterate(const ModelSpec& model, const std::shared_ptr<const PathEnsemble>& ensemble,
                        const FixedPointConfig& config);
IterationResult iterate(const ModelSpec& model, const std::shared_ptr<const PathEnsemble>& ensemble,
                        const FixedPointConfig& config, FixedPointState start);

struct AprioriBounds {
  double Lx_bar = 0.0;  // bound on sqrt(E[sup |X|^2])
  double Ly_bar = 0.0;  // bound on sup |Y|
  double Lz_bar = 0.0;  // bound on the BMO norm of Z (square root of the conditional energy)
};

/// Explicit a-priori bounds composed from the Gronwall / strictly-quadratic /
/// bootstrap chain. Throws ParameterError when gamma_tilde <= 0 or the model
/// has no strictly quadratic sign.
AprioriBounds apriori_bounds(const GrowthConstants& constants, double horizon, double x0_norm);

struct TruncationRow {
  double level = 0.0;
  FixedPointStatus status = FixedPointStatus::max_iter;
  int iterations = 0;
  double y0 = 0.0;
  double distance_to_previous = 0.0;  // NaN for the first row
  double active_fraction = 0.0;       // cut-off activity on the solved (X, Z) flow
};

struct TruncationResult {
  std::vector<TruncationRow> rows;
  bool converged = false;  // last two solutions within tol and cut-off inactive
  FixedPointState state;
  FixedPointReport last_report;
};

TruncationResult truncated_solve(const ModelSpec& model,
                                 const std::shared_ptr<const PathEnsemble>& ensemble,
                                 const std::vector<double>& schedule, const FixedPointConfig& config,
                                 double tol = 2e-2, double inactive_fraction = 1e-3);

/// Deterministic bounded deviation direction delta(t) added to the candidate control.
struct Perturbation {
  std::string name;
  std::function<SmallVector(double t)> shift;
};

/// Ten directions: constant shifts +-0.25, +-0.5, linear ramps +-0.5 t/T,
/// cosines +-0.5 cos(pi t / T) and half-horizon steps +-0.25 1{t < T/2}.
std::vector<Perturbation> default_perturbations(Index dim_action, double horizon);

struct PerturbationRow {
  std::string name;
  double payoff = 0.0;
  double gain = 0.0;  // J(alpha + delta) - J(alpha_hat)
  double std_error = 0.0;
  bool passed = true;
};

struct EquilibriumReport {
  double y0 = 0.0;
  double payoff = 0.0;  // J_W(alpha_hat, m_hat)
  double payoff_se = 0.0;
  bool payoff_identity = true;
  std::vector<PerturbationRow> perturbations;
  bool no_profitable_deviation = true;
  double residual = 0.0;
  bool residual_ok = true;
  bool verified = true;
};

struct PayoffEstimate {
  WeightedEstimate payoff;
  Vector per_path;   // payoff per path
  Vector weights;    // normalised terminal weights
  MeasureFlow law;   // law of X under the induced measure
  std::vector<SmallVector> action_means;  // per step, the action law used in the costs
};

/// J_W(alpha, m) with m = (state law `mu`, action law) by reweighting: the
/// action law is the induced law of `alpha` unless `action_means` is given.
PayoffEstimate estimate_payoff(const ModelSpec& model,
                               const std::shared_ptr<const PathEnsemble>& ensemble,
                               const MeasureFlow& mu, const std::vector<Matrix>& alpha,
                               const std::vector<SmallVector>* action_means = nullptr,
                               int workers = 1);

/// Candidate control alpha_hat_t = Lambda_t(X, Z_t, mu_t) for Z on N slices.
std::vector<Matrix> candidate_control(const ModelSpec& model, const MeasureFlow& mu,
                                      const std::vector<Matrix>& Z, int workers = 1);

/// Z slices (N of M x d) stored in the Dirac component of a solved state.
std::vector<Matrix> state_z(const FixedPointState& state);

/// Re-solves the lifted BSDE with the state's frozen laws m_hat, takes
/// alpha_hat = Lambda(X, Z, mu_hat) and checks (i) |Y0 - J_W(alpha_hat, m_hat)|
/// <= 3 SE, (ii) no perturbation gains more than 3 paired SE, (iii) the law
/// of X under alpha_hat stays within tol of mu_hat.
EquilibriumReport verify_equilibrium(const ModelSpec& model,
                                     const std::shared_ptr<const PathEnsemble>& ensemble,
                                     const FixedPointState& state,
                                     const std::vector<Perturbation>& perturbations,
                                     const FixedPointConfig& config);

}  // namespace wmfg
