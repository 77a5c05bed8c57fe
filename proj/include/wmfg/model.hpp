#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "wmfg/common.hpp"
#include "wmfg/paths.hpp"

namespace wmfg {

class MeasureFlow;

/// Moments of a marginal m_t = (m^x_t, m^a_t). Built-in models interact only
/// through these means; `flow`/`step` give access to the particles for
/// richer functionals.
struct MeasureSummary {
  SmallVector state_mean;
  SmallVector action_mean;
  double first_moment = 0.0;       // M_1(m_t)
  std::optional<Matrix> quantiles;  // rows: levels, cols: state coordinates
  const MeasureFlow* flow = nullptr;
  Index step = 0;

  /// Summary of delta_0 on (state, action).
  static MeasureSummary dirac_zero(Index dim_state, Index dim_action);
};

enum class QuadraticSign { upper, lower, none };

/// Growth constants of the game coefficients.
struct GrowthConstants {
  double gamma = 1.0;
  double gamma_tilde = 1.0;
  double lip_K = 1.0;
  double bound_L = 1.0;
  double sigma_lip = 1.0;      // K_sigma
  double sigma_at_zero = 1.0;  // sup_t |sigma_t(0)|
  QuadraticSign strong_quad_sign = QuadraticSign::none;
  bool bounded_in_mf = false;
};

/// Coefficient interface of a game in weak formulation. All callables must be
/// pure: they are evaluated concurrently from many workers.
///
/// The drift ratio sigma^{-1} b only sees the state-law summary, the running
/// cost sees the full (state, action) summary, which is the separability
/// structure the fixed point relies on.
struct ModelSpec {
  using Sigma = std::function<SmallMatrix(double t, const PathView& x)>;
  using DriftRatio = std::function<SmallVector(double t, const PathView& x,
                                               const MeasureSummary& state_law,
                                               const SmallVector& a)>;
  using RunningCost = std::function<double(double t, const PathView& x,
                                           const MeasureSummary& law, const SmallVector& a)>;
  using TerminalCost = std::function<double(const PathView& x, const MeasureSummary& state_law)>;
  using Maximizer = std::function<SmallVector(double t, const PathView& x, const SmallVector& z,
                                              const MeasureSummary& state_law)>;

  std::string name;
  Index dim_state = 1;
  Index dim_action = 1;
  SmallVector x0;
  double horizon = 1.0;

  Sigma sigma;
  DriftRatio drift_ratio;
  RunningCost running_cost;
  TerminalCost terminal_cost;
  Maximizer maximizer;

  GrowthConstants constants;
  // Optional box constraint on actions; validated, never projected.
  std::optional<std::pair<SmallVector, SmallVector>> action_box;

  /// Throws ParameterError on inconsistent dimensions or missing callables.
  void validate() const;
};

/// h_t(x, z, m, a) = f_t(x, m, a) + (sigma^{-1} b)_t(x, m, a) . z
double reduced_hamiltonian(const ModelSpec& model, double t, const PathView& x,
                           const SmallVector& z, const MeasureSummary& m, const SmallVector& a);

struct MaximizerSample {
  double t = 0.0;
  PathView path;
  SmallVector z;
  MeasureSummary law;
};

struct MaximizerReport {
  Index n_samples = 0;
  double worst_violation = 0.0;
  Index worst_sample = -1;
  double tolerance = 0.0;
  bool valid = true;

  /// Throws ModelError naming the worst sample if the maximizer is invalid.
  void require() const;
};

/// For each sample, compares h at the model's maximizer against h on an
/// axis-aligned grid of actions around it (offsets in [-radius, radius]).
MaximizerReport check_maximizer(const ModelSpec& model, const std::vector<MaximizerSample>& samples,
                                double tolerance = 1e-10, double radius = 2.0,
                                int points_per_side = 8);

/// Worst growth-condition excess over sampled inputs; <= 0 means the
/// drift-ratio / running-cost / maximizer bounds held on every sample.
struct GrowthReport {
  double drift_excess = -1e300;
  double cost_excess = -1e300;
  double maximizer_excess = -1e300;
  bool holds() const { return drift_excess <= 0 && cost_excess <= 0 && maximizer_excess <= 0; }
};
GrowthReport check_growth(const ModelSpec& model, const std::vector<MaximizerSample>& samples,
                          const std::vector<SmallVector>& actions);

using ScalarFunction = std::function<double(double)>;

struct GbmParams {
  double x0 = 0.25;
  double horizon = 1.0;
  ScalarFunction phi = [](double v) { return std::tanh(v); };
  ScalarFunction fbar = [](double v) { return std::clamp(v, -1.0, 1.0); };
};

struct AdditiveParams {
  double x0 = 0.25;
  double horizon = 0.5;
  ScalarFunction phi = [](double v) { return std::tanh(v); };
  ScalarFunction fbar = [](double v) { return std::clamp(v, -1.0, 1.0); };
  // false drops every law argument: b = a, f = -a^2/2 + phi(0) a, g = x_T.
  bool mean_field = true;
};

/// One-dimensional geometric Brownian motion example: sigma_t(x) = x_t,
/// sigma^{-1} b = a + E[x_t], g = E[x_T],
/// f = (-a/2 + phi(E[x_t])) a + fbar(x_t) E[a], maximizer z + phi(E[x_t]).
ModelSpec builtin_example_gbm(const GbmParams& params = {});

/// One-dimensional additive example with a cost unbounded in the law:
/// sigma = 1, sigma^{-1} b = a + E[x_t], g = E[x_T],
/// f = (-a/2 + phi(E[x_t])) a + fbar(x_t) (E[x_t] + E[a]).
ModelSpec builtin_example_additive(const AdditiveParams& params = {});

/// Built-in lookup by name ("gbm", "additive").
ModelSpec builtin_model(const std::string& name, double x0, double horizon, bool mean_field = true);

}  // namespace wmfg
