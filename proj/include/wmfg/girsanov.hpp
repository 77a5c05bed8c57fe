#pragma once

#include <vector>

#include "wmfg/common.hpp"
#include "wmfg/paths.hpp"
#include "wmfg/regression.hpp"

namespace wmfg {

/// Discrete stochastic exponential E(theta . W) stored in log space.
struct DensityWeights {
  TimeGrid grid;
  Matrix log_weights;    // M x (N + 1), column 0 is zero
  Vector log_normalizer;  // per grid time; zero when not normalised
  bool normalized = false;

  Index n_paths() const { return log_weights.rows(); }
  /// Weights at grid time n (mean one when normalised).
  Vector at(Index n) const;
  /// Full M x (N + 1) table of weights.
  Matrix table() const;

  static DensityWeights unit(const TimeGrid& grid, Index n_paths);
};

/// log E_{n+1} = log E_n + theta_n . dW_n - |theta_n|^2 dt / 2.
/// With `normalize`, every grid-time column is rescaled to mean one.
/// Throws OverflowError when |log E| leaves the double range of exp.
DensityWeights stochastic_exponential(const std::vector<Matrix>& theta,
                                      const std::vector<Matrix>& increments, const TimeGrid& grid,
                                      bool normalize = true);

struct WeightedEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Mean of w_i v_i / M with its Monte-Carlo standard error.
WeightedEstimate weighted_mean(const Eigen::Ref<const Vector>& weights,
                               const Eigen::Ref<const Vector>& values);

/// E^{P^w}[values] using the weights at grid time n.
double reweight_expectation(const DensityWeights& weights, const Eigen::Ref<const Vector>& values,
                            Index n);

struct BmoEstimate {
  double value = 0.0;       // max over grid times of the upper quantile
  Vector per_step;          // upper quantile of the fitted conditional energy
  Index fallback_steps = 0;  // slices where the regression failed
};

/// Empirical sup_t ess-sup E[int_t^T |Z|^2 ds | F_t] (squared BMO norm) over
/// grid times, using the 99.5% quantile of regression-fitted conditionals.
/// With `weights`, conditional expectations are taken under the tilted measure.
BmoEstimate bmo_norm_estimate(const std::vector<Matrix>& Z, const PathEnsemble& ensemble,
                              const DensityWeights* weights, const RegressionConfig& config,
                              double quantile = 0.995);

struct ReverseHolderEstimate {
  double value = 0.0;
  Vector per_step;
  bool blow_up = false;
};

/// Empirical reverse-Holder constant: max over grid times tau of the upper
/// quantile of the fitted E[(E_T / E_tau)^p | F_tau]; the tau = 0 entry equals
/// the sample mean of E_T^p.
ReverseHolderEstimate reverse_holder_diagnostic(const DensityWeights& weights,
                                                const PathEnsemble& ensemble, double p,
                                                const RegressionConfig& config,
                                                double quantile = 0.995);

struct KlEstimate {
  double kl = 0.0;
  double tv_bound = 0.0;
  double std_error = 0.0;
};

/// H(P^a | P^b) = E^a[int |theta_a - theta_b|^2 ds] / 2 and the Pinsker bound
/// sqrt(H / 2), clamped to [0, 1].
KlEstimate kl_estimate(const std::vector<Matrix>& theta_a, const std::vector<Matrix>& theta_b,
                       const DensityWeights& weights_a, const TimeGrid& grid);

/// Upper empirical quantile of a sample (linear interpolation).
double upper_quantile(const Eigen::Ref<const Vector>& sample, double level);

}  // namespace wmfg
